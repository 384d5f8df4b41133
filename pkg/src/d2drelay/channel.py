"""Large-scale channel: pathloss, sector antenna pattern, correlated shadowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .deployment import ConfigurationError, NetworkLayout, wrap_displacement, wrap_distance


def pathloss_wan(d):
    """eNB-UE distance-dependent pathloss in dB, ``35.3 + 37.6 log10(d)``."""
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    out = 35.3 + 37.6 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def pathloss_d2d(d):
    """UE-UE pathloss in dB (three-branch model, linear between 44 m and 64 m)."""
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    near = 38.47 + 20.0 * np.log10(d)
    mid = 71.34 + 2.29 * (d - 44.0)
    far = 44.85 + 40.0 * np.log10(d)
    out = np.where(d <= 44.0, near, np.where(d <= 64.0, mid, far))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class AntennaConfig:
    hpbw_h: float = 70.0  # degrees
    front_to_back: float = 25.0  # A_m, dB
    hpbw_v: float = 10.0  # degrees
    sla_v: float = 20.0  # dB
    downtilt: float = 15.0  # degrees
    element_gain: float = 14.0  # dBi


def antenna_pattern(phi_deg, theta_deg, cfg: AntennaConfig = AntennaConfig()):
    """Combined 3-D sector pattern in dBi for azimuth offset ``phi`` and elevation ``theta``."""
    phi = (np.asarray(phi_deg, dtype=float) + 180.0) % 360.0 - 180.0
    theta = np.asarray(theta_deg, dtype=float)
    a_h = -np.minimum(12.0 * (phi / cfg.hpbw_h) ** 2, cfg.front_to_back)
    a_v = -np.minimum(12.0 * ((theta - cfg.downtilt) / cfg.hpbw_v) ** 2, cfg.sla_v)
    out = -np.minimum(-(a_h + a_v), cfg.front_to_back) + cfg.element_gain
    return float(out) if out.ndim == 0 else out


def antenna_gain(layout: NetworkLayout, sectors, points, cfg: AntennaConfig = AntennaConfig()):
    """Antenna gain (dBi) of ``sectors`` toward ``points``; arrays broadcast.

    Azimuth is measured on the wrapped displacement, elevation from the eNB
    height down to the UE height.
    """
    sectors = np.asarray(sectors)
    site_pos = layout.sector_positions[sectors]
    disp = wrap_displacement(site_pos, points, layout)
    horiz = np.hypot(disp[..., 0], disp[..., 1])
    phi = np.degrees(np.arctan2(disp[..., 1], disp[..., 0])) - layout.sector_azimuth[sectors]
    theta = np.degrees(np.arctan2(layout.enb_height - layout.ue_height, horiz))
    return antenna_pattern(phi, theta, cfg)


# ---------------------------------------------------------------------------
# shadowing


@dataclass
class ShadowField:
    """Shadowing in dB per (point, site), plus an evaluator for new points in grid mode."""

    values: np.ndarray  # (n_points, n_sites)
    sigma: float
    d_corr: float
    cross_corr: float
    at: Callable[[np.ndarray], np.ndarray] | None = None

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "site", "shadow_db"])
            for p in range(self.values.shape[0]):
                for s in range(self.values.shape[1]):
                    w.writerow([p, s, f"{self.values[p, s]:.6g}"])


def _combine(z: np.ndarray, sigma: float, cross_corr: float) -> np.ndarray:
    # z[..., 0] is the common field, z[..., 1:] the per-site fields
    return sigma * (np.sqrt(cross_corr) * z[..., :1] + np.sqrt(1.0 - cross_corr) * z[..., 1:])


def repair_correlation(corr: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and rescale back to unit diagonal.

    Returns a factor ``F`` with ``F @ F.T`` the repaired correlation matrix.
    """
    w, v = np.linalg.eigh(corr)
    w = np.clip(w, 0.0, None)
    f = v * np.sqrt(w)
    diag = np.einsum("ij,ij->i", f, f)
    return f / np.sqrt(diag)[:, None]


class DenseShadowGenerator:
    """Exact Gaussian field on a fixed point set via eigen-factorization.

    The factor is computed once; every ``sample`` call draws a fresh realization.
    """

    def __init__(self, points: np.ndarray, layout: NetworkLayout, d_corr: float):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        dist = wrap_distance(points[:, None, :], points[None, :, :], layout)
        self.factor = repair_correlation(np.exp(-np.asarray(dist) / d_corr))
        self.n_sites = layout.n_sites

    def sample_unit(self, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal((self.factor.shape[1], self.n_sites + 1))
        return self.factor @ xi


def _reduced_torus_distance(disp: np.ndarray, basis: np.ndarray, basis_inv: np.ndarray) -> np.ndarray:
    frac = disp @ basis_inv.T
    frac -= np.round(frac)
    best = None
    for m in (-1, 0, 1):
        for n in (-1, 0, 1):
            cand = (frac + np.array([m, n])) @ basis.T
            d = np.hypot(cand[..., 0], cand[..., 1])
            best = d if best is None else np.minimum(best, d)
    return best


class GridShadowGenerator:
    """Gaussian field on a regular grid covering one wrap tile, interpolated to points.

    The wrap tile is the parallelogram spanned by two adjacent wrap vectors; the
    torus correlation over a regular grid is block-circulant and factorizes with
    a 2-D FFT. Bilinear interpolation loses variance inside a cell; an
    independent nugget term restores it, which keeps the correlation at lags of
    a few grid cells unbiased (rescaling instead would inflate it).
    """

    def __init__(self, layout: NetworkLayout, d_corr: float, spacing: float | None = None):
        if len(layout.wrap_vectors) < 3:
            raise ConfigurationError("grid shadowing needs a wrap-around layout (tiers >= 1)")
        spacing = d_corr / 4.0 if spacing is None else spacing
        self.basis = np.column_stack([layout.wrap_vectors[1], layout.wrap_vectors[2]])
        self.basis_inv = np.linalg.inv(self.basis)
        length = np.linalg.norm(layout.wrap_vectors[1])
        self.n = int(np.ceil(length / spacing))
        self.n_sites = layout.n_sites
        idx = np.arange(self.n) / self.n
        frac = np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1)
        disp = frac @ self.basis.T
        row = np.exp(-_reduced_torus_distance(disp, self.basis, self.basis_inv) / d_corr)
        lam = np.real(np.fft.fft2(row))
        lam = np.clip(lam, 0.0, None)
        lam /= lam.mean()  # unit diagonal after clipping
        self.sqrt_lam = np.sqrt(lam)
        self.cov = np.real(np.fft.ifft2(lam))  # repaired covariance as a function of grid offset

    def sample_grid(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` independent unit fields on the grid, shape (count, n, n)."""
        out = np.empty((count, self.n, self.n))
        for k in range(0, count, 2):
            w = rng.standard_normal((self.n, self.n)) + 1j * rng.standard_normal((self.n, self.n))
            z = np.fft.fft2(self.sqrt_lam * w) / self.n
            out[k] = z.real
            if k + 1 < count:
                out[k + 1] = z.imag
        return out

    def interpolate(self, grids: np.ndarray, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Bilinear interpolation of ``grids`` at ``points`` plus a variance-completing nugget.

        Returns (n_points, count) with unit marginal variance.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        uv = (points @ self.basis_inv.T) % 1.0 * self.n
        i0 = np.floor(uv).astype(np.int64)
        f = uv - i0
        i0 %= self.n
        i1 = (i0 + 1) % self.n
        corners = [(i0[:, 0], i0[:, 1]), (i1[:, 0], i0[:, 1]), (i0[:, 0], i1[:, 1]), (i1[:, 0], i1[:, 1])]
        offsets = [(0, 0), (1, 0), (0, 1), (1, 1)]
        w = np.column_stack([(1 - f[:, 0]) * (1 - f[:, 1]), f[:, 0] * (1 - f[:, 1]),
                             (1 - f[:, 0]) * f[:, 1], f[:, 0] * f[:, 1]])
        var = np.zeros(len(points))
        for a in range(4):
            for b in range(4):
                da = (offsets[a][0] - offsets[b][0]) % self.n
                db = (offsets[a][1] - offsets[b][1]) % self.n
                var += w[:, a] * w[:, b] * self.cov[da, db]
        vals = sum(w[:, a, None] * grids[:, ci, cj].T for a, (ci, cj) in enumerate(corners))
        nugget = np.sqrt(np.clip(1.0 - var, 0.0, None))[:, None]
        return vals + nugget * rng.standard_normal(vals.shape)


def generate_shadow_field(points, layout: NetworkLayout, sigma: float = 7.0, d_corr: float = 25.0,
                          rng: np.random.Generator | None = None, cross_corr: float = 0.5,
                          dense_limit: int = 4000, grid_mode: bool | None = None,
                          grid_spacing: float | None = None) -> ShadowField:
    """Correlated log-normal shadowing toward every site at ``points``.

    Each site's value mixes a common field and a per-site field, which sets the
    same-point cross-site correlation to ``cross_corr``. ``grid_mode=None``
    picks grid mode automatically once the point count exceeds ``dense_limit``.
    """
    if sigma <= 0 or d_corr <= 0:
        raise ConfigurationError("channel.shadow_sigma and channel.d_corr must be positive")
    if not 0.0 <= cross_corr <= 1.0:
        raise ConfigurationError("channel.cross_corr must lie in [0, 1]")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng() if rng is None else rng
    use_grid = grid_mode if grid_mode is not None else len(points) > dense_limit
    if not use_grid:
        if len(points) > dense_limit:
            raise ConfigurationError(
                f"{len(points)} points exceed channel.dense_limit={dense_limit}; enable channel.grid_mode")
        z = DenseShadowGenerator(points, layout, d_corr).sample_unit(rng)
        return ShadowField(_combine(z, sigma, cross_corr), sigma, d_corr, cross_corr)

    gen = GridShadowGenerator(layout, d_corr, grid_spacing)
    grids = gen.sample_grid(rng, layout.n_sites + 1)

    def at(new_points: np.ndarray) -> np.ndarray:
        # nugget draws continue the same stream, so call order fixes the result
        return _combine(gen.interpolate(grids, new_points, rng), sigma, cross_corr)

    return ShadowField(at(points), sigma, d_corr, cross_corr, at=at)


# ---------------------------------------------------------------------------
# link table


def wan_gain_matrix(layout: NetworkLayout, points: np.ndarray, shadow_db: np.ndarray,
                    antenna: AntennaConfig = AntennaConfig()) -> np.ndarray:
    """Total eNB-point gain in dB for every (point, sector); shadow_db is per (point, site)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    sectors = np.arange(layout.n_sectors)
    dist = wrap_distance(layout.sector_positions[None, :, :], points[:, None, :], layout)
    gain = antenna_gain(layout, sectors[None, :], points[:, None, :], antenna)
    return -pathloss_wan(dist) - shadow_db[:, layout.sector_site] + gain


@dataclass(frozen=True)
class LinkTable:
    """eNB-UE gains (dense) and UE-UE pathloss (computed on demand).

    The same gains apply to DL and UL spectrum.
    """

    layout: NetworkLayout
    wan_gain: np.ndarray  # (n_ues, n_sectors) dB

    @property
    def coupling_loss(self) -> np.ndarray:
        return -self.wan_gain

    def d2d_pathloss(self, rows=None, cols=None) -> np.ndarray:
        """UE-UE pathloss (dB) for every pair in ``rows`` x ``cols`` (all UEs by default)."""
        pos = self.layout.ue_positions
        a = pos if rows is None else pos[np.asarray(rows)]
        b = pos if cols is None else pos[np.asarray(cols)]
        return pathloss_d2d(wrap_distance(a[:, None, :], b[None, :, :], self.layout))

    def d2d_pathloss_pairs(self, a, b) -> np.ndarray:
        """Elementwise UE-UE pathloss for index arrays ``a`` and ``b``."""
        pos = self.layout.ue_positions
        return pathloss_d2d(wrap_distance(pos[np.asarray(a)], pos[np.asarray(b)], self.layout))


def build_link_table(layout: NetworkLayout, shadow: ShadowField,
                     antenna: AntennaConfig = AntennaConfig()) -> LinkTable:
    if shadow.values.shape[0] != layout.n_ues:
        raise ValueError("shadow field and layout cover different point sets")
    return LinkTable(layout, wan_gain_matrix(layout, layout.ue_positions, shadow.values, antenna))
