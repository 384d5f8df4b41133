"""Hexagonal multi-cell layout with toroidal wrap-around and UE drops.

Sites sit on a hex lattice with inter-site distance ``isd``. Each site carries
three sectors with boresights at 0, 120 and 240 degrees; the coverage area of a
sector is a hexagon of circumradius ``isd / 3`` with one vertex at the site.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SECTOR_AZIMUTHS = (0.0, 120.0, 240.0)

ROLE_IDLE = 0
ROLE_DL = 1
ROLE_UL = 2
ROLE_NAMES = {ROLE_IDLE: "idle", ROLE_DL: "active-DL", ROLE_UL: "active-UL"}

# lattice basis (units of isd): neighbours at 60k degrees, the orientation in
# which the sector hexagons (site at a vertex, boresight at 0/120/240) tile
_A1 = np.array([1.0, 0.0])
_A2 = np.array([0.5, np.sqrt(3.0) / 2.0])

# (i, j) shift of the wrapped copies in lattice coordinates, per supported tier count
_WRAP_SHIFT = {1: (2, 1), 2: (3, 2)}


class ConfigurationError(ValueError):
    """Raised for invalid scenario parameters."""


@dataclass(frozen=True)
class NetworkLayout:
    isd: float
    sites: np.ndarray  # (n_sites, 2)
    wrap_vectors: np.ndarray  # (n_wrap, 2); row 0 is the identity translation
    enb_height: float = 32.0
    ue_height: float = 1.5
    ue_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ue_roles: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    ue_drop_sector: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    serving_sector: np.ndarray | None = None

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_sectors(self) -> int:
        return 3 * len(self.sites)

    @property
    def n_ues(self) -> int:
        return len(self.ue_positions)

    @property
    def sector_site(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_sites), 3)

    @property
    def sector_azimuth(self) -> np.ndarray:
        return np.tile(np.asarray(SECTOR_AZIMUTHS), self.n_sites)

    @property
    def sector_positions(self) -> np.ndarray:
        return self.sites[self.sector_site]

    def sector_centers(self) -> np.ndarray:
        """Centres of the sector hexagons, ``isd/3`` along each boresight."""
        az = np.radians(self.sector_azimuth)
        return self.sector_positions + (self.isd / 3.0) * np.column_stack([np.cos(az), np.sin(az)])

    def with_ues(self, positions, roles, drop_sector) -> "NetworkLayout":
        return NetworkLayout(
            isd=self.isd,
            sites=self.sites,
            wrap_vectors=self.wrap_vectors,
            enb_height=self.enb_height,
            ue_height=self.ue_height,
            ue_positions=np.asarray(positions, dtype=float).reshape(-1, 2),
            ue_roles=np.asarray(roles, dtype=np.int8),
            ue_drop_sector=np.asarray(drop_sector, dtype=np.int64),
        )

    def with_serving(self, serving: np.ndarray) -> "NetworkLayout":
        return NetworkLayout(
            isd=self.isd,
            sites=self.sites,
            wrap_vectors=self.wrap_vectors,
            enb_height=self.enb_height,
            ue_height=self.ue_height,
            ue_positions=self.ue_positions,
            ue_roles=self.ue_roles,
            ue_drop_sector=self.ue_drop_sector,
            serving_sector=np.asarray(serving, dtype=np.int64),
        )


def build_layout(isd: float = 500.0, tiers: int = 2, enb_height: float = 32.0,
                 ue_height: float = 1.5) -> NetworkLayout:
    """Place ``1 + 3*tiers*(tiers+1)`` sites and the matching wrap translations."""
    if isd <= 0:
        raise ConfigurationError(f"deployment.isd must be positive, got {isd}")
    if tiers != 0 and tiers not in _WRAP_SHIFT:
        raise ConfigurationError(f"deployment.tiers={tiers} has no wrap-around scheme (use 0, 1 or 2)")

    coords = []
    for q in range(-tiers, tiers + 1):
        for r in range(-tiers, tiers + 1):
            if abs(q + r) <= tiers:
                coords.append((q, r))
    # ring order: centre first, then by ring and angle
    coords.sort(key=lambda c: (max(abs(c[0]), abs(c[1]), abs(c[0] + c[1])),
                               np.arctan2(*(c[0] * _A1 + c[1] * _A2)[::-1]) % (2 * np.pi)))
    sites = np.array([isd * (q * _A1 + r * _A2) for q, r in coords])

    wraps = [np.zeros(2)]
    if tiers > 0:
        i, j = _WRAP_SHIFT[tiers]
        base = isd * (i * _A1 + j * _A2)
        for k in range(6):
            a = np.radians(60.0 * k)
            rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
            wraps.append(rot @ base)
    return NetworkLayout(isd=float(isd), sites=sites, wrap_vectors=np.array(wraps),
                         enb_height=enb_height, ue_height=ue_height)


def wrap_displacement(a: np.ndarray, b: np.ndarray, layout: NetworkLayout) -> np.ndarray:
    """Shortest displacement ``b - a`` over all wrap translations.

    ``a`` and ``b`` broadcast against each other; the trailing axis holds x, y.
    """
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    best = d
    best_sq = np.einsum("...i,...i->...", d, d)
    for v in layout.wrap_vectors[1:]:
        cand = d + v
        sq = np.einsum("...i,...i->...", cand, cand)
        closer = sq < best_sq
        if np.any(closer):
            best = np.where(closer[..., None], cand, best)
            best_sq = np.where(closer, sq, best_sq)
    return best


def wrap_distance(a, b, layout: NetworkLayout) -> np.ndarray | float:
    """Minimum Euclidean distance between ``a`` and ``b`` over wrap translations."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    best_sq = np.einsum("...i,...i->...", d, d)
    for v in layout.wrap_vectors[1:]:
        cand = d + v
        best_sq = np.minimum(best_sq, np.einsum("...i,...i->...", cand, cand))
    out = np.sqrt(best_sq)
    return float(out) if out.ndim == 0 else out


def _hexagon_vertices(center: np.ndarray, radius: float, azimuth_deg: float) -> np.ndarray:
    angles = np.radians(azimuth_deg + 60.0 * np.arange(6))
    return center + radius * np.column_stack([np.cos(angles), np.sin(angles)])


def sector_polygon(layout: NetworkLayout, sector: int) -> np.ndarray:
    """Vertices of the hexagonal coverage area of ``sector`` (counter-clockwise)."""
    return _hexagon_vertices(layout.sector_centers()[sector], layout.isd / 3.0,
                             float(layout.sector_azimuth[sector]))


def _in_hexagon(points: np.ndarray, radius: float, azimuth_deg: float) -> np.ndarray:
    # hexagon centred at the origin with a vertex at ``azimuth_deg``; the edge
    # normals sit at azimuth + 30 + 60k and the apothem is radius*sqrt(3)/2
    apothem = radius * np.sqrt(3.0) / 2.0
    inside = np.ones(len(points), dtype=bool)
    for k in range(3):
        a = np.radians(azimuth_deg + 30.0 + 60.0 * k)
        proj = points @ np.array([np.cos(a), np.sin(a)])
        inside &= np.abs(proj) <= apothem
    return inside


def sample_in_sector(layout: NetworkLayout, sector: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points uniformly over the sector hexagon by rejection."""
    radius = layout.isd / 3.0
    az = float(layout.sector_azimuth[sector])
    center = layout.sector_centers()[sector]
    out = np.empty((0, 2))
    while len(out) < n:
        need = n - len(out)
        cand = rng.uniform(-radius, radius, size=(int(need * 1.4) + 8, 2))
        cand = cand[_in_hexagon(cand, radius, az)]
        out = np.vstack([out, cand[:need]])
    return center + out


def drop_ues(layout: NetworkLayout, idle: int = 100, dl_active: int = 10, ul_active: int = 10,
             rng: np.random.Generator | None = None, max_per_sector: int = 1000) -> NetworkLayout:
    """Drop UEs uniformly over every sector area and label their roles.

    UE ids are contiguous per drop sector. Within a sector the DL/UL/idle labels
    are a uniform random permutation.
    """
    if min(idle, dl_active, ul_active) < 0:
        raise ConfigurationError("per-sector UE counts must be non-negative")
    per_sector = idle + dl_active + ul_active
    if per_sector > max_per_sector:
        raise ConfigurationError(
            f"{per_sector} UEs per sector exceeds deployment.max_ues_per_sector={max_per_sector}")
    rng = np.random.default_rng() if rng is None else rng
    positions, roles, drop_sector = [], [], []
    base_roles = np.array([ROLE_DL] * dl_active + [ROLE_UL] * ul_active + [ROLE_IDLE] * idle, dtype=np.int8)
    for s in range(layout.n_sectors):
        if per_sector == 0:
            continue
        positions.append(sample_in_sector(layout, s, per_sector, rng))
        roles.append(rng.permutation(base_roles))
        drop_sector.append(np.full(per_sector, s))
    if not positions:
        return layout.with_ues(np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    return layout.with_ues(np.vstack(positions), np.concatenate(roles), np.concatenate(drop_sector))


def associate(wan_gain: np.ndarray) -> np.ndarray:
    """Serving sector per UE: lowest coupling loss, i.e. highest total gain.

    ``np.argmax`` returns the first maximum, which is the lowest sector index on ties.
    """
    wan_gain = np.asarray(wan_gain)
    if wan_gain.ndim == 1:
        return np.asarray(np.argmax(wan_gain))
    return np.argmax(wan_gain, axis=1)


def write_layout_csv(layout: NetworkLayout, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "x", "y", "role", "serving_sector", "azimuth"])
        for s in range(layout.n_sectors):
            x, y = layout.sector_positions[s]
            w.writerow(["sector", s, f"{x:.6g}", f"{y:.6g}", "", "", f"{layout.sector_azimuth[s]:.6g}"])
        serving = layout.serving_sector
        for u in range(layout.n_ues):
            x, y = layout.ue_positions[u]
            sv = "" if serving is None else int(serving[u])
            w.writerow(["ue", u, f"{x:.6g}", f"{y:.6g}", ROLE_NAMES[int(layout.ue_roles[u])], sv, ""])
