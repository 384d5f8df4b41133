"""Standalone studies: relay-replacement upper bound and UL-spectrum snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import pathloss_d2d, wan_gain_matrix
from .config import ScenarioConfig
from .deployment import ROLE_DL, ROLE_UL, NetworkLayout, wrap_distance
from .engine import DropStreams, World, build_world, drop_streams
from .metrics import lower_percentile
from .power import db2lin, lin2db
from .relaying import find_candidates_many


# ---------------------------------------------------------------------------
# upper bound


@dataclass
class UpperBoundResult:
    dl_before: np.ndarray
    dl_after: np.ndarray
    ul_before: np.ndarray
    ul_after: np.ndarray
    ici_before: np.ndarray  # mW per scheduled-UE sample
    ici_after: np.ndarray
    replaced: np.ndarray  # per active UE (DL first, then UL): True if a neighbour took over

    @staticmethod
    def concat(parts: list["UpperBoundResult"]) -> "UpperBoundResult":
        return UpperBoundResult(*(np.concatenate([getattr(p, f) for p in parts])
                                  for f in UpperBoundResult.__dataclass_fields__))


def best_neighbours(world: World, ues: np.ndarray, p_acc_max: float) -> np.ndarray:
    """Best-DL-SINR UE among each UE's D2D neighbours (any sector, any role), or the UE itself."""
    neigh = find_candidates_many(ues, world.table, p_acc_max, same_sector=False, idle_only=False)
    out = np.array(ues, dtype=np.int64, copy=True)
    for k, (u, cand) in enumerate(zip(ues, neigh)):
        if len(cand):
            best = cand[int(np.argmax(world.dl_sinr[cand]))]
            if world.dl_sinr[best] > world.dl_sinr[u]:
                out[k] = best
    return out


def _rotation_sinr(world: World, groups: list[np.ndarray], tx_of: np.ndarray, draws: np.ndarray):
    """Per-UE served-time average UL SINR (dB) and ICI samples under random rotations.

    ``groups[g]`` lists positions (into ``tx_of``) scheduled by group ``g``;
    ``draws[r, g]`` picks the scheduled member at rotation ``r``.
    """
    cfg = world.cfg.power
    serving = world.layout.serving_sector
    gain = db2lin(world.table.wan_gain[tx_of])
    p = db2lin(world.p_ul[tx_of])
    sig_sum = np.zeros(len(tx_of))
    count = np.zeros(len(tx_of))
    ici_samples = []
    noise = db2lin(cfg.enb_noise)
    live = [g for g in range(len(groups)) if len(groups[g])]
    for r in range(draws.shape[0]):
        pos = np.array([groups[g][draws[r, g] % len(groups[g])] for g in live], dtype=np.int64)
        sec = serving[tx_of[pos]]
        rx = p[pos, None] * gain[pos][:, sec]  # [i, j]: transmitter i at the sector of j
        sig = np.diag(rx).copy()
        ici = rx.sum(axis=0) - sig
        sinr = np.minimum(lin2db(sig / (ici + noise)), cfg.sinr_cap)
        np.add.at(sig_sum, pos, db2lin(sinr))
        np.add.at(count, pos, 1)
        ici_samples.append(ici)
    with np.errstate(divide="ignore", invalid="ignore"):
        avg = np.where(count > 0, np.minimum(lin2db(sig_sum / np.maximum(count, 1)), cfg.sinr_cap), np.nan)
    return avg, np.concatenate(ici_samples)


def upper_bound_drop(cfg: ScenarioConfig, drop: int) -> UpperBoundResult:
    streams = drop_streams(cfg.run.seed, drop)
    world = build_world(cfg, streams)
    lay = world.layout
    dl_ues = np.flatnonzero(lay.ue_roles == ROLE_DL)
    ul_ues = np.flatnonzero(lay.ue_roles == ROLE_UL)
    p_acc_max = cfg.relay.p_acc_max
    dl_rep = best_neighbours(world, dl_ues, p_acc_max)
    ul_rep = best_neighbours(world, ul_ues, p_acc_max)

    # one scheduled UL UE per sector (grouped by the original UE's sector) per rotation
    sectors = lay.serving_sector[ul_ues]
    groups = [np.flatnonzero(sectors == s) for s in range(lay.n_sectors)]
    draws = streams.study.integers(0, 1 << 30, size=(cfg.upper_bound.rotations, len(groups)))
    ul_before, ici_before = _rotation_sinr(world, groups, ul_ues, draws)
    ul_after, ici_after = _rotation_sinr(world, groups, ul_rep, draws)
    return UpperBoundResult(
        dl_before=world.dl_sinr[dl_ues],
        dl_after=world.dl_sinr[dl_rep],
        ul_before=ul_before,
        ul_after=ul_after,
        ici_before=ici_before,
        ici_after=ici_after,
        replaced=np.concatenate([dl_rep != dl_ues, ul_rep != ul_ues]),
    )


def upper_bound_study(cfg: ScenarioConfig, progress=None) -> UpperBoundResult:
    """Replace every active UE by its best-DL-SINR neighbour; SINR before/after over all drops.

    Access-to-eNB interference is absent by construction.
    """
    parts = []
    for d in range(cfg.run.drops):
        parts.append(upper_bound_drop(cfg, d))
        if progress:
            progress(f"upper-bound: drop {d + 1}/{cfg.run.drops} done")
    return UpperBoundResult.concat(parts)


def median_improvement(before: np.ndarray, after: np.ndarray) -> float:
    """Shift between the medians (lower empirical quantile) of two SINR samples, in dB."""
    b = np.sort(before[np.isfinite(before)])
    a = np.sort(after[np.isfinite(after)])
    return float(lower_percentile(a, 0.5) - lower_percentile(b, 0.5))


# ---------------------------------------------------------------------------
# snapshots


@dataclass
class SnapshotResult:
    reference: np.ndarray
    nearest_distance: np.ndarray  # m, one per subframe (inf if no transmitter)
    received_power: np.ndarray  # dBm incl. UE noise floor, one per subframe
    grid_xy: np.ndarray | None = None
    ul_grid_dbm: np.ndarray | None = None
    dl_grid_dbm: np.ndarray | None = None

    @property
    def mean_nearest_distance(self) -> float:
        d = self.nearest_distance[np.isfinite(self.nearest_distance)]
        return float(d.mean()) if len(d) else float("inf")


def cluster_grid(layout: NetworkLayout, resolution: float) -> np.ndarray:
    """Regular grid over the wrapped deployment region (points closer to a site than to any image)."""
    span = np.abs(layout.sites).max() + layout.isd
    axis = np.arange(-span, span + resolution / 2, resolution)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    plain = np.min(np.linalg.norm(pts[:, None, :] - layout.sites[None, :, :], axis=2), axis=1)
    wrapped = np.min(wrap_distance(layout.sites[None, :, :], pts[:, None, :], layout), axis=1)
    return pts[plain <= wrapped + 1e-9]


def _ul_transmitters(world: World, rng: np.random.Generator, groups: list[np.ndarray]) -> np.ndarray:
    picks = rng.integers(0, 1 << 30, size=len(groups))
    return np.array([g[picks[k] % len(g)] for k, g in enumerate(groups) if len(g)], dtype=np.int64)


def _ul_power_at(world: World, tx: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Total UL-spectrum power (dBm) at ``points``, including the UE noise floor."""
    noise = db2lin(world.cfg.power.ue_noise)
    if len(tx) == 0:
        return np.full(len(points), world.cfg.power.ue_noise)
    d = wrap_distance(world.layout.ue_positions[tx][None, :, :], points[:, None, :], world.layout)
    rx = db2lin(world.p_ul[tx][None, :] - pathloss_d2d(d)).sum(axis=1)
    return lin2db(rx + noise)


def snapshot_drop(cfg: ScenarioConfig, drop: int, with_grids: bool = False) -> SnapshotResult:
    streams: DropStreams = drop_streams(cfg.run.seed, drop)
    world = build_world(cfg.replace(channel={"grid_mode": "on"}) if with_grids else cfg, streams)
    lay = world.layout
    ul_ues = np.flatnonzero(lay.ue_roles == ROLE_UL)
    groups = [ul_ues[lay.serving_sector[ul_ues] == s] for s in range(lay.n_sectors)]
    ref = np.array([[lay.isd / 3.0, 0.0]])
    nearest = np.empty(cfg.snapshot.subframes)
    power = np.empty(cfg.snapshot.subframes)
    first_tx = None
    for k in range(cfg.snapshot.subframes):
        tx = _ul_transmitters(world, streams.study, groups)
        if first_tx is None:
            first_tx = tx
        if len(tx):
            nearest[k] = np.min(wrap_distance(ref, lay.ue_positions[tx], lay))
        else:
            nearest[k] = np.inf
        power[k] = _ul_power_at(world, tx, ref)[0]
    result = SnapshotResult(ref[0], nearest, power)
    if with_grids:
        pts = cluster_grid(lay, cfg.snapshot.grid_resolution)
        result.grid_xy = pts
        result.ul_grid_dbm = _ul_power_at(world, first_tx, pts)
        shadow = world.shadow.at(pts)
        gain = wan_gain_matrix(lay, pts, shadow, cfg.channel.antenna)
        total = db2lin(cfg.power.enb_tx_power + gain).sum(axis=1) + db2lin(cfg.power.ue_noise)
        result.dl_grid_dbm = lin2db(total)
    return result


def snapshot_study(cfg: ScenarioConfig, progress=None) -> SnapshotResult:
    """Nearest-UL-transmitter distance and UL power at (ISD/3, 0) over all drops; grids from drop 0."""
    parts = []
    for d in range(cfg.run.drops):
        parts.append(snapshot_drop(cfg, d, with_grids=(d == 0)))
        if progress:
            progress(f"snapshot: drop {d + 1}/{cfg.run.drops} done")
    first = parts[0]
    return SnapshotResult(first.reference, np.concatenate([p.nearest_distance for p in parts]),
                          np.concatenate([p.received_power for p in parts]),
                          first.grid_xy, first.ul_grid_dbm, first.dl_grid_dbm)
