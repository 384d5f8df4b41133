"""Relay discovery and selection, the pruning rule, relay buffers, half-duplex gating."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import LinkTable
from .deployment import ROLE_DL, ROLE_IDLE

NO_RELAY = -1


class ContractViolation(RuntimeError):
    """An internal invariant of the relay system was broken."""


@dataclass(frozen=True)
class RelayAssignment:
    edge_ue: int
    relay_ue: int  # NO_RELAY for a direct connection
    direction: str  # "DL" or "UL"
    access_pl: float = float("nan")
    access_tx_power_edge: float = float("nan")
    access_tx_power_relay: float = float("nan")

    @property
    def relayed(self) -> bool:
        return self.relay_ue != NO_RELAY


def find_candidates(edge_ue: int, table: LinkTable, p_acc_max: float = 85.0, same_sector: bool = True,
                    idle_only: bool = True) -> np.ndarray:
    """UE ids that may relay for ``edge_ue`` (the edge itself excluded).

    A candidate is within ``p_acc_max`` of D2D pathloss and, by default, served
    by the same sector and idle.
    """
    return find_candidates_many([edge_ue], table, p_acc_max, same_sector, idle_only)[0]


def find_candidates_many(edges, table: LinkTable, p_acc_max: float = 85.0, same_sector: bool = True,
                         idle_only: bool = True, chunk: int = 64) -> list[np.ndarray]:
    layout = table.layout
    edges = np.asarray(edges, dtype=np.int64)
    allowed = np.ones(layout.n_ues, dtype=bool)
    if idle_only:
        allowed &= layout.ue_roles == ROLE_IDLE
    out: list[np.ndarray] = []
    for start in range(0, len(edges), chunk):
        block = edges[start:start + chunk]
        pl = table.d2d_pathloss(block, None)
        ok = (pl < p_acc_max) & allowed[None, :]
        if same_sector:
            serving = layout.serving_sector
            ok &= serving[None, :] == serving[block][:, None]
        ok[np.arange(len(block)), block] = False
        out.extend(np.flatnonzero(row) for row in ok)
    return out


def select_relay(edge_ue: int, candidates, dl_sinr: np.ndarray) -> int:
    """Candidate with the highest DL SINR if it beats the edge's own, else ``NO_RELAY``.

    Ties go to the lowest UE id.
    """
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    if len(candidates) == 0:
        return NO_RELAY
    best = candidates[int(np.argmax(dl_sinr[candidates]))]
    return int(best) if dl_sinr[best] > dl_sinr[edge_ue] else NO_RELAY


def assign_relays(table: LinkTable, dl_sinr: np.ndarray, access_power: np.ndarray,
                  p_acc_max: float = 85.0, same_sector: bool = True,
                  idle_only: bool = True) -> list[RelayAssignment]:
    """Run candidate discovery and selection for every active UE."""
    layout = table.layout
    edges = np.flatnonzero(layout.ue_roles != ROLE_IDLE)
    cands = find_candidates_many(edges, table, p_acc_max, same_sector, idle_only)
    out = []
    for edge, cset in zip(edges, cands):
        relay = select_relay(int(edge), cset, dl_sinr)
        direction = "DL" if layout.ue_roles[edge] == ROLE_DL else "UL"
        if relay == NO_RELAY:
            out.append(RelayAssignment(int(edge), NO_RELAY, direction))
        else:
            pl = float(table.d2d_pathloss_pairs([edge], [relay])[0])
            out.append(RelayAssignment(int(edge), relay, direction, pl,
                                       float(access_power[edge]), float(access_power[relay])))
    return out


@dataclass(frozen=True)
class RateEstimate:
    """Per-edge warm-up measurements feeding the pruning rule (bits per subframe)."""

    edge_ue: int
    grant_share: float
    direct_rate: float
    backhaul_rate: float
    access_rate: float

    @property
    def direct(self) -> float:
        return self.grant_share * self.direct_rate

    @property
    def through_relay(self) -> float:
        return min(self.grant_share * self.backhaul_rate, self.access_rate)


def prune_relays(assignments: list[RelayAssignment], estimates: dict[int, RateEstimate],
                 threshold: float = 0.05) -> list[RelayAssignment]:
    """Drop relays whose end-to-end estimate is under ``(1 + threshold)`` x the direct one."""
    out = []
    for a in assignments:
        est = estimates.get(a.edge_ue)
        if a.relayed and est is not None and est.through_relay < (1.0 + threshold) * est.direct:
            out.append(RelayAssignment(a.edge_ue, NO_RELAY, a.direction))
        else:
            out.append(a)
    return out


@dataclass
class RelayBuffer:
    capacity: float
    level: float = 0.0
    direction: str = "DL"
    owner_edge: int = -1
    total_in: float = 0.0
    total_out: float = 0.0

    def step(self, bits_in: float, bits_out: float) -> tuple[float, float]:
        """Advance one subframe; returns (drained, admitted).

        The drain reads only from the level held at the start of the subframe;
        the fill is then admitted up to the remaining capacity.
        """
        if bits_in < 0 or bits_out < 0:
            raise ContractViolation("negative bit count in buffer_step")
        drained = min(bits_out, self.level)
        admitted = min(bits_in, self.capacity - (self.level - drained))
        self.level = self.level - drained + admitted
        self.total_in += admitted
        self.total_out += drained
        return drained, admitted

    @property
    def feeder_eligible(self) -> bool:
        return self.level < self.capacity

    @property
    def drainer_eligible(self) -> bool:
        return self.level > 0


def buffer_step(level, capacity, bits_in, bits_out):
    """Array form of :meth:`RelayBuffer.step`; returns (level', drained, admitted)."""
    level = np.asarray(level, dtype=float)
    bits_in = np.asarray(bits_in, dtype=float)
    bits_out = np.asarray(bits_out, dtype=float)
    if np.any(bits_in < 0) or np.any(bits_out < 0):
        raise ContractViolation("negative bit count in buffer_step")
    drained = np.minimum(bits_out, level)
    admitted = np.minimum(bits_in, capacity - (level - drained))
    return level - drained + admitted, drained, admitted


def half_duplex_gate(link_tx, link_rx, ul_granted) -> np.ndarray:
    """True where neither endpoint of an access link holds a WAN UL grant.

    ``ul_granted`` is a boolean mask over UE ids (or any index space the link
    endpoints use).
    """
    ul_granted = np.asarray(ul_granted, dtype=bool)
    return ~(ul_granted[np.asarray(link_tx)] | ul_granted[np.asarray(link_rx)])


def write_assignments_csv(assignments: list[RelayAssignment], dl_sinr: np.ndarray, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_ue", "relay_ue", "direction", "access_pl_db", "edge_dl_sinr_db", "relay_dl_sinr_db"])
        for a in assignments:
            relay_sinr = f"{dl_sinr[a.relay_ue]:.6g}" if a.relayed else ""
            access_pl = f"{a.access_pl:.6g}" if a.relayed else ""
            w.writerow([a.edge_ue, a.relay_ue, a.direction, access_pl, f"{dl_sinr[a.edge_ue]:.6g}", relay_sinr])
