"""Proportional-fair WAN scheduling and SIR-threshold yielding among access links."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PfState:
    """Exponentially averaged throughput per flow (bits/subframe)."""

    average: np.ndarray
    time_constant: float = 100.0

    @classmethod
    def from_first_rates(cls, rates, time_constant: float = 100.0) -> "PfState":
        # a zero first rate would make the metric undefined
        return cls(np.maximum(np.asarray(rates, dtype=float), 1e-9), time_constant)

    def update(self, served_bits) -> None:
        beta = 1.0 / self.time_constant
        self.average = (1.0 - beta) * self.average + beta * np.asarray(served_bits, dtype=float)
        np.maximum(self.average, 1e-9, out=self.average)


def pf_select(sectors, candidate_rate, average, flow_ids, n_sectors: int) -> np.ndarray:
    """Per sector, the flow index maximizing ``candidate_rate / average`` (-1 if none).

    Ties go to the lowest ``flow_ids`` value.
    """
    sectors = np.asarray(sectors, dtype=np.int64)
    grant = np.full(n_sectors, -1, dtype=np.int64)
    if len(sectors) == 0:
        return grant
    metric = np.asarray(candidate_rate, dtype=float) / np.asarray(average, dtype=float)
    order = np.lexsort((np.asarray(flow_ids), -metric, sectors))
    first = np.ones(len(order), dtype=bool)
    first[1:] = sectors[order][1:] != sectors[order][:-1]
    winners = order[first]
    grant[sectors[winners]] = winners
    return grant


def pf_schedule(sectors, candidate_rate, state: PfState, flow_ids, n_sectors: int,
                served_bits=None) -> np.ndarray:
    """Grant one flow per sector and update the PF averages.

    ``served_bits`` defaults to the candidate rate of the granted flows.
    """
    grant = pf_select(sectors, candidate_rate, state.average, flow_ids, n_sectors)
    served = np.zeros(len(state.average))
    won = grant[grant >= 0]
    if served_bits is None:
        served[won] = np.asarray(candidate_rate, dtype=float)[won]
    else:
        served[won] = np.asarray(served_bits, dtype=float)[won]
    state.update(served)
    return grant


def build_conflict_graph(signal_db, cross_db, gamma_acc: float) -> np.ndarray:
    """Conflicting link pairs ``(i, j)`` with ``i < j``.

    ``signal_db[i]`` is link i's received power at its own receiver and
    ``cross_db[i, j]`` the power of link j's transmitter at link i's receiver.
    Two links conflict if either pairwise SIR falls below ``gamma_acc``.
    """
    signal_db = np.asarray(signal_db, dtype=float)
    n = len(signal_db)
    if n < 2 or gamma_acc == -np.inf:
        return np.zeros((0, 2), dtype=np.int64)
    sir = signal_db[:, None] - np.asarray(cross_db, dtype=float)
    bad = sir < gamma_acc
    bad = bad | bad.T
    i, j = np.nonzero(np.triu(bad, k=1))
    return np.column_stack([i, j]).astype(np.int64)


def yield_decisions(pairs, eligible, rng: np.random.Generator, rule: str = "pairwise") -> np.ndarray:
    """Transmit mask for the links after resolving conflicts among eligible ones.

    ``pairwise``: every conflicting pair flips its own fair coin for who yields.
    ``priority``: one random priority per link; a link transmits iff it beats
    every eligible neighbour.
    The number of random draws does not depend on ``eligible``.
    """
    eligible = np.asarray(eligible, dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    transmit = eligible.copy()
    if rule == "pairwise":
        coin = rng.random(len(pairs)) < 0.5
        if len(pairs) == 0:
            return transmit
        live = eligible[pairs[:, 0]] & eligible[pairs[:, 1]]
        loser = np.where(coin, pairs[:, 0], pairs[:, 1])[live]
        transmit[loser] = False
        return transmit
    if rule == "priority":
        prio = rng.random(len(eligible))
        if len(pairs) == 0:
            return transmit
        live = eligible[pairs[:, 0]] & eligible[pairs[:, 1]]
        a, b = pairs[live, 0], pairs[live, 1]
        loser = np.where(prio[a] < prio[b], a, b)
        transmit[loser] = False
        return transmit
    raise ValueError(f"unknown yield rule {rule!r}")
