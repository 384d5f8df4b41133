"""Per-drop metrics, order-independent merging and empirical CDFs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DropMetrics:
    """Everything one drop of the relay-system simulation reports.

    Rates are bits per subframe; SINRs are dB; eNB powers are mW.
    """

    n_subframes: int
    n_sectors: int
    dl_direct_bits: np.ndarray
    dl_relay_bits: np.ndarray
    ul_direct_bits: np.ndarray
    ul_relay_bits: np.ndarray
    dl_sinr: np.ndarray  # served-time average per UE, NaN if never served
    ul_sinr: np.ndarray
    access_sinr: np.ndarray  # average per access link while transmitting
    access_direction: np.ndarray  # 0 = relay-to-edge (DL), 1 = edge-to-relay (UL)
    active_links_per_sector: float  # mean over measured subframes and sectors
    active_links_by_subframe: np.ndarray  # (n_subframes,) total transmitting links
    enb_signal: np.ndarray
    enb_ici: np.ndarray
    enb_access: np.ndarray
    relayed_initial: int = 0
    relayed_after_prune: int = 0
    buffer_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    buffer_out: np.ndarray = field(default_factory=lambda: np.zeros(0))
    buffer_level: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dl_bits(self) -> np.ndarray:
        return self.dl_direct_bits + self.dl_relay_bits

    @property
    def ul_bits(self) -> np.ndarray:
        return self.ul_direct_bits + self.ul_relay_bits

    @property
    def dl_rate(self) -> np.ndarray:
        return self.dl_bits / self.n_subframes

    @property
    def ul_rate(self) -> np.ndarray:
        return self.ul_bits / self.n_subframes


class MetricsAccumulator:
    """Drop-keyed collection of :class:`DropMetrics`.

    Merging is a union over drop ids, and every exported statistic walks the
    drops in id order, so ``merge`` is commutative and associative bit for bit.
    """

    def __init__(self, config_key: str, drops: dict[int, DropMetrics] | None = None):
        self.config_key = config_key
        self.drops: dict[int, DropMetrics] = dict(drops or {})

    def add(self, drop: int, metrics: DropMetrics) -> None:
        if drop in self.drops:
            raise ValueError(f"drop {drop} already accumulated")
        self.drops[drop] = metrics

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        if other.config_key != self.config_key:
            raise ValueError("cannot merge accumulators from different configurations")
        overlap = set(self.drops) & set(other.drops)
        if overlap:
            raise ValueError(f"drops {sorted(overlap)} present in both accumulators")
        return MetricsAccumulator(self.config_key, {**self.drops, **other.drops})

    def __len__(self) -> int:
        return len(self.drops)

    def _ordered(self) -> list[DropMetrics]:
        return [self.drops[k] for k in sorted(self.drops)]

    def samples(self, name: str) -> np.ndarray:
        """Concatenation of a per-drop array (or derived rate) over drops in id order."""
        parts = [np.asarray(getattr(m, name)) for m in self._ordered()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def mean_active_links_per_sector(self) -> float:
        ms = self._ordered()
        total = sum(m.active_links_per_sector * m.n_subframes * m.n_sectors for m in ms)
        return total / sum(m.n_subframes * m.n_sectors for m in ms)

    def fraction_relayed(self, direction: str) -> float:
        bits = self.samples(f"{direction}_relay_bits")
        return float(np.mean(bits > 0)) if len(bits) else 0.0

    def statistics(self) -> dict[str, float]:
        """Scalar summary exported to ``summary.csv``."""
        out: dict[str, float] = {}
        for d in ("dl", "ul"):
            rate = self.samples(f"{d}_rate")
            sinr = self.samples(f"{d}_sinr")
            sinr = sinr[np.isfinite(sinr)]
            p = cdf_and_percentiles(rate)[2]
            out[f"{d}_rate_p5_mbps"] = p[5] / 1e3
            out[f"{d}_rate_p50_mbps"] = p[50] / 1e3
            if len(sinr):
                ps = cdf_and_percentiles(sinr)[2]
                out[f"{d}_sinr_p5_db"] = ps[5]
                out[f"{d}_sinr_p50_db"] = ps[50]
            out[f"frac_{d}_relayed"] = self.fraction_relayed(d)
        out["mean_active_access_links_per_sector"] = self.mean_active_links_per_sector()
        return out


def lower_percentile(sorted_samples: np.ndarray, p: float):
    """Value at index ``ceil(p*n) - 1`` of the sorted samples (``p`` in [0, 1])."""
    n = len(sorted_samples)
    idx = max(math.ceil(round(p * n, 9)) - 1, 0)
    return sorted_samples[idx]


def cdf_and_percentiles(samples, probe_points=None, percentiles=(5, 50)):
    """Empirical CDF at ``probe_points`` and lower empirical percentiles.

    Returns ``(probes, cdf, {p: value})``. Without probe points the CDF is
    evaluated at every distinct sample when there are at most 1001 of them and
    at the 1001 quantiles ``0, 0.001, ..., 1`` otherwise.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if len(x) == 0:
        raise ValueError("cannot compute a CDF of an empty sample set")
    pct = {p: float(lower_percentile(x, p / 100.0)) for p in percentiles}
    if probe_points is None:
        uniq = np.unique(x)
        if len(uniq) <= 1001:
            probe_points = uniq
        else:
            probe_points = np.array([lower_percentile(x, q) for q in np.linspace(0.0, 1.0, 1001)])
            probe_points = np.unique(probe_points)
    probes = np.asarray(probe_points, dtype=float)
    cdf = np.searchsorted(x, probes, side="right") / len(x)
    return probes, cdf, pct
