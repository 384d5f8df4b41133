"""CSV outputs and the run manifest.

Every CSV has a header row and numbers are written with 6 significant
digits, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .engine import TraceRecorder
from .metrics import MetricsAccumulator, cdf_and_percentiles, lower_percentile
from .power import lin2db
from .studies import SnapshotResult, UpperBoundResult, median_improvement


def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def write_rows(path: Path, header: list[str], rows: Iterable[Iterable]) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _cdf_rows(samples, label: tuple = ()):
    samples = np.asarray(samples, dtype=float)
    finite = samples[np.isfinite(samples)]
    rows = []
    if len(finite):
        probes, cdf, _ = cdf_and_percentiles(finite)
        rows.extend((*label, float(p), float(c)) for p, c in zip(probes, cdf))
    return rows


def write_cdf(path: Path, groups: dict[tuple, np.ndarray], label_cols: list[str], value_col: str) -> Path:
    rows = []
    for label, samples in groups.items():
        rows.extend(_cdf_rows(samples, label))
    return write_rows(path, [*label_cols, value_col, "cdf"], rows)


def write_relay_outputs(out: Path, acc: MetricsAccumulator, baseline: MetricsAccumulator | None = None,
                        traces: dict[int, TraceRecorder] | None = None) -> list[Path]:
    """CDF files, ``summary.csv`` and optional traces for a baseline/relay/relay-im run."""
    out.mkdir(parents=True, exist_ok=True)
    files = [
        write_cdf(out / "dl_sinr_cdf.csv", {(): acc.samples("dl_sinr")}, [], "sinr_db"),
        write_cdf(out / "ul_sinr_cdf.csv", {(): acc.samples("ul_sinr")}, [], "sinr_db"),
        write_cdf(out / "dl_rate_cdf.csv", {(): acc.samples("dl_rate") / 1e3}, [], "rate_mbps"),
        write_cdf(out / "ul_rate_cdf.csv", {(): acc.samples("ul_rate") / 1e3}, [], "rate_mbps"),
    ]
    direction = acc.samples("access_direction")
    sinr = acc.samples("access_sinr")
    files.append(write_cdf(out / "access_sinr_cdf.csv",
                           {("relay-to-edge",): sinr[direction == 0], ("edge-to-relay",): sinr[direction == 1]},
                           ["direction"], "sinr_db"))
    files.append(write_cdf(out / "enb_interference_cdf.csv",
                           {("signal",): lin2db(acc.samples("enb_signal")),
                            ("ici",): lin2db(acc.samples("enb_ici")),
                            ("access",): lin2db(acc.samples("enb_access"))},
                           ["component"], "power_dbm"))
    stats = acc.statistics()
    if baseline is not None:
        stats.update(gains(baseline, acc))
    files.append(write_rows(out / "summary.csv", ["metric", "value"], [(k, float(v)) for k, v in stats.items()]))
    if traces:
        files.append(write_rows(out / "schedule_trace.csv", ["drop", "subframe", "sector", "link", "grant", "ue"],
                                ((d, *r) for d in sorted(traces) for r in traces[d].grants)))
        files.append(write_rows(out / "access_trace.csv", ["drop", "subframe", "sector", "edge_ue", "direction",
                                                           "state"],
                                ((d, *r) for d in sorted(traces) for r in traces[d].links)))
    return files


def gains(baseline: MetricsAccumulator, relay: MetricsAccumulator) -> dict[str, float]:
    """Relative rate gains (percent) at the 5th and 50th percentiles."""
    out = {}
    for d in ("dl", "ul"):
        b = cdf_and_percentiles(baseline.samples(f"{d}_rate"))[2]
        r = cdf_and_percentiles(relay.samples(f"{d}_rate"))[2]
        for p in (5, 50):
            # undefined when the baseline percentile is zero (very short runs)
            out[f"{d}_rate_gain_p{p}_pct"] = 100.0 * (r[p] / b[p] - 1.0) if b[p] > 0 else float("nan")
    return out


def write_gains(out: Path, baseline: MetricsAccumulator, runs: dict[str, MetricsAccumulator]) -> Path:
    cols = ["dl_rate_gain_p5_pct", "dl_rate_gain_p50_pct", "ul_rate_gain_p5_pct", "ul_rate_gain_p50_pct"]
    rows = []
    for mode, acc in runs.items():
        g = gains(baseline, acc)
        rows.append((mode, *(float(g[c]) for c in cols), float(acc.mean_active_links_per_sector()),
                     float(acc.fraction_relayed("dl")), float(acc.fraction_relayed("ul"))))
    return write_rows(out / "gains.csv", ["mode", *cols, "mean_active_access_links_per_sector",
                                          "frac_dl_relayed", "frac_ul_relayed"], rows)


def write_upper_bound_outputs(out: Path, res: UpperBoundResult) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = [
        write_cdf(out / "dl_sinr_cdf.csv", {("before",): res.dl_before, ("after",): res.dl_after}, ["case"],
                  "sinr_db"),
        write_cdf(out / "ul_sinr_cdf.csv", {("before",): res.ul_before, ("after",): res.ul_after}, ["case"],
                  "sinr_db"),
        write_cdf(out / "ici_cdf.csv", {("before",): lin2db(res.ici_before), ("after",): lin2db(res.ici_after)},
                  ["case"], "ici_dbm"),
    ]
    summary = {
        "dl_median_sinr_improvement_db": median_improvement(res.dl_before, res.dl_after),
        "ul_median_sinr_improvement_db": median_improvement(res.ul_before, res.ul_after),
        "fraction_replaced": float(np.mean(res.replaced)),
    }
    files.append(write_rows(out / "summary.csv", ["metric", "value"], [(k, float(v)) for k, v in summary.items()]))
    return files


def write_snapshot_outputs(out: Path, res: SnapshotResult) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = [
        write_cdf(out / "nearest_tx_distance_cdf.csv", {(): res.nearest_distance}, [], "distance_m"),
        write_cdf(out / "ul_received_power_cdf.csv", {(): res.received_power}, [], "power_dbm"),
    ]
    if res.grid_xy is not None:
        files.append(write_rows(out / "snapshot_ul_grid.csv", ["x", "y", "power_dbm"],
                                ((float(x), float(y), float(v)) for (x, y), v in zip(res.grid_xy, res.ul_grid_dbm))))
        files.append(write_rows(out / "snapshot_dl_grid.csv", ["x", "y", "power_dbm"],
                                ((float(x), float(y), float(v)) for (x, y), v in zip(res.grid_xy, res.dl_grid_dbm))))
    p = np.sort(res.received_power)
    summary = {
        "reference_x_m": float(res.reference[0]),
        "reference_y_m": float(res.reference[1]),
        "mean_nearest_tx_distance_m": res.mean_nearest_distance,
        "ul_received_power_p80_dbm": float(lower_percentile(p, 0.8)),
    }
    files.append(write_rows(out / "summary.csv", ["metric", "value"], [(k, float(v)) for k, v in summary.items()]))
    return files


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: ScenarioConfig, mode: str, files: list[Path]) -> Path:
    flat = cfg.to_flat()
    manifest = {
        "artifact_version": __version__,
        "mode": mode,
        "seed": cfg.run.seed,
        "output_dir": str(out),
        "config": {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v)) for k, v in flat.items()},
        "checksums": {str(p.relative_to(out)): sha256_file(p) for p in sorted(files)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
