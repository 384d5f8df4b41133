"""Command-line front end.

    d2drelay --mode all --drops 10 --out results/
    d2drelay --replay results/manifest.json

Progress goes to stderr; stdout carries one JSON summary object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .config import MODES, ScenarioConfig, from_flat, parse_config, tomllib
from .deployment import ConfigurationError, write_layout_csv
from .engine import build_world, drop_streams, run_drops
from .output import (
    sha256_file,
    write_gains,
    write_manifest,
    write_relay_outputs,
    write_snapshot_outputs,
    write_upper_bound_outputs,
)
from .relaying import write_assignments_csv
from .studies import snapshot_study, upper_bound_study

OUT_ENV = "D2DRELAY_OUT"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2drelay", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="TOML scenario file")
    p.add_argument("--mode", choices=[*MODES, "all"], help="scenario to run (default: run.mode from config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--drops", type=int)
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./out)")
    p.add_argument("--trace", action="store_true", help="write per-subframe traces and drop dumps")
    p.add_argument("--full-scale", action="store_true", help="480 idle UEs per sector")
    p.add_argument("--jobs", type=int, default=None, help="parallel drops (default: all CPUs)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, e.g. --set run.subframes=500 (repeatable)")
    p.add_argument("--replay", type=Path, metavar="MANIFEST", help="rerun a manifest and verify checksums")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def resolve_config(args: argparse.Namespace) -> tuple[ScenarioConfig, str]:
    cfg = parse_config(args.config)
    flat: dict[str, Any] = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key.strip()] = _parse_value(value.strip())
    if args.seed is not None:
        flat["run.seed"] = args.seed
    if args.drops is not None:
        flat["run.drops"] = args.drops
    if args.full_scale:
        flat["run.full_scale"] = True
    mode = args.mode or cfg.run.mode
    if mode != "all":
        flat["run.mode"] = mode
    cfg = from_flat(flat, cfg) if flat else cfg
    return cfg, mode


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _relay_run(cfg: ScenarioConfig, out: Path, jobs: int | None, trace: bool, baseline=None):
    acc, traces = run_drops(cfg, jobs, trace, _progress)
    files = write_relay_outputs(out, acc, baseline, traces)
    if trace:
        files += _dumps(cfg, out, traces)
    return acc, files


def _dumps(cfg: ScenarioConfig, out: Path, traces) -> list[Path]:
    """Layout, shadowing and relay assignments of drop 0."""
    world = build_world(cfg, drop_streams(cfg.run.seed, 0))
    files = [out / "layout_drop0.csv", out / "shadow_drop0.csv"]
    write_layout_csv(world.layout, files[0])
    world.shadow.write_csv(files[1])
    if 0 in traces and cfg.mode != "baseline":
        files.append(out / "assignments_drop0.csv")
        write_assignments_csv(traces[0].assignments, traces[0].dl_sinr, files[-1])
    return files


def execute(cfg: ScenarioConfig, mode: str, out: Path, jobs: int | None = None, trace: bool = False) -> dict:
    """Run one mode (or ``all``) and write its outputs plus ``manifest.json``."""
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    summary: dict[str, Any] = {"mode": mode, "out": str(out)}
    if mode == "all":
        runs = {}
        base, f = _relay_run(cfg.for_mode("baseline"), out / "baseline", jobs, trace)
        files += f
        for m in ("relay", "relay-im"):
            runs[m], f = _relay_run(cfg.for_mode(m), out / m, jobs, trace, base)
            files += f
        files.append(write_gains(out, base, runs))
        summary["summary_files"] = [str(out / m / "summary.csv") for m in ("baseline", *runs)]
        summary["gains"] = str(out / "gains.csv")
    elif mode in ("baseline", "relay", "relay-im"):
        base = None
        if mode != "baseline" and cfg.run.compare_baseline:
            base, _ = run_drops(cfg.for_mode("baseline"), jobs, False, _progress)
        _, files = _relay_run(cfg, out, jobs, trace, base)
        summary["summary_file"] = str(out / "summary.csv")
    elif mode == "upper-bound":
        files = write_upper_bound_outputs(out, upper_bound_study(cfg, _progress))
        summary["summary_file"] = str(out / "summary.csv")
    elif mode == "snapshot":
        files = write_snapshot_outputs(out, snapshot_study(cfg, _progress))
        summary["summary_file"] = str(out / "summary.csv")
    else:  # pragma: no cover - argparse restricts the choices
        raise ConfigurationError(f"unknown mode {mode!r}")
    summary["manifest"] = str(write_manifest(out, cfg, mode, files))
    return summary


def replay(manifest_path: Path, out: Path | None, jobs: int | None) -> int:
    manifest = json.loads(manifest_path.read_text())
    cfg = from_flat(manifest["config"])
    out = out or Path(manifest["output_dir"])
    execute(cfg, manifest["mode"], out, jobs, trace=any("trace" in k for k in manifest["checksums"]))
    bad = []
    for rel, digest in manifest["checksums"].items():
        path = out / rel
        if not path.is_file() or sha256_file(path) != digest:
            bad.append(rel)
    for rel in bad:
        _progress(f"checksum mismatch: {rel}")
    print(json.dumps({"replay": str(manifest_path), "out": str(out), "mismatches": bad}))
    return 1 if bad else 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.replay is not None:
            return replay(args.replay, args.out, args.jobs)
        cfg, mode = resolve_config(args)
        out = args.out or Path(os.environ.get(OUT_ENV, "out"))
        summary = execute(cfg, mode, out, args.jobs, args.trace)
    except ConfigurationError as exc:
        print(f"d2drelay: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"d2drelay: I/O error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
