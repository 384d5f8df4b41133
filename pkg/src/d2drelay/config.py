"""Scenario configuration: defaults, validation and TOML loading.

Config files are flat TOML with dotted section names, e.g.::

    run.mode = "relay-im"
    mac.gamma_acc = 5.0
    deployment.idle_per_sector = 480

``[section]`` tables are accepted too. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import AntennaConfig
from .deployment import ConfigurationError
from .power import PowerConfig, default_buffer_capacity

MODES = ("baseline", "relay", "relay-im", "upper-bound", "snapshot")
FULL_SCALE_IDLE = 480


@dataclass(frozen=True)
class DeploymentConfig:
    isd: float = 500.0
    tiers: int = 2
    idle_per_sector: int = 100
    dl_active_per_sector: int = 10
    ul_active_per_sector: int = 10
    max_ues_per_sector: int = 1000
    ue_height: float = 1.5
    enb_height: float = 32.0


@dataclass(frozen=True)
class ChannelConfig:
    shadow_sigma: float = 7.0
    d_corr: float = 25.0
    cross_corr: float = 0.5
    dense_limit: int = 4000
    grid_mode: str = "auto"  # "auto" | "on" | "off"
    grid_spacing: float = 0.0  # 0 -> d_corr / 4
    antenna: AntennaConfig = AntennaConfig()
    # recorded only: SINR is single-stream, no receive-combining gain is modelled
    tx_antennas: int = 1
    rx_antennas: int = 2

    @property
    def grid_flag(self) -> bool | None:
        return {"auto": None, "on": True, "off": False}[self.grid_mode]


@dataclass(frozen=True)
class RelayConfig:
    p_acc_max: float = 85.0
    idle_only: bool = True
    same_sector: bool = True
    buffer_capacity: float = 0.0  # 0 -> two subframes at the SINR cap
    prune_threshold: float = 0.05


@dataclass(frozen=True)
class MacConfig:
    gamma_acc: float | None = None  # None -> -inf for relay, 5 dB for relay-im
    pf_time_constant: float = 100.0
    yield_rule: str = "pairwise"  # "pairwise" | "priority"


@dataclass(frozen=True)
class RunConfig:
    mode: str = "relay"
    seed: int = 1
    drops: int = 10
    warmup_subframes: int = 200
    subframes: int = 2000
    full_scale: bool = False
    compare_baseline: bool = True


@dataclass(frozen=True)
class SnapshotConfig:
    subframes: int = 2000
    grid_resolution: float = 10.0  # m


@dataclass(frozen=True)
class UpperBoundConfig:
    rotations: int = 200


@dataclass(frozen=True)
class ScenarioConfig:
    deployment: DeploymentConfig = DeploymentConfig()
    channel: ChannelConfig = ChannelConfig()
    power: PowerConfig = PowerConfig()
    relay: RelayConfig = RelayConfig()
    mac: MacConfig = MacConfig()
    run: RunConfig = RunConfig()
    snapshot: SnapshotConfig = SnapshotConfig()
    upper_bound: UpperBoundConfig = UpperBoundConfig()

    # resolved views -----------------------------------------------------

    @property
    def mode(self) -> str:
        return self.run.mode

    @property
    def gamma_acc(self) -> float:
        if self.mac.gamma_acc is not None:
            return self.mac.gamma_acc
        return 5.0 if self.run.mode == "relay-im" else -math.inf

    @property
    def buffer_capacity(self) -> float:
        return self.relay.buffer_capacity or default_buffer_capacity(self.power)

    @property
    def idle_per_sector(self) -> int:
        return FULL_SCALE_IDLE if self.run.full_scale else self.deployment.idle_per_sector

    def replace(self, **sections: dict[str, Any]) -> "ScenarioConfig":
        """Copy with per-section overrides, e.g. ``replace(run={"mode": "baseline"})``."""
        updates = {}
        for name, values in sections.items():
            updates[name] = dataclasses.replace(getattr(self, name), **values)
        return validate(dataclasses.replace(self, **updates))

    def for_mode(self, mode: str) -> "ScenarioConfig":
        """Same scenario in another mode; an explicit gamma is dropped when it would clash."""
        mac = self.mac
        if mode in ("baseline", "relay", "relay-im"):
            mac = dataclasses.replace(mac, gamma_acc=None)
        return validate(dataclasses.replace(self, run=dataclasses.replace(self.run, mode=mode), mac=mac))

    def to_flat(self) -> dict[str, Any]:
        """Every key with its resolved value, in config-file form."""
        out: dict[str, Any] = {}
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                val = getattr(obj, f.name)
                if isinstance(val, AntennaConfig):
                    for af in fields(val):
                        out[f"{sec.name}.antenna.{af.name}"] = getattr(val, af.name)
                else:
                    out[f"{sec.name}.{f.name}"] = val
        out["mac.gamma_acc"] = _format_gamma(self.gamma_acc)
        out["relay.buffer_capacity"] = self.buffer_capacity
        if self.run.full_scale:
            out["deployment.idle_per_sector"] = self.idle_per_sector
        return out


def _format_gamma(g: float):
    return "-inf" if g == -math.inf else g


def _coerce(key: str, value: Any, default: Any, annotation: str) -> Any:
    if key == "mac.gamma_acc":
        if isinstance(value, str):
            if value.strip().lower() in ("-inf", "-infinity"):
                return -math.inf
            raise ConfigurationError(f"{key}: expected a number or \"-inf\", got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number or \"-inf\", got {type(value).__name__}")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected a boolean, got {type(value).__name__}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {type(value).__name__}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {type(value).__name__}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {type(value).__name__}")
        return value
    raise ConfigurationError(f"{key}: unsupported value {value!r}")


def _flatten(tree: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def from_flat(flat: dict[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a validated config from ``{"section.key": value}`` overrides."""
    base = ScenarioConfig() if base is None else base
    sections: dict[str, dict[str, Any]] = {}
    antenna: dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "channel" and parts[1] == "antenna":
            if parts[2] not in {f.name for f in fields(AntennaConfig)}:
                raise ConfigurationError(f"unknown config key {key!r}")
            antenna[parts[2]] = _coerce(key, value, getattr(base.channel.antenna, parts[2]), "")
            continue
        if len(parts) != 2 or parts[0] not in {f.name for f in fields(ScenarioConfig)}:
            raise ConfigurationError(f"unknown config key {key!r}")
        sec, name = parts
        obj = getattr(base, sec)
        if name not in {f.name for f in fields(obj)} or name == "antenna":
            raise ConfigurationError(f"unknown config key {key!r}")
        default = getattr(obj, name)
        if key == "mac.gamma_acc" or default is not None:
            sections.setdefault(sec, {})[name] = _coerce(key, value, default, "")
        else:
            sections.setdefault(sec, {})[name] = value
    if antenna:
        sections.setdefault("channel", {})["antenna"] = dataclasses.replace(base.channel.antenna, **antenna)
    updates = {sec: dataclasses.replace(getattr(base, sec), **vals) for sec, vals in sections.items()}
    return validate(dataclasses.replace(base, **updates))


def validate(cfg: ScenarioConfig) -> ScenarioConfig:
    run, dep, mac = cfg.run, cfg.deployment, cfg.mac
    if run.mode not in MODES:
        raise ConfigurationError(f"run.mode: unknown mode {run.mode!r} (expected one of {', '.join(MODES)})")
    for key, val in (("run.drops", run.drops), ("run.subframes", run.subframes),
                     ("snapshot.subframes", cfg.snapshot.subframes),
                     ("upper_bound.rotations", cfg.upper_bound.rotations)):
        if val <= 0:
            raise ConfigurationError(f"{key} must be positive, got {val}")
    if run.warmup_subframes < 0:
        raise ConfigurationError(f"run.warmup_subframes must be non-negative, got {run.warmup_subframes}")
    for key in ("idle_per_sector", "dl_active_per_sector", "ul_active_per_sector"):
        if getattr(dep, key) < 0:
            raise ConfigurationError(f"deployment.{key} must be non-negative")
    if dep.isd <= 0:
        raise ConfigurationError(f"deployment.isd must be positive, got {dep.isd}")
    if cfg.channel.grid_mode not in ("auto", "on", "off"):
        raise ConfigurationError(f"channel.grid_mode: expected auto|on|off, got {cfg.channel.grid_mode!r}")
    if mac.yield_rule not in ("pairwise", "priority"):
        raise ConfigurationError(f"mac.yield_rule: expected pairwise|priority, got {mac.yield_rule!r}")
    if mac.pf_time_constant < 1:
        raise ConfigurationError("mac.pf_time_constant must be >= 1")
    if cfg.power.delta_acc < 0:
        raise ConfigurationError("power.delta_acc must be non-negative")
    if mac.gamma_acc is not None:
        if run.mode == "relay" and mac.gamma_acc != -math.inf:
            raise ConfigurationError(
                "mac.gamma_acc: mode 'relay' runs without access-link IM; use mode 'relay-im' for a finite threshold")
        if run.mode == "relay-im" and mac.gamma_acc == -math.inf:
            raise ConfigurationError("mac.gamma_acc: mode 'relay-im' needs a finite SIR threshold")
    return cfg


def parse_config(path: str | Path | None) -> ScenarioConfig:
    """Load a TOML config file; ``None`` gives the defaults."""
    if path is None:
        return ScenarioConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        tree = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: malformed config ({exc})") from exc
    return from_flat(_flatten(tree))
