"""Scenario files: a YAML key-value tree with a ``schema_version`` key.

Unknown or mistyped keys raise ``ConfigError`` naming the offending path.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .workloads import PRESETS, AR_LARGE_PROC, AppSpec, app_spec

SCHEMA_VERSION = 1
RAN_POLICIES = ("smec", "default_pf", "notify_delayed")
EDGE_POLICIES = ("smec_edge", "default_edge", "queue_drop_10")


class ConfigError(ValueError):
    pass


@dataclass
class RanConfig:
    prbs_per_slot: int = 217
    tdd_pattern: str = "DDDDDDDSUU"
    slot_duration_us: int = 500
    bsr_period_us: int = 5_000
    sr_period_us: int = 10_000
    sr_grant_prbs: int = 4
    pf_alpha: float = 0.01
    channel_low: int = 100
    channel_high: int = 800
    channel_step: int = 40
    core_delay_us: int = 1_000
    notify_delay_us: int = 10_000


@dataclass
class DownlinkConfig:
    base_us: int = 2_000
    rate_bytes_per_us: float = 8.0
    jitter_us: int = 2_000


@dataclass
class EdgeConfig:
    total_cores: int = 24
    tau: float = 0.1
    tier_cuts: list = field(default_factory=lambda: [0.1, 0.3])
    cooldown_us: int = 100_000
    util_threshold: float = 0.6
    util_window_us: int = 500_000
    early_drop: bool = True
    unconditional_drop: bool = False
    queue_limit: int = 10


@dataclass
class ProbeConfig:
    period_us: int = 1_000_000
    uplink_delay_us: int = 5_000
    loss: float = 0.0
    max_clock_offset_us: int = 10_000_000


@dataclass
class WorkloadConfig:
    kind: str = "static"
    ues: dict = field(default_factory=lambda: {"SS": 2, "AR": 2, "VC": 2, "FT": 6})
    dwell_mean_s: float = 5.0
    ft_law: Optional[str] = None
    apps: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION
    duration_s: float = 60.0
    seed: int = 1
    ran: RanConfig = field(default_factory=RanConfig)
    downlink: DownlinkConfig = field(default_factory=DownlinkConfig)
    edge: EdgeConfig = field(default_factory=EdgeConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1_000_000))

    def app_specs(self) -> dict[str, AppSpec]:
        specs = {}
        for kind in PRESETS:
            overrides = dict(self.workload.apps.get(kind, {}))
            if kind == "AR" and self.workload.kind == "dynamic" and "proc_mean" not in overrides:
                overrides["proc_mean"] = AR_LARGE_PROC
            specs[kind] = app_spec(kind, **overrides)
        return specs

    @property
    def ft_law(self) -> str:
        return self.workload.ft_law or self.workload.kind

    def to_dict(self) -> dict:
        def conv(obj):
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, dict):
                return {k: conv(v) for k, v in obj.items()}
            if isinstance(obj, list):
                return [conv(v) for v in obj]
            return obj
        return conv(self)

    def digest(self) -> str:
        """Identity of the scenario excluding the seed and duration."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("duration_s")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {"ran": RanConfig, "downlink": DownlinkConfig, "edge": EdgeConfig,
             "probe": ProbeConfig, "workload": WorkloadConfig}
_APP_FIELDS = {f.name for f in fields(AppSpec)} - {"kind"}


def _coerce(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    obj = cls()
    known = {f.name for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
        setattr(obj, key, _coerce(f"{path}.{key}", value, getattr(obj, key)))
    return obj


def _check_workload(w: WorkloadConfig) -> None:
    if w.kind not in ("static", "dynamic"):
        raise ConfigError(f"workload.kind: expected static or dynamic, got {w.kind!r}")
    if not isinstance(w.ues, dict):
        raise ConfigError("workload.ues: expected a mapping of app kind to UE count")
    for kind, n in w.ues.items():
        if kind not in PRESETS:
            raise ConfigError(f"workload.ues.{kind}: unknown app kind")
        if not isinstance(n, int) or isinstance(n, bool) or n < 0:
            raise ConfigError(f"workload.ues.{kind}: expected a non-negative integer")
    if w.ft_law not in (None, "static", "dynamic"):
        raise ConfigError(f"workload.ft_law: expected static or dynamic, got {w.ft_law!r}")
    if not isinstance(w.apps, dict):
        raise ConfigError("workload.apps: expected a mapping")
    for kind, over in w.apps.items():
        if kind not in PRESETS:
            raise ConfigError(f"workload.apps.{kind}: unknown app kind")
        if not isinstance(over, dict):
            raise ConfigError(f"workload.apps.{kind}: expected a mapping")
        base = PRESETS[kind]
        for key, value in over.items():
            if key not in _APP_FIELDS:
                raise ConfigError(f"workload.apps.{kind}.{key}: unknown key")
            default = getattr(base, key)
            over[key] = _coerce(f"workload.apps.{kind}.{key}", value,
                                default if default is not None else 0)


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario: expected a mapping at top level")
    if "schema_version" not in data:
        raise ConfigError("schema_version: missing")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {data['schema_version']!r}")
    sc = Scenario()
    for key, value in data.items():
        if key in _SECTIONS:
            setattr(sc, key, _build(_SECTIONS[key], value, key))
        elif key in ("name", "duration_s", "seed", "schema_version"):
            setattr(sc, key, _coerce(key, value, getattr(sc, key)))
        else:
            raise ConfigError(f"{key}: unknown key")
    _check_workload(sc.workload)
    if sc.duration_s < 0:
        raise ConfigError("duration_s: must be >= 0")
    if not isinstance(sc.edge.tier_cuts, list) or sorted(sc.edge.tier_cuts) != sc.edge.tier_cuts:
        raise ConfigError("edge.tier_cuts: expected an ascending list")
    if not 0.0 <= sc.probe.loss < 1.0:
        raise ConfigError("probe.loss: expected a probability in [0, 1)")
    try:
        from .ran_mac import SlotConfig
        SlotConfig(sc.ran.slot_duration_us, sc.ran.tdd_pattern, sc.ran.prbs_per_slot)
    except ValueError as exc:
        raise ConfigError(f"ran: {exc}") from None
    return sc


def load_scenario(path) -> Scenario:
    """Load a scenario file; a bare name such as ``static_scaled`` resolves to a bundled scenario."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = Path(str(resources.files("smecsim") / "scenarios" / f"{path}.yaml"))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return scenario_from_dict(data)


def with_overrides(sc: Scenario, seed: Optional[int] = None, duration_s: Optional[float] = None) -> Scenario:
    if seed is not None:
        sc = replace(sc, seed=seed)
    if duration_s is not None:
        sc = replace(sc, duration_s=duration_s)
    return sc
