"""Scenario configuration: dataclasses, strict parsing and defaults.

Parsing is strict: unknown keys and wrong types raise :class:`SchemaError`.
Physically unrepresentable settings (packets narrower than the grid, band
overflow, packets running into the periodic boundary) raise
:class:`PhysicsError` from :func:`validate`, which the experiment runners
call before touching any field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any

KINDS = ("bell", "two-time", "semi", "pointer-sweep")
SWEEP_PARAMS = ("tau_ratio", "mass", "k")


class SchemaError(ValueError):
    """Config does not match the schema (CLI exit code 2)."""


class PhysicsError(ValueError):
    """Config violates a discretisation or physics invariant (CLI exit code 3)."""


@dataclass
class Phases:
    x: float = 0.0
    xp: float = math.pi / 2
    y: float = -math.pi / 4
    yp: float = math.pi / 4


@dataclass
class GridConfig:
    # None means "size automatically for the scenario"
    points: list[int] | int | None = None
    extent: list[float] | float | None = None
    origin: list[float] | float | None = None
    dt: float | None = None


@dataclass
class PacketConfig:
    center: float
    momentum: float = 0.0
    sigma: float = 1.0


@dataclass
class KickConfig:
    k: float = 4.0
    region: list[list[float]] | None = None
    sign_rule: str = "plus-on-region"
    t_apply: float = 0.0


@dataclass
class PointerConfig:
    mass: float | None = None
    sigma: float = 1.0
    tau_ratio: float | None = None


@dataclass
class EnsembleConfig:
    n: int | None = None
    seed: int = 20150415


@dataclass
class SweepConfig:
    param: str = "tau_ratio"
    values: list[float] = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0, 100.0])


def _default_packets() -> list[PacketConfig]:
    return [PacketConfig(-10.0, 5.0, 1.0), PacketConfig(10.0, -5.0, 1.0)]


@dataclass
class ScenarioConfig:
    kind: str
    phases: Phases = field(default_factory=Phases)
    y_grid: list[float] | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    packets: list[PacketConfig] = field(default_factory=_default_packets)
    kick: KickConfig | None = None
    pointer: PointerConfig | None = None
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    t_final: float | None = None
    t_detect: float | None = None
    sweep: SweepConfig | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


DEFAULT_N = {"bell": 100_000, "two-time": 100_000, "semi": 5000, "pointer-sweep": 5000}


def default_config(kind: str) -> ScenarioConfig:
    if kind not in KINDS:
        raise SchemaError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    cfg = ScenarioConfig(kind=kind)
    if kind == "two-time":
        cfg.phases = Phases(0.0, 0.0, 0.0, math.pi / 2)
        cfg.y_grid = [0.0, math.pi / 2]
    if kind == "pointer-sweep":
        cfg.kick = KickConfig()
        cfg.pointer = PointerConfig()
        cfg.sweep = SweepConfig()
    cfg.ensemble.n = DEFAULT_N[kind]
    return cfg


def _number(v: Any, where: str, integer: bool = False) -> float | int:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {type(v).__name__}")
    if integer:
        if isinstance(v, float) and not v.is_integer():
            raise SchemaError(f"{where}: expected an integer")
        return int(v)
    if not math.isfinite(v):
        raise SchemaError(f"{where}: must be finite")
    return float(v)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise SchemaError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise SchemaError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return {k: v for k, v in data.items()}


def _phases(d, where="phases") -> Phases:
    kw = _build(Phases, d, where)
    base = Phases()
    for k, v in kw.items():
        setattr(base, k, _number(v, f"{where}.{k}"))
    return base


def _numbers_or_scalar(v, where, integer=False):
    if v is None:
        return None
    if isinstance(v, list):
        if not v:
            raise SchemaError(f"{where}: empty list")
        return [_number(u, f"{where}[{i}]", integer) for i, u in enumerate(v)]
    return _number(v, where, integer)


def _grid(d) -> GridConfig:
    kw = _build(GridConfig, d, "grid")
    g = GridConfig()
    g.points = _numbers_or_scalar(kw.get("points"), "grid.points", integer=True)
    g.extent = _numbers_or_scalar(kw.get("extent"), "grid.extent")
    g.origin = _numbers_or_scalar(kw.get("origin"), "grid.origin")
    if kw.get("dt") is not None:
        g.dt = _number(kw["dt"], "grid.dt")
    return g


def _packet(d, i) -> PacketConfig:
    kw = _build(PacketConfig, d, f"packets[{i}]")
    if "center" not in kw:
        raise SchemaError(f"packets[{i}]: 'center' is required")
    return PacketConfig(**{k: _number(v, f"packets[{i}].{k}") for k, v in kw.items()})


def _kick(d) -> KickConfig:
    kw = _build(KickConfig, d, "kick")
    kc = KickConfig()
    for k, v in kw.items():
        if k == "region":
            if v is not None:
                if not isinstance(v, list) or not all(isinstance(r, list) and len(r) == 2 for r in v):
                    raise SchemaError("kick.region: expected a list of [lo, hi] pairs")
                v = [[_number(a, "kick.region"), _number(b, "kick.region")] for a, b in v]
            kc.region = v
        elif k == "sign_rule":
            if v not in ("plus-on-region", "plus-minus-split"):
                raise SchemaError("kick.sign_rule: expected 'plus-on-region' or 'plus-minus-split'")
            kc.sign_rule = v
        else:
            setattr(kc, k, _number(v, f"kick.{k}"))
    return kc


def _pointer(d) -> PointerConfig:
    kw = _build(PointerConfig, d, "pointer")
    pc = PointerConfig()
    for k, v in kw.items():
        setattr(pc, k, None if v is None else _number(v, f"pointer.{k}"))
    return pc


def _ensemble(d, kind) -> EnsembleConfig:
    kw = _build(EnsembleConfig, d, "ensemble")
    ec = EnsembleConfig(n=DEFAULT_N[kind])
    if "n" in kw:
        ec.n = _number(kw["n"], "ensemble.n", integer=True)
    if "seed" in kw:
        ec.seed = _number(kw["seed"], "ensemble.seed", integer=True)
        if not 0 <= ec.seed < 2**64:
            raise SchemaError("ensemble.seed: must be an unsigned 64-bit integer")
    return ec


def _sweep(d) -> SweepConfig:
    kw = _build(SweepConfig, d, "sweep")
    sc = SweepConfig()
    if "param" in kw:
        if kw["param"] not in SWEEP_PARAMS:
            raise SchemaError(f"sweep.param: expected one of {', '.join(SWEEP_PARAMS)}")
        sc.param = kw["param"]
    if "values" in kw:
        vals = kw["values"]
        if not isinstance(vals, list):
            raise SchemaError("sweep.values: expected a list")
        sc.values = [_number(v, f"sweep.values[{i}]") for i, v in enumerate(vals)]
    return sc


def config_from_dict(data: Any, kind: str | None = None) -> ScenarioConfig:
    """Strictly parse a config object, filling documented defaults."""
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object")
    _build(ScenarioConfig, data, "config")
    k = data.get("kind", kind)
    if k is None:
        raise SchemaError("config: 'kind' is required")
    if kind is not None and k != kind:
        raise SchemaError(f"config kind {k!r} does not match subcommand {kind!r}")
    cfg = default_config(k)
    if "phases" in data:
        cfg.phases = _phases(data["phases"])
    if "y_grid" in data:
        cfg.y_grid = _numbers_or_scalar(data["y_grid"], "y_grid")
        if cfg.y_grid is not None and not isinstance(cfg.y_grid, list):
            cfg.y_grid = [cfg.y_grid]
    if "grid" in data:
        cfg.grid = _grid(data["grid"])
    if "packets" in data:
        if not isinstance(data["packets"], list):
            raise SchemaError("packets: expected a list")
        cfg.packets = [_packet(p, i) for i, p in enumerate(data["packets"])]
    if "kick" in data:
        cfg.kick = None if data["kick"] is None else _kick(data["kick"])
    if "pointer" in data:
        cfg.pointer = None if data["pointer"] is None else _pointer(data["pointer"])
    if "ensemble" in data:
        cfg.ensemble = _ensemble(data["ensemble"], k)
    for key in ("t_final", "t_detect"):
        if data.get(key) is not None:
            setattr(cfg, key, _number(data[key], key))
    if "sweep" in data:
        cfg.sweep = None if data["sweep"] is None else _sweep(data["sweep"])
    if (cfg.kick is None) != (cfg.pointer is None):
        raise SchemaError("kick and pointer must be given together")
    return cfg


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SchemaError(f"duplicate key {k!r}")
        out[k] = v
    return out


def loads(text: str, kind: str | None = None) -> ScenarioConfig:
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    return config_from_dict(data, kind)


def jsonable(obj: Any) -> Any:
    """Recursively convert dataclasses / numpy scalars for json.dumps."""
    import numpy as np

    if is_dataclass(obj):
        return jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj
