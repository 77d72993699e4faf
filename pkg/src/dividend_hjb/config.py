"""Run configuration: JSON documents, defaults and the named presets.

A document is a JSON object with optional blocks::

    {"preset": "k15",
     "model": {"kmax": 1.2},
     "grid": {"n": 100, "m": 25},
     "solver": {"cross": "central"},
     "sim": {"paths": 20000, "seed": 7},
     "ruin": {"t_end": 10.0, "nt": 200},
     "output": {"dir": "out"}}

Blocks override the preset, which overrides the built-in defaults.  Unknown
keys anywhere are rejected so that typos do not silently fall back to a
default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
import json
import math
from typing import Any

from .grid import GridError, GridSpec, default_spec
from .hjb import CROSS_MODES, DRIFT_SCHEMES, SolverTolerances
from .mc import SimConfig
from .model import ModelParams, ParameterError, validate


class ConfigError(ValueError):
    """Invalid configuration document; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None,
                 column: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"message": str(self)}
        if self.field is not None:
            out["field"] = self.field
        if self.line is not None:
            out["line"] = self.line
            out["column"] = self.column
        return out


# sigma = 1, theta1 = 1, theta2 = 2, delta = 0.5 throughout; K varies
PRESETS: dict[str, dict[str, float]] = {
    "k02": {"kmax": 0.2},
    "k067": {"kmax": 0.67},
    "k09": {"kmax": 0.9},
    "k15": {"kmax": 1.5},
    # ruin studies at t = 10
    "r2": {"theta2": 2.0, "kmax": 0.9},
    "r4": {"theta2": 4.0, "kmax": 1.5},
}
DEFAULT_PRESET = "k15"
BASE_MODEL = ModelParams(theta1=1.0, theta2=2.0, sigma=1.0, delta=0.5, kmax=1.5, prior_q=0.5)


def preset_params(name: str) -> ModelParams:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    return BASE_MODEL.replace(**PRESETS[name])


@dataclass(frozen=True)
class GridOptions:
    n: int = 200
    m: int = 50
    a1: float = 0.3
    a2: float = 0.7
    a3: float = 0.5
    bigB: float | None = None
    tail_tol: float = 0.01

    def spec(self, params: ModelParams) -> GridSpec:
        return default_spec(params, self.n, self.m, self.a1, self.a2, self.a3,
                            bigB=self.bigB, tail_tol=self.tail_tol)


@dataclass(frozen=True)
class RuinOptions:
    t_end: float = 10.0
    nt: int = 200
    probes: tuple[tuple[float, float], ...] = ((0.5, 1.25), (1.0, 1.5), (2.0, 1.5), (3.0, 1.75),
                                               (1.0, 1.9))


@dataclass(frozen=True)
class SimulateOptions:
    starts: tuple[tuple[float, float], ...] = ((1.0, 1.25), (3.0, 1.5), (6.0, 1.75))
    # "optimal" (solve first), "initial", "always" or "never"
    policy: str = "optimal"


@dataclass(frozen=True)
class EvalOptions:
    # "initial", "optimal" or a constant level; or explicit [[vartheta, b], ...]
    curve: Any = "initial"


@dataclass(frozen=True)
class RunConfig:
    preset: str = DEFAULT_PRESET
    model: ModelParams = BASE_MODEL
    grid: GridOptions = GridOptions()
    solver: SolverTolerances = SolverTolerances()
    sim: SimConfig = SimConfig()
    ruin: RuinOptions = RuinOptions()
    simulate: SimulateOptions = SimulateOptions()
    eval: EvalOptions = EvalOptions()
    output_dir: str = "out"

    def grid_spec(self) -> GridSpec:
        return self.grid.spec(self.model)


def _merge(block_name: str, base, block: Any, coerce: dict[str, Any] | None = None):
    if block is None:
        return base
    if not isinstance(block, dict):
        raise ConfigError(f"{block_name} must be a JSON object", block_name)
    names = {f.name for f in fields(base)}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ConfigError(f"unknown key {block_name}.{unknown[0]}", f"{block_name}.{unknown[0]}")
    values = {}
    for key, val in block.items():
        cur = getattr(base, key)
        fname = f"{block_name}.{key}"
        if coerce and key in coerce:
            val = coerce[key](val, fname)
        elif isinstance(cur, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{fname} must be true or false", fname)
        elif isinstance(cur, int) and not isinstance(cur, bool):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{fname} must be an integer", fname)
        elif isinstance(cur, float) or (cur is None and key == "bigB"):
            if val is not None:
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"{fname} must be a number", fname)
                val = float(val)
                if not math.isfinite(val):
                    raise ConfigError(f"{fname} must be finite", fname)
        elif isinstance(cur, str) and not isinstance(val, str):
            raise ConfigError(f"{fname} must be a string", fname)
        values[key] = val
    try:
        return replace(base, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{block_name}: {exc}", block_name) from exc


def _points(val, fname):
    if not isinstance(val, list) or not all(
        isinstance(p, list) and len(p) == 2 and all(isinstance(c, (int, float)) for c in p)
        for p in val
    ):
        raise ConfigError(f"{fname} must be a list of [x, vartheta] pairs", fname)
    return tuple((float(a), float(b)) for a, b in val)


def _choice(options):
    def check(val, fname):
        if val not in options:
            raise ConfigError(f"{fname} must be one of {list(options)}", fname)
        return val
    return check


def _curve(val, fname):
    if isinstance(val, str):
        return _choice(("initial", "optimal"))(val, fname)
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if isinstance(val, list):
        pts = _points(val, fname)
        if len(pts) < 2:
            raise ConfigError(f"{fname} needs at least two [vartheta, b] pairs", fname)
        return pts
    raise ConfigError(f"{fname} must be 'initial', 'optimal', a number or a list of pairs",
                      fname)


TOP_KEYS = {"preset", "model", "grid", "solver", "sim", "ruin", "simulate", "eval", "output"}


def parse_config(document: str) -> RunConfig:
    """Parse a JSON document into a validated :class:`RunConfig`."""
    try:
        raw = json.loads(document) if document.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", None, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]}", unknown[0])

    preset = raw.get("preset", DEFAULT_PRESET)
    if not isinstance(preset, str):
        raise ConfigError("preset must be a string", "preset")
    model = _merge("model", preset_params(preset), raw.get("model"))
    try:
        validate(model)
    except ParameterError as exc:
        raise ConfigError(str(exc), "model") from exc

    grid = _merge("grid", GridOptions(), raw.get("grid"))
    solver = _merge("solver", SolverTolerances(), raw.get("solver"),
                    {"cross": _choice(CROSS_MODES), "drift": _choice(DRIFT_SCHEMES)})
    sim = _merge("sim", SimConfig(), raw.get("sim"))
    ruin = _merge("ruin", RuinOptions(), raw.get("ruin"), {"probes": _points})
    simulate = _merge("simulate", SimulateOptions(), raw.get("simulate"),
                      {"starts": _points,
                       "policy": _choice(("optimal", "initial", "always", "never"))})
    ev = _merge("eval", EvalOptions(), raw.get("eval"), {"curve": _curve})

    out = raw.get("output", {})
    if not isinstance(out, dict) or set(out) - {"dir"}:
        raise ConfigError("output accepts only the key 'dir'", "output")
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir must be a string", "output.dir")

    if not ruin.t_end >= 0.0 or ruin.nt < 1:
        raise ConfigError("ruin needs t_end >= 0 and nt >= 1", "ruin")
    cfg = RunConfig(preset, model, grid, solver, sim, ruin, simulate, ev, out_dir)
    try:
        cfg.grid_spec().check()
    except (GridError, ValueError) as exc:
        raise ConfigError(str(exc), "grid") from exc
    if solver.max_iter < 1:
        raise ConfigError("solver.max_iter must be at least 1", "solver.max_iter")
    return cfg
