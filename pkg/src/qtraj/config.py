"""Run configuration: strict JSON parsing, defaults and round-trip serialization.

A configuration is one JSON object::

    {
      "task": "trajectories",
      "model": {"name": "two_level", "params": {"omega": 1.0, "delta": -1.0, "gamma": 1.0}},
      "initial_state": {"label": "g"},
      "solver": {"n_traj": 500, "seed": 7, "t_max": 10.0, "n_grid": 201},
      "observables": ["populations", "sigma_plus"],
      "output": {"path": "out", "format": "csv", "plot": false}
    }

Only ``model`` is required (``task`` may come from the command line); every
other field has a default, and unknown keys anywhere are rejected by name.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from .errors import ConfigError
from .model import CATALOG, OpenSystem, build_model

TASKS = ("trajectories", "homodyne", "master", "correlate", "counting", "waiting")
OBSERVABLES = ("populations", "sigma_plus", "sigma_minus", "x", "number", "entropy")
FORMATS = ("csv", "json")
METHODS = ("oracle", "trajectory", "both")
INT_PARAMS = {"n_max"}
BOOL_PARAMS = {"rwa"}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict

    def build(self) -> OpenSystem:
        return build_model(self.name, self.params)


@dataclass(frozen=True)
class InitialState:
    """Either a basis ``label`` of the model or explicit ``amplitudes`` as [re, im] pairs."""

    label: str | None = None
    amplitudes: tuple | None = None


@dataclass(frozen=True)
class SolverSpec:
    seed: int = 0
    n_traj: int = 500
    t_max: float = 10.0
    n_grid: int = 201
    dt: float = 1e-3
    dt_int: float = 0.05
    norm_tol: float = 1e-10
    workers: int = 1
    channel: int = 0
    n_kicks: int = 10
    burn_in: float | None = None
    m_max: int | None = None
    method: str = "both"
    corr_a: str = "sigma_plus"
    corr_b: str = "sigma_minus"


@dataclass(frozen=True)
class OutputSpec:
    path: str = "qtraj_out"
    format: str = "csv"
    plot: bool = False


@dataclass(frozen=True)
class RunConfig:
    task: str
    model: ModelSpec
    initial_state: InitialState = InitialState()
    solver: SolverSpec = SolverSpec()
    observables: tuple = ("populations",)
    output: OutputSpec = OutputSpec()

    def with_overrides(self, seed: int | None = None, workers: int | None = None,
                       path: str | None = None) -> "RunConfig":
        solver, output = self.solver, self.output
        if seed is not None:
            solver = replace(solver, seed=int(seed))
        if workers is not None:
            solver = replace(solver, workers=int(workers))
        if path is not None:
            output = replace(output, path=str(path))
        return replace(self, solver=solver, output=output)


# -- parsing ----------------------------------------------------------------------


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _expect(obj, kind, where: str):
    if not isinstance(obj, kind) or (kind in (int, float) and isinstance(obj, bool)):
        raise ConfigError(f"{where} must be of type {getattr(kind, '__name__', kind)}")
    return obj


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    return value


def _parse_model(obj) -> ModelSpec:
    _expect(obj, dict, "model")
    _reject_unknown(obj, ("name", "params"), "model")
    if "name" not in obj:
        raise ConfigError("missing required field 'model.name'")
    name = obj["name"]
    if name not in CATALOG:
        raise ConfigError(f"unknown model name {name!r}; known: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[name]
    raw = _expect(obj.get("params", {}), dict, "model.params")
    _reject_unknown(raw, entry.params, f"model.params of {name!r}")
    params: dict[str, Any] = {}
    for key in entry.params:
        where = f"model.params.{key}"
        if key not in raw:
            if key in entry.defaults:
                params[key] = entry.defaults[key]
                continue
            raise ConfigError(f"missing required field {where!r}")
        value = raw[key]
        if key in BOOL_PARAMS:
            params[key] = _expect(value, bool, where)
        elif key in INT_PARAMS:
            params[key] = _integer(value, where)
        else:
            params[key] = _number(value, where)
        if key in entry.rates and params[key] <= 0:
            raise ConfigError(f"rate {where} must be positive, got {value}")
    model = ModelSpec(name, params)
    try:
        model.build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid parameters for model {name!r}: {exc}") from exc
    return model


def _parse_initial(obj, sys: OpenSystem) -> InitialState:
    _expect(obj, dict, "initial_state")
    _reject_unknown(obj, ("label", "amplitudes"), "initial_state")
    if ("label" in obj) == ("amplitudes" in obj):
        raise ConfigError("initial_state needs exactly one of 'label' or 'amplitudes'")
    if "label" in obj:
        label = _expect(obj["label"], str, "initial_state.label")
        if label not in sys.labels:
            raise ConfigError(f"initial_state.label {label!r} not among {list(sys.labels)}")
        return InitialState(label=label)
    amps = _expect(obj["amplitudes"], list, "initial_state.amplitudes")
    if len(amps) != sys.dim:
        raise ConfigError(f"initial_state.amplitudes needs {sys.dim} entries")
    pairs = []
    for k, a in enumerate(amps):
        if not isinstance(a, list) or len(a) != 2:
            raise ConfigError(f"initial_state.amplitudes[{k}] must be [re, im]")
        pairs.append((_number(a[0], "amplitude"), _number(a[1], "amplitude")))
    if sum(re * re + im * im for re, im in pairs) == 0:
        raise ConfigError("initial_state.amplitudes must not all vanish")
    return InitialState(amplitudes=tuple(pairs))


_SOLVER_TYPES = {
    "seed": "int", "n_traj": "int", "t_max": "pos", "n_grid": "int", "dt": "pos",
    "dt_int": "pos", "norm_tol": "pos", "workers": "int", "channel": "int", "n_kicks": "int",
    "burn_in": "opt_nonneg", "m_max": "opt_int", "method": "method",
    "corr_a": "obs", "corr_b": "obs",
}


def _parse_solver(obj, task: str, sys: OpenSystem) -> SolverSpec:
    _expect(obj, dict, "solver")
    _reject_unknown(obj, _SOLVER_TYPES, "solver")
    values: dict[str, Any] = {}
    for key, value in obj.items():
        where = f"solver.{key}"
        kind = _SOLVER_TYPES[key]
        if kind == "int":
            values[key] = _integer(value, where)
        elif kind == "pos":
            values[key] = _number(value, where)
            if values[key] <= 0:
                raise ConfigError(f"{where} must be positive")
        elif kind == "opt_nonneg":
            values[key] = None if value is None else _number(value, where)
            if values[key] is not None and values[key] < 0:
                raise ConfigError(f"{where} must be non-negative")
        elif kind == "opt_int":
            values[key] = None if value is None else _integer(value, where)
        elif kind == "method":
            if value not in METHODS:
                raise ConfigError(f"{where} must be one of {METHODS}")
            values[key] = value
        elif kind == "obs":
            if value not in ("sigma_plus", "sigma_minus", "x", "number"):
                raise ConfigError(f"{where} must name an operator observable")
            values[key] = value
    if task == "counting" and "method" not in values:
        values["method"] = "oracle"
    s = SolverSpec(**values)
    if s.n_traj < 1:
        raise ConfigError("solver.n_traj must be >= 1")
    if s.n_grid < 2:
        raise ConfigError("solver.n_grid must be >= 2")
    if s.workers < 1:
        raise ConfigError("solver.workers must be >= 1")
    if s.n_kicks < 1:
        raise ConfigError("solver.n_kicks must be >= 1")
    if s.seed < 0:
        raise ConfigError("solver.seed must be non-negative")
    if s.m_max is not None and s.m_max < 1:
        raise ConfigError("solver.m_max must be >= 1")
    if not 0 <= s.channel < max(sys.n_channels, 1):
        raise ConfigError(f"solver.channel {s.channel} out of range")
    if s.dt_int > s.t_max:
        raise ConfigError("solver.dt_int must not exceed solver.t_max")
    if not s.norm_tol <= 1e-6:
        raise ConfigError("solver.norm_tol must be <= 1e-6")
    if task == "homodyne":
        n_steps = s.t_max / s.dt
        if abs(n_steps - round(n_steps)) > 1e-6 or round(n_steps) % (s.n_grid - 1):
            raise ConfigError("homodyne needs t_max / dt to be an integer multiple of n_grid - 1")
        if sys.n_channels != 1:
            raise ConfigError("homodyne runs need a model with exactly one channel")
        rate = max(ch.rate for ch in sys.channels)
        if s.dt > 1e-2 / rate * (1 + 1e-9):
            raise ConfigError(f"solver.dt must be <= 1e-2 / largest rate = {1e-2 / rate:g}")
    return s


def _parse_output(obj, task: str) -> OutputSpec:
    _expect(obj, dict, "output")
    _reject_unknown(obj, ("path", "format", "plot"), "output")
    path = _expect(obj.get("path", OutputSpec.path), str, "output.path")
    fmt = obj.get("format", "json" if task == "counting" else "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"output.format must be one of {FORMATS}")
    plot = _expect(obj.get("plot", False), bool, "output.plot")
    return OutputSpec(path, fmt, plot)


def from_dict(doc: dict, task: str | None = None) -> RunConfig:
    _expect(doc, dict, "configuration")
    _reject_unknown(doc, ("task", "model", "initial_state", "solver", "observables", "output"),
                    "configuration")
    file_task = doc.get("task")
    if file_task is not None and task is not None and file_task != task:
        raise ConfigError(f"configuration task {file_task!r} does not match command {task!r}")
    task = file_task or task
    if task is None:
        raise ConfigError("missing required field 'task'")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; known: {', '.join(TASKS)}")
    if "model" not in doc:
        raise ConfigError("missing required field 'model'")
    model = _parse_model(doc["model"])
    sys = model.build()
    initial = _parse_initial(doc.get("initial_state", {"label": sys.labels[0]}), sys)
    solver = _parse_solver(doc.get("solver", {}), task, sys)
    obs = _expect(doc.get("observables", ["populations"]), list, "observables")
    for name in obs:
        if name not in OBSERVABLES:
            raise ConfigError(f"unknown observable {name!r}; known: {', '.join(OBSERVABLES)}")
        if name == "number" and "fock_levels" not in sys.meta:
            raise ConfigError("observable 'number' needs a model with an oscillator")
    if len(set(obs)) != len(obs):
        raise ConfigError("observables must not repeat")
    output = _parse_output(doc.get("output", {}), task)
    return RunConfig(task, model, initial, solver, tuple(obs), output)


def parse_config(text: str, task: str | None = None) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    return from_dict(doc, task)


def to_dict(cfg: RunConfig) -> dict:
    init: dict[str, Any] = (
        {"label": cfg.initial_state.label}
        if cfg.initial_state.label is not None
        else {"amplitudes": [list(p) for p in cfg.initial_state.amplitudes]}
    )
    return {
        "task": cfg.task,
        "model": {"name": cfg.model.name, "params": dict(cfg.model.params)},
        "initial_state": init,
        "solver": {f.name: getattr(cfg.solver, f.name) for f in fields(SolverSpec)},
        "observables": list(cfg.observables),
        "output": asdict(cfg.output),
    }


def serialize(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=False) + "\n"
