"""
Declarative run configuration (JSON): problem, schedule, integrator,
initial state, output paths and the optional discrete section.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from dynamics import METHODS, IntegratorOptions, ProblemInstance
from logging_setup import get_logger
from operators import DescriptorError, DimensionMismatchError
from problems import BUILTIN_IDS, builtin, named_from_instance, random_instance
from schedules import Schedule, ScheduleError

logger = get_logger(__name__)

DEFAULT_OUTPUTS = {
    "trajectory_csv": "trajectory.csv",
    "report_json": "report.json",
    "discrete_csv": "discrete.csv",
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _number(value, path, minimum=None, exclusive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(path, "must be finite")
    if minimum is not None:
        if (exclusive and value <= minimum) or (not exclusive and value < minimum):
            relation = ">" if exclusive else ">="
            raise ConfigError(path, f"must be {relation} {minimum}, got {value}")
    return int(value) if integer else float(value)


def _mapping(data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    return data


@dataclass
class IntegratorConfig:
    method: str = "rk4"
    t_end: float = 100.0
    h_max: float = 0.05
    safety: float = 0.25
    record_every: Optional[int] = None

    def options(self, reference=None):
        return IntegratorOptions(
            method=self.method,
            h_max=self.h_max,
            safety=self.safety,
            record_every=self.record_every,
            reference=reference,
        )

    def to_dict(self):
        data = {"method": self.method, "t_end": self.t_end, "h_max": self.h_max, "safety": self.safety}
        if self.record_every is not None:
            data["record_every"] = self.record_every
        return data


@dataclass
class DiscreteConfig:
    N: int
    use_h1: bool = True

    def to_dict(self):
        return {"N": self.N, "use_h1": self.use_h1}


@dataclass
class RunConfig:
    problem: dict
    schedule: Schedule = field(default_factory=Schedule.canonical)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    x0: Union[str, list] = "default"
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    discrete: Optional[DiscreteConfig] = None

    @property
    def problem_id(self):
        if "builtin" in self.problem:
            return self.problem["builtin"]
        if "random" in self.problem:
            r = self.problem["random"]
            return f"random_{r['seed']}_{r['dim']}"
        return "inline"

    def to_dict(self):
        data = {
            "problem": self.problem,
            "schedule": self.schedule.to_dict(),
            "integrator": self.integrator.to_dict(),
            "x0": self.x0,
            "outputs": dict(self.outputs),
        }
        if self.discrete is not None:
            data["discrete"] = self.discrete.to_dict()
        return data


def _parse_problem(data):
    problem = _mapping(data, "problem")
    kinds = [k for k in ("builtin", "random", "inline") if k in problem]
    if len(kinds) != 1:
        raise ConfigError("problem", "needs exactly one of 'builtin', 'random', 'inline'")
    kind = kinds[0]
    if kind == "builtin":
        if problem["builtin"] not in BUILTIN_IDS:
            raise ConfigError("problem.builtin", f"unknown id {problem['builtin']!r}; expected one of {BUILTIN_IDS}")
        return {"builtin": problem["builtin"]}
    if kind == "random":
        r = _mapping(problem["random"], "problem.random")
        dim = _number(r.get("dim"), "problem.random.dim", 1, integer=True)
        if dim > 64:
            raise ConfigError("problem.random.dim", f"must be <= 64, got {dim}")
        return {
            "random": {
                "seed": _number(r.get("seed"), "problem.random.seed", 0, integer=True),
                "dim": dim,
                "gamma": _number(r.get("gamma", 0.0), "problem.random.gamma", 0.0),
            }
        }
    inline = _mapping(problem["inline"], "problem.inline")
    for key in ("A", "D", "B"):
        if key not in inline:
            raise ConfigError(f"problem.inline.{key}", "missing")
    try:
        instance = ProblemInstance.from_dict(inline)
    except (DescriptorError, DimensionMismatchError, KeyError, TypeError) as e:
        raise ConfigError("problem.inline", f"invalid operator descriptor: {e}")
    # canonical form, so that serialization round-trips
    return {"inline": instance.to_dict()}


def _parse_integrator(data):
    data = _mapping(data, "integrator")
    method = data.get("method", "rk4")
    if method not in METHODS:
        raise ConfigError("integrator.method", f"expected one of {METHODS}, got {method!r}")
    safety = _number(data.get("safety", 0.25), "integrator.safety", 0.0, exclusive=True)
    if safety > 1:
        raise ConfigError("integrator.safety", f"must be <= 1, got {safety}")
    record_every = data.get("record_every")
    if record_every is not None:
        record_every = _number(record_every, "integrator.record_every", 1, integer=True)
    return IntegratorConfig(
        method=method,
        t_end=_number(data.get("t_end", 100.0), "integrator.t_end", 0.0, exclusive=True),
        h_max=_number(data.get("h_max", 0.05), "integrator.h_max", 0.0, exclusive=True),
        safety=safety,
        record_every=record_every,
    )


def _parse_x0(value):
    if value in ("zeros", "default"):
        return value
    if isinstance(value, list) and value:
        return [_number(v, f"x0[{i}]") for i, v in enumerate(value)]
    raise ConfigError("x0", f"expected 'zeros', 'default' or a list of numbers, got {value!r}")


def parse_config(data):
    """
    Validate a config mapping.

    Raises:
        ConfigError: with the path of the offending field
    """
    data = _mapping(data, "<root>")
    unknown = set(data) - {"problem", "schedule", "integrator", "x0", "outputs", "discrete"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "problem" not in data:
        raise ConfigError("problem", "missing")

    try:
        schedule = Schedule.from_dict(_mapping(data["schedule"], "schedule")) if "schedule" in data else Schedule.canonical()
    except ScheduleError as e:
        raise ConfigError("schedule", str(e))

    outputs = dict(DEFAULT_OUTPUTS)
    for key, value in _mapping(data.get("outputs", {}), "outputs").items():
        if key not in DEFAULT_OUTPUTS:
            raise ConfigError(f"outputs.{key}", "unknown output")
        if not isinstance(value, str) or not value:
            raise ConfigError(f"outputs.{key}", "expected a non-empty path")
        outputs[key] = value

    discrete = None
    if data.get("discrete") is not None:
        d = _mapping(data["discrete"], "discrete")
        use_h1 = d.get("use_h1", True)
        if not isinstance(use_h1, bool):
            raise ConfigError("discrete.use_h1", "expected true or false")
        discrete = DiscreteConfig(N=_number(d.get("N"), "discrete.N", 1, integer=True), use_h1=use_h1)

    return RunConfig(
        problem=_parse_problem(data["problem"]),
        schedule=schedule,
        integrator=_parse_integrator(data.get("integrator", {})),
        x0=_parse_x0(data.get("x0", "default")),
        outputs=outputs,
        discrete=discrete,
    )


def load_config(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path} is not valid JSON: {e}")
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e}")
    logger.info(f"Loaded config {path}")
    return parse_config(data)


def resolve_problem(cfg):
    """NamedInstance for the configured problem."""
    problem = cfg.problem
    if "builtin" in problem:
        return builtin(problem["builtin"])
    if "random" in problem:
        r = problem["random"]
        return random_instance(r["seed"], r["dim"], r["gamma"])
    return named_from_instance("inline", ProblemInstance.from_dict(problem["inline"]))


def resolve_x0(cfg, named):
    dim = named.instance.dim
    if cfg.x0 == "zeros":
        return np.zeros(dim)
    if cfg.x0 == "default":
        return np.array(named.default_x0, dtype=float)
    x0 = np.array(cfg.x0, dtype=float)
    if x0.size != dim:
        raise ConfigError("x0", f"has dimension {x0.size}, the problem has {dim}")
    return x0
