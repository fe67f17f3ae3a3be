"""
Experiment configuration: YAML files, per-preset defaults and schedule specs.

A config file holds one nested mapping. Every key is optional; whatever the
file leaves out is taken from the defaults of its preset. Unknown keys at any
level are errors naming their dotted path, e.g. `models[1].sigma`.
"""
import os
import copy
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import yaml

import util
from algorithms.cumulant import theta_star
from algorithms.displacement import DisplacementModel, model_from_spec
from algorithms.simulator import CHUNK_SIZE, PARTICLE_BUDGET, Schedule
from errors import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV = "LPMBRW_SEED"
WORKERS_ENV = "LPMBRW_WORKERS"

FORMATS = ("csv", "json-lines")
SCHEDULE_KINDS = ("explicit", "proportional", "slow_first")
DEFAULT_LADDER = (8, 12, 16, 20)

TOP_KEYS = {"preset", "models", "contrast_models", "schedule", "theta", "reps", "master_seed", "workers",
            "topk", "particle_budget", "chunk_size", "waive_assumptions", "output", "tests", "rde"}

# acceptance thresholds and levels; a config's `tests` mapping overrides them key by key
TEST_DEFAULTS = {
    "alpha": 0.05,
    "coupling_alpha": 0.01,
    "coupling": 0.04,
    "limit": 0.05,
    "z1_only": 0.06,
    "critical": 0.07,
    "gap": 0.05,
    "rde_iterate": 0.02,
    "rde_match": 0.08,
    "lln_eps": 0.1,
    "ratio_eps": 0.25,
    "ratio_final": 0.2,
    "mean_se": 3.0,
    "theta_star_tol": 1e-8,
    "sigma1_rel": 0.01,
    "fz_tol": 1e-6,
}

RDE_DEFAULTS = {"population": 10 ** 5, "iterations": 50, "snapshot": 40}

_PAIR = [{"kind": "gaussian_binary", "sigma": 2.0}, {"kind": "gaussian_binary", "sigma": 1.0}]
_HALVES = {"kind": "proportional", "alpha": [0.5, 0.5]}

PRESET_DEFAULTS = {
    "theta-star": {
        "models": [{"kind": "gaussian_binary", "sigma": s} for s in (0.5, 1.0, 2.0)],
        "schedule": {"kind": "explicit", "q": [1, 1, 1]},
        "reps": 1,
    },
    "coupling": {
        "models": [{"kind": "gaussian_binary", "sigma": 1.0}],
        "schedule": {"kind": "explicit", "q": [8]},
        "theta": 0.5,
        "reps": 5000,
    },
    "mean-one": {
        "models": _PAIR,
        "schedule": {"kind": "explicit", "q": [8, 8]},
        "theta": 0.5,
        "reps": 5000,
    },
    "lln": {
        "models": _PAIR,
        "schedule": dict(_HALVES, ladder=[8, 12, 16, 20]),
        "theta": 0.5,
        "reps": 2000,
    },
    "limit-stability": {
        "models": _PAIR,
        "contrast_models": [{"kind": "gaussian_binary", "sigma": 2.0}, {"kind": "gaussian_binary", "sigma": 0.5}],
        "schedule": dict(_HALVES, ladder=[12, 20]),
        "theta": 0.5,
        "reps": 5000,
    },
    "critical-stability": {
        "models": _PAIR,
        "schedule": dict(_HALVES, ladder=[16, 20]),
        "theta": "critical",
        "reps": 5000,
    },
    "rde-match": {
        "models": _PAIR,
        "schedule": dict(_HALVES, ladder=[20]),
        "theta": 0.5,
        "reps": 5000,
    },
    "gap": {
        "models": _PAIR,
        "schedule": {"kind": "explicit", "q": [8, 8]},
        "theta": 0.5,
        "reps": 5000,
    },
    "ratio": {
        "models": _PAIR,
        "schedule": dict(_HALVES, ladder=[8, 12, 16, 20]),
        "theta": 0.5,
        "reps": 2000,
    },
    "fz-example": {
        "models": _PAIR,
        "schedule": dict(_HALVES, ladder=[12, 16]),
        "theta": "critical",
        "reps": 1000,
    },
    "sheave": {
        "models": _PAIR,
        "schedule": {"kind": "slow_first", "alpha": [1.0], "ladder": [16, 20]},
        "theta": 0.25,
        "reps": 5000,
    },
}


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    q: Tuple[int, ...] = ()
    alpha: Tuple[float, ...] = ()
    ladder: Tuple[int, ...] = ()

    @property
    def blocks(self) -> int:
        if self.kind == "explicit":
            return len(self.q)
        if self.kind == "proportional":
            return len(self.alpha)
        return len(self.alpha) + 1

    @property
    def ns(self) -> Tuple[int, ...]:
        """Generation counts the schedule is run at"""
        if self.kind == "explicit":
            return (sum(self.q),)
        return self.ladder

    def alphas(self, n: int) -> Tuple[float, ...]:
        """Block proportions at n, the weights of the law-of-large-numbers target"""
        if self.kind == "proportional":
            return self.alpha
        q = resolve_schedule(self, n).q
        return tuple(qi / n for qi in q)

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": self.kind, "q": list(self.q)}
        return {"kind": self.kind, "alpha": list(self.alpha), "ladder": list(self.ladder)}


def resolve_schedule(spec: ScheduleSpec, n: int) -> Schedule:
    """Block lengths for n generations; the rounding remainder always goes to the last block"""
    if spec.kind == "explicit":
        if n != sum(spec.q):
            raise ConfigError("schedule.q", f"explicit blocks {list(spec.q)} hold {sum(spec.q)} generations, not {n}")
        return Schedule(spec.q)
    try:
        if spec.kind == "proportional":
            return Schedule.proportional(spec.alpha, n)
        if spec.kind == "slow_first":
            return Schedule.slow_first(spec.alpha, n)
    except ValueError as e:
        raise ConfigError("schedule.alpha", str(e))
    raise ConfigError("schedule.kind", f"unknown schedule kind {spec.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    models: Tuple[DisplacementModel, ...]
    schedule: ScheduleSpec
    theta: Union[float, str] = 0.5
    reps: int = 1000
    master_seed: int = 0
    workers: int = 1
    topk: int = 8
    particle_budget: int = PARTICLE_BUDGET
    chunk_size: int = CHUNK_SIZE
    waive_assumptions: bool = False
    contrast_models: Tuple[DisplacementModel, ...] = ()
    output_dir: str = "results"
    fmt: str = "csv"
    tests: dict = field(default_factory=lambda: dict(TEST_DEFAULTS))
    rde: dict = field(default_factory=lambda: dict(RDE_DEFAULTS))

    def resolved_theta(self) -> float:
        """The numeric tilt; "critical" means θ_(1) of the first block"""
        if self.theta != "critical":
            return float(self.theta)
        tilt = theta_star(self.models[0])
        if tilt.infinite:
            raise ConfigError("theta", f"the first block ({self.models[0].kind}) has no finite critical tilt")
        return tilt.value

    def schedules(self):
        return [resolve_schedule(self.schedule, n) for n in self.schedule.ns]

    def to_dict(self) -> dict:
        """Canonical record of the resolved config; its hash identifies a run"""
        return {
            "preset": self.preset,
            "models": [m.to_spec() for m in self.models],
            "contrast_models": [m.to_spec() for m in self.contrast_models],
            "schedule": self.schedule.to_dict(),
            "theta": self.theta,
            "reps": self.reps,
            "master_seed": self.master_seed,
            "topk": self.topk,
            "particle_budget": self.particle_budget,
            "chunk_size": self.chunk_size,
            "waive_assumptions": self.waive_assumptions,
            "tests": dict(sorted(self.tests.items())),
            "rde": dict(sorted(self.rde.items())),
        }

    def hash(self) -> str:
        # workers and output paths never change the numbers, so they stay out of the hash
        return util.config_hash(self.to_dict())


def _int(record, key, path, minimum=None):
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be at least {minimum}, got {value}")
    return value


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _models(specs, path):
    if not isinstance(specs, list):
        raise ConfigError(path, "expected a list of model records")
    return tuple(model_from_spec(spec, f"{path}[{i}]") for i, spec in enumerate(specs))


def _schedule(record):
    util.check_keys(record, "schedule", {"kind", "q", "alpha", "ladder"}, required=("kind",))
    kind = record["kind"]
    if kind not in SCHEDULE_KINDS:
        raise ConfigError("schedule.kind", f"expected one of {SCHEDULE_KINDS}, got {kind!r}")
    if kind == "explicit":
        util.check_keys(record, "schedule", {"kind", "q"}, required=("q",))
        q = record["q"]
        if not isinstance(q, list) or not q:
            raise ConfigError("schedule.q", "expected a non-empty list of block lengths")
        for i, qi in enumerate(q):
            if isinstance(qi, bool) or not isinstance(qi, int) or qi < 1:
                raise ConfigError(f"schedule.q[{i}]", f"expected a positive integer, got {qi!r}")
        return ScheduleSpec(kind, q=tuple(q))

    util.check_keys(record, "schedule", {"kind", "alpha", "ladder"}, required=("alpha",))
    alpha = record["alpha"]
    if not isinstance(alpha, list) or (kind == "proportional" and not alpha):
        raise ConfigError("schedule.alpha", "expected a list of block proportions")
    alpha = tuple(_number(a, f"schedule.alpha[{i}]") for i, a in enumerate(alpha))
    if any(a <= 0 for a in alpha):
        raise ConfigError("schedule.alpha", "block proportions must be positive")
    if alpha and abs(sum(alpha) - 1.0) > 1e-12:
        raise ConfigError("schedule.alpha", f"block proportions must sum to 1, got {sum(alpha)!r}")
    ladder = record.get("ladder", list(DEFAULT_LADDER))
    if not isinstance(ladder, list) or not ladder:
        raise ConfigError("schedule.ladder", "expected a non-empty list of generation counts")
    for i, n in enumerate(ladder):
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"schedule.ladder[{i}]", f"expected a positive integer, got {n!r}")
    if list(ladder) != sorted(set(ladder)):
        raise ConfigError("schedule.ladder", "generation counts must be strictly increasing")
    return ScheduleSpec(kind, alpha=alpha, ladder=tuple(ladder))


def _overrides(record, key, defaults):
    values = record.get(key, {}) or {}
    util.check_keys(values, key, set(defaults))
    merged = dict(defaults)
    for name, value in values.items():
        merged[name] = _number(value, f"{key}.{name}")
    return merged


def from_dict(record: dict) -> ExperimentConfig:
    """Validates a merged config record; every problem is a ConfigError naming its field"""
    util.check_keys(record, "", TOP_KEYS, required=("preset",))
    preset = record["preset"]
    if preset not in PRESET_DEFAULTS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESET_DEFAULTS)}")

    models = _models(record.get("models", []), "models")
    if not models:
        raise ConfigError("models", "at least one model is required")
    contrast = _models(record.get("contrast_models", []) or [], "contrast_models")

    if "schedule" not in record:
        raise ConfigError("schedule", "missing required key")
    schedule = _schedule(record["schedule"])
    if schedule.blocks != len(models):
        raise ConfigError("schedule", f"{schedule.blocks} blocks for {len(models)} models")
    if contrast and len(contrast) != len(models):
        raise ConfigError("contrast_models", f"expected {len(models)} models, got {len(contrast)}")
    for n in schedule.ns:
        if n < schedule.blocks:
            raise ConfigError("schedule.ladder", f"n={n} cannot fill {schedule.blocks} non-empty blocks")
        q = resolve_schedule(schedule, n).q
        if min(q) == 0:
            raise ConfigError("schedule", f"n={n} resolves to q={q} with an empty block")

    theta = record.get("theta", 0.5)
    if theta != "critical":
        theta = _number(theta, "theta")
        if not theta > 0:
            raise ConfigError("theta", f"must be positive or 'critical', got {theta}")

    output = record.get("output", {}) or {}
    util.check_keys(output, "output", {"dir", "format"})
    fmt = output.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("output.format", f"expected one of {FORMATS}, got {fmt!r}")

    rde = _overrides(record, "rde", RDE_DEFAULTS)
    for key in rde:
        rde[key] = int(rde[key])
    if not 0 < rde["snapshot"] < rde["iterations"]:
        raise ConfigError("rde.snapshot", "must lie strictly between 0 and rde.iterations")

    values = dict(record)
    for key, minimum in (("reps", 1), ("master_seed", 0), ("workers", 1), ("topk", 1),
                         ("particle_budget", 1), ("chunk_size", 1)):
        if key in values:
            values[key] = _int(values, key, key, minimum)

    config = ExperimentConfig(
        preset=preset,
        models=models,
        schedule=schedule,
        theta=theta,
        reps=values.get("reps", 1000),
        master_seed=values.get("master_seed", 0),
        workers=values.get("workers", 1),
        topk=values.get("topk", 8),
        particle_budget=values.get("particle_budget", PARTICLE_BUDGET),
        chunk_size=values.get("chunk_size", CHUNK_SIZE),
        waive_assumptions=bool(values.get("waive_assumptions", False)),
        contrast_models=contrast,
        output_dir=str(output.get("dir", "results")),
        fmt=fmt,
        tests=_overrides(record, "tests", TEST_DEFAULTS),
        rde=rde,
    )
    if theta == "critical":
        config.resolved_theta()
    return config


def _environment(record):
    for env, key in ((SEED_ENV, "master_seed"), (WORKERS_ENV, "workers")):
        value = os.environ.get(env)
        if value is None:
            continue
        try:
            record[key] = int(value)
        except ValueError:
            raise ConfigError(key, f"environment variable {env}={value!r} is not an integer")
        logger.debug("%s=%s taken from %s", key, value, env)


def load_config(path: Optional[str] = None, preset: Optional[str] = None, **overrides) -> ExperimentConfig:
    """
    Reads a YAML config (if any), fills the gaps from the preset's defaults and
    applies environment then keyword overrides (seed, workers, out, fmt).

    :param preset: preset name; takes precedence over the file's `preset`
    """
    record = {}
    if path is not None:
        try:
            with open(path) as f:
                record = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(path, f"not valid YAML: {e}")
        except OSError as e:
            raise ConfigError(path, e.strerror or str(e))
        if not isinstance(record, dict):
            raise ConfigError(path, "the top level must be a mapping")

    name = preset or record.get("preset")
    if name is None:
        raise ConfigError("preset", "no preset given in the file or on the command line")
    if name not in PRESET_DEFAULTS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESET_DEFAULTS)}")

    merged = copy.deepcopy(PRESET_DEFAULTS[name])
    merged.update(record)
    merged["preset"] = name
    _environment(merged)

    output = dict(merged.get("output", {}) or {})
    if overrides.get("seed") is not None:
        merged["master_seed"] = overrides["seed"]
    if overrides.get("workers") is not None:
        merged["workers"] = overrides["workers"]
    if overrides.get("out") is not None:
        output["dir"] = overrides["out"]
    if overrides.get("fmt") is not None:
        output["format"] = overrides["fmt"]
    if output:
        merged["output"] = output

    config = from_dict(merged)
    logger.debug("resolved config for %s: %s", name, config.to_dict())
    return config
