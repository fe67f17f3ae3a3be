"""
Per-generation reproduction-and-displacement laws.

A model describes one generation of a block: how many children a particle
has and where they land relative to it. Models are frozen and hashable, so
they can be shared between worker processes and used as cache keys.
"""
import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.stats
from scipy.special import logsumexp

import util
from errors import ConfigError, DomainError, InvalidModelError

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
MC_DRAWS = 10 ** 6
DIFF_STEP = 1e-4


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


@dataclass(frozen=True)
class OffspringLaw:
    """Law of the offspring count N.

    * constant: N = value
    * categorical: N = values[i] with probability probs[i]
    * shifted_poisson: N = 1 + Poisson(rate)
    """
    kind: str = "constant"
    value: int = 2
    values: Tuple[int, ...] = ()
    probs: Tuple[float, ...] = ()
    rate: float = 1.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.value < 0:
                raise InvalidModelError("offspring count must be non-negative")
        elif self.kind == "categorical":
            if len(self.values) == 0 or len(self.values) != len(self.probs):
                raise InvalidModelError("categorical offspring needs matching values and probs")
            if min(self.values) < 0 or min(self.probs) < 0:
                raise InvalidModelError("categorical offspring values and probs must be non-negative")
            if abs(sum(self.probs) - 1.0) > 1e-12:
                raise InvalidModelError("categorical offspring probs must sum to 1")
        elif self.kind == "shifted_poisson":
            if self.rate < 0:
                raise InvalidModelError("poisson rate must be non-negative")
        else:
            raise InvalidModelError(f"unknown offspring law {self.kind!r}")

    def mean(self) -> float:
        return self.moment(1.0)

    def moment(self, r: float) -> float:
        """E[N^r]"""
        if self.kind == "constant":
            return float(self.value) ** r
        if self.kind == "categorical":
            return float(sum(p * float(v) ** r for v, p in zip(self.values, self.probs)))
        if r == 1.0:
            return 1.0 + self.rate
        return float(scipy.stats.poisson.expect(lambda k: (1.0 + k) ** r, args=(self.rate,)))

    def prob(self, k: int) -> float:
        if self.kind == "constant":
            return 1.0 if k == self.value else 0.0
        if self.kind == "categorical":
            return float(sum(p for v, p in zip(self.values, self.probs) if v == k))
        return float(scipy.stats.poisson.pmf(k - 1, self.rate))

    def minimum(self) -> int:
        if self.kind == "constant":
            return self.value
        if self.kind == "categorical":
            return min(v for v, p in zip(self.values, self.probs) if p > 0)
        return 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self.value, dtype=np.int64)
        if self.kind == "categorical":
            return rng.choice(np.asarray(self.values, dtype=np.int64), size=size, p=np.asarray(self.probs))
        return 1 + rng.poisson(self.rate, size=size)


@dataclass(frozen=True)
class StepLaw:
    """Law of a single displacement.

    `scipy` laws are looked up by name in scipy.stats and have no closed-form
    log-MGF; params is a tuple of (keyword, value) pairs.
    """
    kind: str = "normal"
    value: float = 0.0
    mean: float = 0.0
    sd: float = 1.0
    name: str = ""
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind == "normal" and self.sd < 0:
            raise InvalidModelError("normal step needs sd >= 0")
        if self.kind == "scipy":
            dist = getattr(scipy.stats, self.name, None)
            if not isinstance(dist, scipy.stats.rv_continuous):
                raise InvalidModelError(f"{self.name!r} is not a continuous scipy.stats law")
        elif self.kind not in ("constant", "normal"):
            raise InvalidModelError(f"unknown step law {self.kind!r}")

    def frozen(self):
        return getattr(scipy.stats, self.name)(**dict(self.params))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, float(self.value))
        if self.kind == "normal":
            return rng.normal(self.mean, self.sd, size=size)
        return np.asarray(self.frozen().rvs(size=size, random_state=rng), dtype=float)

    def log_mgf(self, a: float):
        """(log E[e^{aξ}], first derivative, second derivative) or None"""
        if self.kind == "constant":
            return self.value * a, float(self.value), 0.0
        if self.kind == "normal":
            s2 = self.sd ** 2
            return self.mean * a + 0.5 * s2 * a * a, self.mean + s2 * a, s2
        return None

    def is_degenerate(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "normal":
            return self.sd == 0
        return bool(self.frozen().var() == 0)


class DisplacementModel:
    """Common interface of the per-generation point processes Z_i"""

    kind = ""
    # declared (A1) bound: ν is finite on (-domain_bound, inf)
    domain_bound = math.inf

    def sample_generation(self, rng: np.random.Generator, parents: int):
        """Returns (offspring counts per parent, displacements of all children)"""
        raise NotImplementedError

    def log_mgf(self, a: float):
        """Closed-form (ν, ν', ν'') at a, or None when only Monte Carlo is available"""
        raise NotImplementedError

    def offspring(self) -> OffspringLaw:
        raise NotImplementedError

    def degenerate_displacements(self) -> bool:
        """True when all children land on one common point almost surely"""
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError

    @property
    def mc_draws(self) -> int:
        return MC_DRAWS

    @property
    def mc_seed(self) -> int:
        return 0


@dataclass(frozen=True)
class GaussianBinary(DisplacementModel):
    sigma: float = 1.0
    kind = "gaussian_binary"

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidModelError("gaussian_binary needs sigma > 0")

    def sample_generation(self, rng, parents):
        return np.full(parents, 2, dtype=np.int64), rng.normal(0.0, self.sigma, size=2 * parents)

    def log_mgf(self, a):
        s2 = self.sigma ** 2
        return LOG2 + 0.5 * s2 * a * a, s2 * a, s2

    def offspring(self):
        return OffspringLaw("constant", value=2)

    def degenerate_displacements(self):
        return False

    def to_spec(self):
        return {"kind": self.kind, "sigma": self.sigma}


@dataclass(frozen=True)
class DeterministicTwoPoint(DisplacementModel):
    a: float = 1.0
    b: float = -1.0
    kind = "deterministic_two_point"

    def sample_generation(self, rng, parents):
        return np.full(parents, 2, dtype=np.int64), np.tile(np.array([self.a, self.b], dtype=float), parents)

    def log_mgf(self, t):
        nu = float(np.logaddexp(t * self.a, t * self.b))
        p = math.exp(t * self.a - nu)
        return nu, p * self.a + (1.0 - p) * self.b, p * (1.0 - p) * (self.a - self.b) ** 2

    def offspring(self):
        return OffspringLaw("constant", value=2)

    def degenerate_displacements(self):
        return self.a == self.b

    def to_spec(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class GenericIID(DisplacementModel):
    """N children with i.i.d. displacements independent of N"""
    offspring_law: OffspringLaw = field(default_factory=OffspringLaw)
    step: StepLaw = field(default_factory=StepLaw)
    domain_bound: float = math.inf
    draws: int = MC_DRAWS
    seed: int = 0
    kind = "generic_iid"

    def __post_init__(self):
        if not self.domain_bound > 0:
            logger.debug("generic_iid declared with non-positive domain bound %s", self.domain_bound)
        if self.draws < 1:
            raise InvalidModelError("generic_iid needs a positive Monte Carlo budget")

    def sample_generation(self, rng, parents):
        counts = self.offspring_law.sample(rng, parents)
        return counts, self.step.sample(rng, int(counts.sum()))

    def log_mgf(self, a):
        step = self.step.log_mgf(a)
        if step is None:
            return None
        return math.log(self.offspring_law.mean()) + step[0], step[1], step[2]

    def offspring(self):
        return self.offspring_law

    def degenerate_displacements(self):
        return self.step.is_degenerate()

    @property
    def mc_draws(self):
        return self.draws

    @property
    def mc_seed(self):
        return self.seed

    def to_spec(self):
        offspring = {"kind": self.offspring_law.kind}
        if self.offspring_law.kind == "constant":
            offspring["value"] = self.offspring_law.value
        elif self.offspring_law.kind == "categorical":
            offspring["values"] = list(self.offspring_law.values)
            offspring["probs"] = list(self.offspring_law.probs)
        else:
            offspring["rate"] = self.offspring_law.rate
        step = {"kind": self.step.kind}
        if self.step.kind == "constant":
            step["value"] = self.step.value
        elif self.step.kind == "normal":
            step.update(mean=self.step.mean, sd=self.step.sd)
        else:
            step.update(name=self.step.name, params=dict(self.step.params))
        return {"kind": self.kind, "offspring": offspring, "step": step,
                "domain_bound": self.domain_bound, "mc_draws": self.draws, "mc_seed": self.seed}


@dataclass(frozen=True)
class AssumptionReport:
    a1_ok: bool
    vartheta: float
    a2_ok: bool
    a2_clause: Optional[str]
    a3_ok: bool
    p: float
    messages: Tuple[str, ...] = ()

    @property
    def ok(self):
        return self.a1_ok and self.a2_ok and self.a3_ok


def sample(model: DisplacementModel, stream: np.random.Generator) -> list:
    _, steps = model.sample_generation(stream, 1)
    return steps.tolist()


def _check_domain(model, a):
    if not np.isfinite(a) or not a > -model.domain_bound:
        raise DomainError(f"a={a} is outside the finiteness domain (-{model.domain_bound}, inf) of {model.kind}")


@lru_cache(maxsize=8)
def _mc_sample(model: DisplacementModel):
    rng = util.stream(model.mc_seed, 0, "mc")
    counts, steps = model.sample_generation(rng, model.mc_draws)
    owner = np.repeat(np.arange(model.mc_draws), counts)
    logger.debug("drew %d realizations (%d children) for %s", model.mc_draws, steps.size, model.kind)
    return steps, owner


def nu_monte_carlo(model: DisplacementModel, a: float) -> MonteCarloEstimate:
    """
    Monte Carlo estimate of ν(a) with its standard error.
    The realizations are drawn once per model from its `mc_seed`, so the
    estimate is a deterministic function of a.
    """
    _check_domain(model, a)
    steps, owner = _mc_sample(model)
    exponents = a * steps
    value = float(logsumexp(exponents) - math.log(model.mc_draws))
    top = float(np.max(exponents)) if exponents.size else 0.0
    totals = np.bincount(owner, weights=np.exp(exponents - top), minlength=model.mc_draws)
    stderr = float(np.std(totals, ddof=1) / (np.mean(totals) * math.sqrt(model.mc_draws)))
    return MonteCarloEstimate(value, stderr)


def nu(model: DisplacementModel, a: float) -> float:
    _check_domain(model, a)
    closed = model.log_mgf(a)
    if closed is not None:
        return float(closed[0])
    return nu_monte_carlo(model, a).value


def nu_derivatives(model: DisplacementModel, a: float):
    """Returns (ν(a), ν'(a), ν''(a)); central differences when there is no closed form"""
    _check_domain(model, a)
    closed = model.log_mgf(a)
    if closed is not None:
        return tuple(float(v) for v in closed)
    h = DIFF_STEP
    lo, mid, hi = (nu_monte_carlo(model, x).value for x in (a - h, a, a + h))
    return mid, (hi - lo) / (2 * h), (hi - 2 * mid + lo) / (h * h)


def validate(model: DisplacementModel, p: float = 1.0) -> AssumptionReport:
    messages = []

    vartheta = model.domain_bound
    a1_ok = vartheta > 0
    if not a1_ok:
        messages.append(f"(A1) nu finite on (-vartheta, inf) needs vartheta > 0, declared {vartheta}")

    offspring = model.offspring()
    a2_clause = None
    if offspring.minimum() < 1:
        a2_clause = "P(N_i>=1)=1"
    elif offspring.prob(1) >= 1.0:
        a2_clause = "P(N_i=1)<1"
    elif model.degenerate_displacements():
        a2_clause = "P(Z_i({a})=N_i)<1"
    a2_ok = a2_clause is None
    if not a2_ok:
        messages.append(f"(A2) clause {a2_clause} fails for {model.kind}")

    moment = offspring.moment(1.0 + p)
    a3_ok = p > 0 and bool(np.isfinite(moment))
    if not a3_ok:
        messages.append(f"(A3) E[N^(1+p)] finite fails at p={p}")

    return AssumptionReport(a1_ok, vartheta, a2_ok, a2_clause, a3_ok, p, tuple(messages))


def model_from_spec(spec: dict, path: str = "models[0]") -> DisplacementModel:
    util.check_keys(spec, path, {"kind", "sigma", "a", "b", "offspring", "step",
                                 "domain_bound", "mc_draws", "mc_seed"}, required=("kind",))
    kind = spec["kind"]
    try:
        if kind == "gaussian_binary":
            util.check_keys(spec, path, {"kind", "sigma"}, required=("sigma",))
            return GaussianBinary(float(spec["sigma"]))
        if kind == "deterministic_two_point":
            util.check_keys(spec, path, {"kind", "a", "b"}, required=("a", "b"))
            return DeterministicTwoPoint(float(spec["a"]), float(spec["b"]))
        if kind == "generic_iid":
            util.check_keys(spec, path, {"kind", "offspring", "step", "domain_bound", "mc_draws", "mc_seed"},
                            required=("offspring", "step"))
            return GenericIID(
                offspring_law=_offspring_from_spec(spec["offspring"], f"{path}.offspring"),
                step=_step_from_spec(spec["step"], f"{path}.step"),
                domain_bound=float(spec.get("domain_bound", math.inf)),
                draws=int(spec.get("mc_draws", MC_DRAWS)),
                seed=int(spec.get("mc_seed", 0)),
            )
    except ConfigError:
        raise
    except InvalidModelError as e:
        raise ConfigError(path, str(e))
    except (TypeError, ValueError) as e:
        raise ConfigError(path, f"bad parameter: {e}")
    raise ConfigError(f"{path}.kind", f"unknown model kind {kind!r}")


def _offspring_from_spec(spec, path):
    util.check_keys(spec, path, {"kind", "value", "values", "probs", "rate"}, required=("kind",))
    kind = spec["kind"]
    if kind == "constant":
        return OffspringLaw(kind, value=int(spec.get("value", 2)))
    if kind == "categorical":
        return OffspringLaw(kind, values=tuple(int(v) for v in spec.get("values", ())),
                            probs=tuple(float(p) for p in spec.get("probs", ())))
    if kind == "shifted_poisson":
        return OffspringLaw(kind, rate=float(spec.get("rate", 1.0)))
    raise ConfigError(f"{path}.kind", f"unknown offspring law {kind!r}")


def _step_from_spec(spec, path):
    util.check_keys(spec, path, {"kind", "value", "mean", "sd", "name", "params"}, required=("kind",))
    kind = spec["kind"]
    if kind == "constant":
        return StepLaw(kind, value=float(spec.get("value", 0.0)))
    if kind == "normal":
        return StepLaw(kind, mean=float(spec.get("mean", 0.0)), sd=float(spec.get("sd", 1.0)))
    if kind == "scipy":
        params = spec.get("params", {}) or {}
        util.check_keys(params, f"{path}.params", set(params))
        return StepLaw(kind, name=str(spec.get("name", "")),
                       params=tuple(sorted((str(k), float(v)) for k, v in params.items())))
    raise ConfigError(f"{path}.kind", f"unknown step law {kind!r}")
