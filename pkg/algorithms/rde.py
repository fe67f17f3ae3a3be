"""
Population dynamics for the smoothing-transform fixed point D^∞_{θ,(1)}
and the Ĥ samples built from it.
"""
import math
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

import util
from algorithms.cumulant import theta_star
from algorithms.displacement import DisplacementModel, nu
from errors import InsufficientDataError, RegimeError

logger = logging.getLogger(__name__)

POPULATION = 10 ** 5
ITERATIONS = 50


@dataclass(frozen=True, eq=False)
class Population:
    """
    Pool approximating the law of D. `drift_var` sums the conditional
    variances of the pool mean over all steps taken so far; its square root
    is the standard error of the mean drift away from 1.
    """
    pool: np.ndarray
    generation: int = 0
    mean_log: float = 0.0
    drift_var: float = 0.0

    @classmethod
    def constant(cls, size: int = POPULATION, value: float = 1.0) -> "Population":
        return cls(np.full(size, float(value)), 0, math.log(value), 0.0)

    @property
    def size(self) -> int:
        return self.pool.shape[0]

    @property
    def mean(self) -> float:
        return float(np.mean(self.pool))

    @property
    def drift_stderr(self) -> float:
        return math.sqrt(self.drift_var)


@dataclass(frozen=True, eq=False)
class HHatSample:
    values: np.ndarray
    rejected: int

    @property
    def rejected_fraction(self) -> float:
        total = self.values.size + self.rejected
        return self.rejected / total if total else 0.0


def smoothing_step(pop: Population, model_1: DisplacementModel, theta: float,
                   stream: np.random.Generator) -> Population:
    """New entry = sum_j e^{θ ξ_j - ν_1(θ)} Δ_j, Δ_j resampled from the old pool"""
    tilt = theta_star(model_1)
    if not tilt.below(theta):
        raise RegimeError(f"population dynamics needs theta < theta_(1) = {tilt.value}, got {theta}")

    size = pop.size
    counts, steps = model_1.sample_generation(stream, size)
    weights = np.exp(theta * steps - nu(model_1, theta))
    _, deltas = util.resample(pop.pool, steps.size, stream)
    owner = np.repeat(np.arange(size), counts)
    pool = np.bincount(owner, weights=weights * deltas, minlength=size)

    step_var = float(np.var(pool, ddof=1)) / size if size > 1 else 0.0
    return Population(pool, pop.generation + 1, float(np.mean(np.log(pool))), pop.drift_var + step_var)


def population_dynamics(model_1: DisplacementModel, theta: float, size: int = POPULATION,
                        iterations: int = ITERATIONS, stream: Optional[np.random.Generator] = None,
                        snapshots: Iterable[int] = ()) -> Tuple[Population, Dict[int, np.ndarray]]:
    """Iterates the smoothing transform from a pool of ones; returns the final pool and requested iterates"""
    rng = stream if stream is not None else util.stream(0, 0, "rde")
    wanted = set(snapshots)
    kept = {}
    pop = Population.constant(size)
    for _ in range(iterations):
        pop = smoothing_step(pop, model_1, theta, rng)
        if pop.generation in wanted:
            kept[pop.generation] = pop.pool.copy()
        logger.debug("step %d: mean %.6f, mean log %.6f", pop.generation, pop.mean, pop.mean_log)
    logger.info("population dynamics: %d steps of %d entries, mean %.5f (drift se %.5f)",
                iterations, size, pop.mean, pop.drift_stderr)
    return pop, kept


def h_hat_subcritical(pop, theta: float) -> np.ndarray:
    pool = pop.pool if isinstance(pop, Population) else np.asarray(pop, dtype=float)
    return np.log(pool) / theta


def h_hat_critical(d_samples: Sequence[float], theta1: float, sigma1_sq: float) -> HHatSample:
    """Ĥ = (log d + log(2 / (π σ_1^2)) / 2) / θ_(1) over the positive draws"""
    d = np.asarray(d_samples, dtype=float)
    kept = d[d > 0]
    rejected = int(d.size - kept.size)
    if kept.size == 0:
        raise InsufficientDataError(f"all {d.size} derivative-statistic draws are non-positive")
    if rejected:
        logger.warning("rejected %d of %d non-positive derivative-statistic draws", rejected, d.size)
    values = (np.log(kept) + 0.5 * math.log(2.0 / (math.pi * sigma1_sq))) / theta1
    return HHatSample(values, rejected)


def first_block_h_hat(results, model_1: DisplacementModel, theta: float, q1: int) -> np.ndarray:
    """(1/θ) log(W_{q_1}(θ) e^{-q_1 ν_1(θ)}) per replicate, the finite-q_1 proxy of Ĥ^∞_{θ,(1)}"""
    shift = q1 * nu(model_1, theta)
    return np.array([(r.first_block_log_w - shift) / theta for r in results])
