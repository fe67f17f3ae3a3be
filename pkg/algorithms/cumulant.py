"""
Critical tilts, centering sequences and the constants built from them.
"""
import math
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

import util
from algorithms.displacement import (
    DeterministicTwoPoint, DisplacementModel, GaussianBinary, GenericIID,
    MonteCarloEstimate, nu, nu_derivatives, validate,
)
from errors import InvalidModelError, RegimeError

logger = logging.getLogger(__name__)

CAP = 64.0
TOL = 1e-10
CRITICAL_TOL = 1e-8
SQRT_2LOG2 = math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class CriticalTilt:
    """
    θ_(i) of one block. When no tangent from the origin exists below `cap`
    the tilt is infinite: `value` is None and `certificate` holds g(cap) <= 0.
    """
    value: Optional[float]
    bracket: Tuple[float, float]
    residual: float
    cap: float
    certificate: Optional[float] = None

    @property
    def infinite(self) -> bool:
        return self.value is None

    def below(self, theta: float) -> bool:
        """True when theta lies strictly below this tilt"""
        return self.infinite or theta < self.value


@dataclass(frozen=True)
class CenteringSpec:
    theta: float
    terms: Tuple[float, ...]
    critical: bool
    log_correction: float
    total: float
    n: int


@dataclass(frozen=True)
class FzConstants:
    lpm_linear: float
    lpm_log: float
    fz_linear: float
    fz_log: float
    # generic critical centering minus (n*lpm_linear - log(n)*lpm_log) when q1 = n/2
    offset: float


def tangency_gap(model: DisplacementModel, a: float) -> float:
    """g(a) = a ν'(a) - ν(a); negative at 0 and strictly increasing for A2-valid models"""
    value, slope, _ = nu_derivatives(model, a)
    return a * slope - value


def theta_star(model: DisplacementModel, cap: float = CAP, tol: float = TOL,
               check_assumptions: bool = True) -> CriticalTilt:
    if check_assumptions:
        report = validate(model)
        if not report.a2_ok:
            raise InvalidModelError(f"theta_star needs (A2); clause {report.a2_clause} fails for {model.kind}")
    return _theta_star(model, float(cap), float(tol))


@lru_cache(maxsize=64)
def _theta_star(model, cap, tol):
    def g(a):
        return tangency_gap(model, a)

    lo, hi = 0.0, tol
    g_hi = g(hi)
    # g tends to 0 from below for bounded steps and rounds to 0.0 far out; only a
    # strictly positive value brackets a tangent
    while g_hi <= 0:
        if hi >= cap:
            logger.debug("no tangent below cap %s for %s (g(cap)=%.3e)", cap, model.kind, g_hi)
            return CriticalTilt(None, (lo, hi), abs(g_hi), cap, certificate=g_hi)
        lo, hi = hi, min(2.0 * hi, cap)
        g_hi = g(hi)
    logger.debug("bracketed critical tilt of %s in [%.6g, %.6g]", model.kind, lo, hi)

    root = scipy.optimize.bisect(g, lo, hi, xtol=tol / 2, maxiter=500)
    return CriticalTilt(root, (max(root - tol, 0.0), root + tol), abs(g(root)), cap)


def regime(models: Sequence[DisplacementModel], theta: float, tol: float = CRITICAL_TOL) -> str:
    """Classifies theta as 'subcritical', 'critical' or 'above-boundary'"""
    tilts = [theta_star(m) for m in models]
    first, rest = tilts[0], tilts[1:]
    if not first.infinite and abs(theta - first.value) < tol and all(t.below(first.value) for t in rest):
        return "critical"
    if all(t.below(theta) for t in tilts):
        return "subcritical"
    return "above-boundary"


def centering(models: Sequence[DisplacementModel], schedule, theta: float, critical: bool = False,
              tol: float = CRITICAL_TOL) -> CenteringSpec:
    q = tuple(schedule.q)
    if len(q) != len(models):
        raise RegimeError(f"schedule has {len(q)} blocks but {len(models)} models were given")
    if not theta > 0:
        raise RegimeError("theta must be positive")

    found = regime(models, theta, tol)
    wanted = "critical" if critical else "subcritical"
    if found != wanted:
        raise RegimeError(f"theta={theta!r} is {found}, centering was requested for the {wanted} regime")

    terms = tuple(qi * nu(m, theta) / theta for qi, m in zip(q, models))
    log_correction = 0.0
    if critical:
        if q[0] < 1:
            raise RegimeError("critical centering needs a non-empty first block")
        log_correction = -math.log(q[0]) / (2.0 * theta)
    return CenteringSpec(theta, terms, critical, log_correction, sum(terms) + log_correction, sum(q))


def centering_target(models: Sequence[DisplacementModel], alphas: Sequence[float], theta: float) -> float:
    """Limit of R*_n / n for proportional schedules"""
    return sum(alpha * nu(m, theta) / theta for alpha, m in zip(alphas, models))


def sigma1_sq(model: DisplacementModel, theta1: float, mc_budget: int = 10 ** 6, method: str = "auto",
              stream: Optional[np.random.Generator] = None) -> MonteCarloEstimate:
    """
    E[sum_{|v|=1} (θ S_v - ν(θ))^2 e^{θ S_v - ν(θ)}] at θ = theta1.

    :param method: 'auto' (closed form when the model has one), 'exact' or 'monte_carlo'
    :param stream: generator for the Monte Carlo path, defaults to the model's own mc stream
    :return: value with its standard error (zero for closed forms)
    """
    tilt = theta_star(model, check_assumptions=False)
    if tilt.infinite or abs(theta1 - tilt.value) > CRITICAL_TOL:
        logger.warning("sigma1_sq evaluated at theta=%s, away from the critical tilt of %s", theta1, model.kind)

    if method in ("auto", "exact"):
        exact = _sigma1_sq_exact(model, theta1)
        if exact is not None:
            return MonteCarloEstimate(exact, 0.0)
        if method == "exact":
            raise InvalidModelError(f"no closed form for sigma1_sq of {model.kind}")
    elif method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")

    if mc_budget < 10 ** 4:
        raise ValueError("sigma1_sq Monte Carlo needs at least 10^4 draws")
    rng = stream if stream is not None else util.stream(model.mc_seed, 1, "mc")
    counts, steps = model.sample_generation(rng, mc_budget)
    x = theta1 * steps - nu(model, theta1)
    owner = np.repeat(np.arange(mc_budget), counts)
    totals = np.bincount(owner, weights=x * x * np.exp(x), minlength=mc_budget)
    return MonteCarloEstimate(float(np.mean(totals)), float(np.std(totals, ddof=1) / math.sqrt(mc_budget)))


def _sigma1_sq_exact(model, theta):
    value = nu(model, theta)
    if isinstance(model, GaussianBinary):
        s2 = (theta * model.sigma) ** 2
        return (s2 - value) ** 2 + s2
    if isinstance(model, DeterministicTwoPoint):
        x = np.array([theta * model.a, theta * model.b]) - value
        return float(np.sum(x * x * np.exp(x)))
    if isinstance(model, GenericIID):
        # under the tilted law a normal step stays normal, a constant stays constant
        if model.step.kind == "constant":
            return (theta * model.step.value - value) ** 2
        if model.step.kind == "normal":
            s2 = (theta * model.step.sd) ** 2
            return (theta * model.step.mean + s2 - value) ** 2 + s2
    return None


def fz_constants(sigma1: float, sigma2: float) -> FzConstants:
    if not sigma1 > sigma2 > 0:
        raise RegimeError(f"the Gaussian example is handled for sigma1 > sigma2 > 0, got ({sigma1}, {sigma2})")
    log2 = math.log(2.0)
    lpm_log = sigma1 / (2.0 * SQRT_2LOG2)
    return FzConstants(
        lpm_linear=sigma1 * math.sqrt(log2 / 2.0) + SQRT_2LOG2 / (4.0 * sigma1) * (sigma1 ** 2 + sigma2 ** 2),
        lpm_log=lpm_log,
        fz_linear=(sigma1 + sigma2) * math.sqrt(log2 / 2.0),
        fz_log=3.0 * (sigma1 + sigma2) / (2.0 * SQRT_2LOG2),
        offset=log2 * lpm_log,
    )
