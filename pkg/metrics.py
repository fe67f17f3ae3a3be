"""
Empirical distributions and the statistical checks that turn the
limit statements into pass/fail verdicts.
"""
import math
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats

from errors import InsufficientDataError, RegimeError

logger = logging.getLogger(__name__)

# Kolmogorov-Smirnov critical constants c(alpha)
C_ALPHA = {0.01: 1.628, 0.05: 1.358}


def c_alpha(alpha: float) -> float:
    if alpha in C_ALPHA:
        return C_ALPHA[alpha]
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    sorted_values: np.ndarray
    # tilt the sample was centered with, when it matters
    theta: Optional[float] = None

    @classmethod
    def from_sample(cls, values, theta: Optional[float] = None) -> "EmpiricalDistribution":
        values = np.sort(np.asarray(values, dtype=float).ravel())
        if values.size == 0:
            raise InsufficientDataError("an empirical distribution needs at least one value")
        return cls(values, theta)

    @property
    def size(self) -> int:
        return self.sorted_values.size

    def cdf(self, x):
        return np.searchsorted(self.sorted_values, x, side="right") / self.size

    def quantile(self, p):
        return np.quantile(self.sorted_values, p, method="inverted_cdf")

    def mean(self) -> float:
        return float(np.mean(self.sorted_values))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    threshold: float
    passed: bool
    sizes: Tuple[int, ...]
    name: str = "ks"

    def to_record(self) -> dict:
        return {"test": self.name, "statistic": self.statistic, "threshold": self.threshold, "pass": self.passed}


def _as_distribution(sample) -> EmpiricalDistribution:
    if isinstance(sample, EmpiricalDistribution):
        return sample
    return EmpiricalDistribution.from_sample(sample)


def ks_two_sample(a, b, alpha: float = 0.05, threshold: Optional[float] = None,
                  name: str = "ks_two_sample") -> KsResult:
    """
    Sup-distance between two empirical CDFs.
    :param threshold: absolute threshold; defaults to c(alpha) sqrt((m + n) / (m n))
    """
    a, b = _as_distribution(a), _as_distribution(b)
    m, n = a.size, b.size
    statistic = float(scipy.stats.ks_2samp(a.sorted_values, b.sorted_values).statistic)
    if threshold is None:
        threshold = c_alpha(alpha) * math.sqrt((m + n) / (m * n))
    return KsResult(statistic, float(threshold), statistic < threshold, (m, n), name)


def ks_one_sample(sample, cdf: Callable, alpha: float = 0.05, threshold: Optional[float] = None,
                  name: str = "ks_one_sample") -> KsResult:
    """Sup-distance between an empirical CDF and an analytic one"""
    values = _as_distribution(sample).sorted_values
    statistic = float(scipy.stats.kstest(values, cdf).statistic)
    if threshold is None:
        threshold = c_alpha(alpha) / math.sqrt(values.size)
    return KsResult(statistic, float(threshold), statistic < threshold, (values.size,), name)


def top_score_matrix(results, width: int) -> np.ndarray:
    """Rows of the `width` largest perturbed scores, from RunResults or a ready matrix"""
    if isinstance(results, np.ndarray):
        top = results
    else:
        if any(len(r.top_scores) < width for r in results):
            raise InsufficientDataError(f"every replicate needs at least {width} top scores")
        top = np.array([r.top_scores[:width] for r in results], dtype=float)
    if top.ndim != 2 or top.shape[1] < width or top.shape[0] == 0:
        raise InsufficientDataError(f"need a non-empty matrix with at least {width} top scores per row")
    return top[:, :width]


def synthetic_ppp_scores(reps: int, topk: int, stream: np.random.Generator) -> np.ndarray:
    """-log ζ_j for the first topk points of unit-rate Poisson processes on R_+"""
    arrivals = np.cumsum(stream.exponential(size=(reps, topk)), axis=1)
    return -np.log(arrivals)


def gap_test(results, alpha: float = 0.05, threshold: Optional[float] = None) -> KsResult:
    """Top-two gap of the perturbed scores against Exponential(1)"""
    top = top_score_matrix(results, 2)
    gaps = top[:, 0] - top[:, 1]
    return ks_one_sample(gaps, scipy.stats.expon.cdf, alpha, threshold, name="gap")


def order_gap_test(results, j: int = 3, alpha: float = 0.05, threshold: Optional[float] = None) -> KsResult:
    """
    Gap between the largest and the j-th largest score. Viewed from its maximum
    the Poisson skeleton has ζ_1/ζ_j ~ Beta(1, j - 1), so the gap has CDF
    (1 - e^{-g})^{j-1}.
    """
    if j < 2:
        raise ValueError("order gaps start at j = 2")
    top = top_score_matrix(results, j)
    gaps = top[:, 0] - top[:, j - 1]

    def cdf(g):
        return np.where(g > 0, (-np.expm1(-np.maximum(g, 0.0))) ** (j - 1), 0.0)

    return ks_one_sample(gaps, cdf, alpha, threshold, name=f"order_gap_{j}")


@dataclass(frozen=True)
class SurvivalRow:
    g: float
    empirical: float
    expected: float
    stderr: float
    ok: bool


def survival_check(gaps, points: Sequence[float] = (0.5, 1.0, 2.0), n_se: float = 3.0) -> List[SurvivalRow]:
    """Empirical P(gap > g) against e^{-g}, within n_se binomial standard errors"""
    gaps = np.asarray(gaps, dtype=float)
    rows = []
    for g in points:
        expected = math.exp(-g)
        stderr = math.sqrt(expected * (1.0 - expected) / gaps.size)
        empirical = float(np.mean(gaps > g))
        rows.append(SurvivalRow(g, empirical, expected, stderr, abs(empirical - expected) <= n_se * stderr))
    return rows


def coupling_residual_test(results, alpha: float = 0.01, threshold: Optional[float] = None) -> KsResult:
    """θ R*_n - log W_n against the law of -log E (standard Gumbel); exact at every n"""
    residual = np.array([r.theta * r.r_star - r.log_w for r in results])
    return ks_one_sample(residual, scipy.stats.gumbel_r.cdf, alpha, threshold, name="coupling_residual")


@dataclass(frozen=True)
class WMeanReport:
    mean: float
    stderr: float
    within: bool
    n_se: float = 3.0

    def to_record(self) -> dict:
        statistic = abs(self.mean - 1.0) / self.stderr if self.stderr > 0 else 0.0
        return {"test": "normalized_w_mean", "statistic": statistic, "threshold": self.n_se, "pass": self.within}


def normalized_w_mean(results, nus: Sequence[float], schedule, n_se: float = 3.0) -> WMeanReport:
    """Mean of W_n e^{-Σ q_i ν_i(θ)} against 1"""
    shift = sum(qi * v for qi, v in zip(schedule.q, nus))
    w = np.exp(np.array([r.log_w for r in results]) - shift)
    mean = float(np.mean(w))
    stderr = float(np.std(w, ddof=1) / math.sqrt(w.size)) if w.size > 1 else math.inf
    return WMeanReport(mean, stderr, abs(mean - 1.0) <= n_se * stderr, n_se)


def non_increasing(values: Sequence[float], allowance: Sequence[float] = None, strict: bool = False) -> bool:
    """True when every step down the sequence is non-increasing up to its allowance"""
    values = list(values)
    allowance = list(allowance) if allowance is not None else [0.0] * len(values)
    for i in range(1, len(values)):
        if strict and not values[i] < values[i - 1] + allowance[i]:
            return False
        if not strict and not values[i] <= values[i - 1] + allowance[i]:
            return False
    return True


@dataclass(frozen=True)
class LlnReport:
    ns: Tuple[int, ...]
    deviations: Tuple[float, ...]
    target: float
    eps: float
    trend_ok: bool
    final_ok: bool

    @property
    def passed(self) -> bool:
        return self.trend_ok and self.final_ok

    def to_record(self) -> dict:
        return {"test": "lln", "statistic": self.deviations[-1], "threshold": self.eps, "pass": self.passed}


def lln_check(means: Sequence[tuple], target: float, eps: float = 0.1) -> LlnReport:
    """
    :param means: (n, mean of R*_n / n) or (n, mean, standard error) per ladder point
    :return: deviations from target and whether they shrink (within 3 standard errors) along n
    """
    if len(means) < 3:
        raise InsufficientDataError("the law of large numbers check needs at least 3 values of n")
    rows = sorted(means, key=lambda row: row[0])
    ns = tuple(int(row[0]) for row in rows)
    deviations = tuple(abs(float(row[1]) - target) for row in rows)
    allowance = [3.0 * float(row[2]) if len(row) > 2 else 0.0 for row in rows]
    trend_ok = non_increasing(deviations, allowance)
    return LlnReport(ns, deviations, target, eps, trend_ok, deviations[-1] < eps)


def limit_stability(centered_small: EmpiricalDistribution, centered_large: EmpiricalDistribution,
                    alpha: float = 0.05, threshold: Optional[float] = None) -> KsResult:
    theta_a, theta_b = centered_small.theta, centered_large.theta
    if theta_a is not None and theta_b is not None and abs(theta_a - theta_b) > 1e-12:
        raise RegimeError(f"samples were centered with different tilts ({theta_a} and {theta_b})")
    return ks_two_sample(centered_small, centered_large, alpha, threshold, name="limit_stability")


@dataclass(frozen=True)
class RatioReport:
    n: int
    fraction: float
    eps: float
    ratios: np.ndarray


def ratio_check(results, theta: float, nus: Sequence[float], schedule, eps: float = 0.25) -> RatioReport:
    """Fraction of replicates whose normalized W_n / W_{q_1} ratio is more than eps away from 1"""
    if any(abs(r.theta - theta) > 1e-12 for r in results):
        logger.warning("ratio_check called with theta=%s on runs simulated at another tilt", theta)
    q = schedule.q
    numerator_shift = sum(qi * v for qi, v in zip(q, nus))
    denominator_shift = q[0] * nus[0]
    log_ratio = np.array([(r.log_w - numerator_shift) - (r.first_block_log_w - denominator_shift)
                          for r in results])
    if np.isnan(log_ratio).any():
        raise InsufficientDataError("ratio_check needs runs recorded with record_first_block")
    ratios = np.exp(log_ratio)
    return RatioReport(schedule.n, float(np.mean(np.abs(ratios - 1.0) > eps)), eps, ratios)


def residual_gumbel_test(centered, h_proxy, theta: float, alpha: float = 0.05,
                         threshold: Optional[float] = None) -> KsResult:
    """
    θ (centered R*_n - Ĥ) per replicate against the law of -log E, pairing each
    centered maximum with the Ĥ proxy built from its own tree.
    """
    centered = np.asarray(centered, dtype=float)
    h_proxy = np.asarray(h_proxy, dtype=float)
    if centered.shape != h_proxy.shape:
        raise InsufficientDataError(f"{centered.size} centered values paired with {h_proxy.size} proxies")
    residual = theta * (centered - h_proxy)
    return ks_one_sample(residual, scipy.stats.gumbel_r.cdf, alpha, threshold, name="residual_gumbel")
