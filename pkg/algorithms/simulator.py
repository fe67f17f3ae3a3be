"""
Simulation of the last-progeny modified time-inhomogeneous branching random walk.

The tree is traversed depth first with an explicit stack whose frames are
chunks of a generation's frontier, so every frame is expanded with a few
vectorised numpy calls while the memory footprint stays O(depth x chunk)
instead of O(leaf count). All statistics are accumulated in the same pass.
"""
import math
import time
import heapq
import bisect
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import util
from algorithms.cumulant import theta_star
from algorithms.displacement import DisplacementModel, nu, validate
from errors import BudgetExceededError, InvalidModelError, RegimeError

logger = logging.getLogger(__name__)

PARTICLE_BUDGET = 2 ** 26
CHUNK_SIZE = 2 ** 16


@dataclass(frozen=True)
class Schedule:
    """Block lengths q_1(n), ..., q_k(n) of one generation count n"""
    q: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(int(qi) for qi in self.q))
        if len(self.q) == 0 or min(self.q) < 0:
            raise ValueError(f"schedule needs at least one block and non-negative lengths, got {self.q}")

    @property
    def k(self) -> int:
        return len(self.q)

    @property
    def n(self) -> int:
        return sum(self.q)

    @property
    def boundaries(self) -> Tuple[int, ...]:
        """t_0 = 0, t_1, ..., t_k = n"""
        t = [0]
        for qi in self.q:
            t.append(t[-1] + qi)
        return tuple(t)

    def block_of(self, generation: int) -> int:
        """0-based index of the block whose law produces `generation` (1 <= generation <= n)"""
        return bisect.bisect_left(self.boundaries, generation, lo=1) - 1

    @classmethod
    def proportional(cls, alpha: Sequence[float], n: int) -> "Schedule":
        """q_i = floor(alpha_i n), the remainder goes to the last block"""
        if abs(sum(alpha) - 1.0) > 1e-12:
            raise ValueError(f"block proportions must sum to 1, got {sum(alpha)!r}")
        q = [math.floor(round(a * n, 9)) for a in alpha]
        q[-1] += n - sum(q)
        return cls(tuple(q))

    @classmethod
    def slow_first(cls, alpha: Sequence[float], n: int) -> "Schedule":
        """q_1 = floor(sqrt(n)); the rest is split proportionally among the remaining blocks"""
        q1 = math.isqrt(n)
        rest = cls.proportional(alpha, n - q1).q if len(alpha) else ()
        if not rest and q1 != n:
            raise ValueError("slow_first with a single block cannot hold n generations")
        return cls((q1,) + tuple(rest))


@dataclass(frozen=True)
class RunConfig:
    models: Tuple[DisplacementModel, ...]
    schedule: Schedule
    theta: float
    topk: int = 8
    particle_budget: int = PARTICLE_BUDGET
    record_first_block: bool = True
    chunk_size: int = CHUNK_SIZE
    waive_assumptions: bool = False

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.models) != self.schedule.k:
            raise InvalidModelError(f"{len(self.models)} models for a schedule of {self.schedule.k} blocks")
        if not self.theta > 0:
            raise RegimeError("theta must be positive")
        if self.topk < 1 or self.chunk_size < 1:
            raise ValueError("topk and chunk_size must be at least 1")
        for i, model in enumerate(self.models):
            report = validate(model)
            if report.ok:
                continue
            if not self.waive_assumptions:
                raise InvalidModelError(f"model {i} ({model.kind}) fails: {'; '.join(report.messages)}")
            logger.warning("assumptions waived for model %d: %s", i, "; ".join(report.messages))
        expected = self.expected_particles()
        if expected > self.particle_budget:
            raise BudgetExceededError(f"expected {expected:.3g} particles, budget is {self.particle_budget}")

    def expected_particles(self) -> float:
        total, level = 1.0, 1.0
        for model, qi in zip(self.models, self.schedule.q):
            m = model.offspring().mean()
            for _ in range(qi):
                level *= m
                total += level
        return total


@dataclass(frozen=True)
class RunResult:
    r_n: float
    r_star: float
    log_w: float
    top_scores: Tuple[float, ...]
    first_block_log_w: float
    d_stat: float
    m_share: float
    leaf_count: int
    theta: float
    n: int

    def to_record(self, rep: int, topk: int) -> dict:
        record = {
            "rep": rep,
            "r_n": self.r_n,
            "r_star": self.r_star,
            "log_w": self.log_w,
            "first_block_log_w": self.first_block_log_w,
            "d_stat": self.d_stat,
            "m_share": self.m_share,
            "leaf_count": self.leaf_count,
        }
        for j in range(topk):
            record[f"top_{j + 1}"] = self.top_scores[j] if j < len(self.top_scores) else np.nan
        return record


class _Leaves:
    """Accumulates the generation-n statistics chunk by chunk"""

    def __init__(self, theta, topk):
        self.theta = theta
        self.topk = topk
        self.r_n = -np.inf
        self.r_star = -np.inf
        self.log_w = util.LogSumExp()
        self.heap = []
        self.count = 0

    def add(self, positions, rng):
        log_e = np.log(rng.exponential(size=positions.size))
        tilted = self.theta * positions
        scores = tilted - log_e

        self.r_n = max(self.r_n, float(np.max(positions)))
        self.r_star = max(self.r_star, float(np.max(positions - log_e / self.theta)))
        self.log_w.add(tilted)

        if scores.size > self.topk:
            candidates = np.sort(np.argpartition(scores, -self.topk)[-self.topk:])
        else:
            candidates = np.arange(scores.size)
        # (score, -order): among equal scores the earlier leaf ranks higher
        for i in candidates:
            item = (float(scores[i]), -(self.count + int(i)))
            if len(self.heap) < self.topk:
                heapq.heappush(self.heap, item)
            else:
                heapq.heappushpop(self.heap, item)
        self.count += positions.size

    def top_scores(self):
        return tuple(score for score, _ in sorted(self.heap, reverse=True))


class _FirstBlock:
    """W_{q_1}(θ), the derivative statistic and the max weight share at generation t_1"""

    def __init__(self, theta, tilt, shift):
        self.theta = theta
        self.tilt = tilt
        self.shift = shift
        self.log_w = util.LogSumExp()
        self.d_stat = 0.0 if tilt is not None else np.nan

    def add(self, positions):
        self.log_w.add(self.theta * positions)
        if self.tilt is not None:
            x = self.tilt * positions - self.shift
            self.d_stat -= float(np.sum(x * np.exp(x)))


def _first_block(config):
    if not config.record_first_block:
        return None
    model = config.models[0]
    tilt = theta_star(model, check_assumptions=False)
    if tilt.infinite:
        return _FirstBlock(config.theta, None, 0.0)
    return _FirstBlock(config.theta, tilt.value, config.schedule.q[0] * nu(model, tilt.value))


def simulate(config: RunConfig, seed) -> RunResult:
    """One replicate, a deterministic function of (config, seed)"""
    seed = util.as_seed(seed)
    tree_rng = util.stream(seed.master, seed.replicate, "tree")
    leaf_rng = util.stream(seed.master, seed.replicate, "leaf")

    schedule = config.schedule
    n, t1 = schedule.n, schedule.boundaries[1]
    leaves = _Leaves(config.theta, config.topk)
    first = _first_block(config)

    created = 1
    stack = [(0, np.zeros(1))]
    while stack:
        generation, positions = stack.pop()
        if first is not None and generation == t1:
            first.add(positions)
        if generation == n:
            leaves.add(positions, leaf_rng)
            continue

        model = config.models[schedule.block_of(generation + 1)]
        counts, steps = model.sample_generation(tree_rng, positions.size)
        children = np.repeat(positions, counts) + steps
        created += children.size
        if created > config.particle_budget:
            raise BudgetExceededError(f"more than {config.particle_budget} particles created", seed.replicate)
        if children.size == 0:
            continue
        pieces = np.array_split(children, math.ceil(children.size / config.chunk_size))
        for piece in reversed(pieces):
            stack.append((generation + 1, piece))

    if leaves.count == 0:
        raise InvalidModelError("the tree died out before generation n")

    return RunResult(
        r_n=leaves.r_n,
        r_star=leaves.r_star,
        log_w=leaves.log_w.value,
        top_scores=leaves.top_scores(),
        first_block_log_w=first.log_w.value if first is not None else np.nan,
        d_stat=first.d_stat if first is not None else np.nan,
        m_share=first.log_w.max_share if first is not None else np.nan,
        leaf_count=leaves.count,
        theta=config.theta,
        n=n,
    )


def coupled_rightmost(log_w: float, theta: float, stream: np.random.Generator) -> float:
    """(log W_n - log E) / θ for a fresh E ~ Exponential(1), equal in law to R*_n"""
    if not theta > 0:
        raise RegimeError("theta must be positive")
    return (log_w - math.log(stream.exponential())) / theta


def coupled_batch(results: Sequence[RunResult], theta: float, master_seed: int, first_rep: int = 0) -> np.ndarray:
    return np.array([
        coupled_rightmost(r.log_w, theta, util.stream(master_seed, first_rep + i, "coupling"))
        for i, r in enumerate(results)
    ])


def centered_r_star(result: RunResult, centering) -> float:
    if abs(result.theta - centering.theta) > 1e-12 or result.n != centering.n:
        raise RegimeError(f"centering for (theta={centering.theta}, n={centering.n}) applied to "
                          f"a run with (theta={result.theta}, n={result.n})")
    return result.r_star - centering.total


def _replicate(config, master_seed, rep):
    try:
        return simulate(config, util.ReplicateSeed(master_seed, rep))
    except BudgetExceededError as e:
        raise BudgetExceededError(e.message, rep) from e


def batch(config: RunConfig, reps: int, master_seed: int, workers: int = 1, first_rep: int = 0):
    """Replicates first_rep, ..., first_rep + reps - 1, in replicate order for any worker count"""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    start = time.time()
    results = Parallel(n_jobs=workers)(
        delayed(_replicate)(config, master_seed, rep) for rep in range(first_rep, first_rep + reps)
    )
    logger.info("%d replicates at n=%d (q=%s) in %.1fs", reps, config.schedule.n, config.schedule.q,
                time.time() - start)
    return results


def to_table(results: Sequence[RunResult], topk: int, first_rep: int = 0) -> pd.DataFrame:
    columns = ["rep", "r_n", "r_star", "log_w", "first_block_log_w", "d_stat", "m_share", "leaf_count"]
    columns += [f"top_{j + 1}" for j in range(topk)]
    records = [r.to_record(first_rep + i, topk) for i, r in enumerate(results)]
    return pd.DataFrame(records, columns=columns)
