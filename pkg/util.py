import os
import json
import hashlib
import logging
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from errors import ConfigError

logger = logging.getLogger(__name__)

# Each role owns its own stream so that, e.g., the leaf perturbations of a
# replicate are independent of the draws used by the coupling arm.
ROLES = {
    "tree": 0,
    "leaf": 1,
    "coupling": 2,
    "rde": 3,
    "reference": 4,
    "mc": 5,
}


class ReplicateSeed(NamedTuple):
    master: int
    replicate: int = 0


def stream(master_seed: int, replicate: int = 0, role: str = "tree") -> np.random.Generator:
    """Returns the Philox stream addressed by (master_seed, replicate, role).

    Philox is counter based, so the address alone determines the stream and
    no state has to be carried between replicates or worker processes.
    """
    if master_seed < 0 or replicate < 0:
        raise ValueError("seeds and replicate indices must be non-negative")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replicate), ROLES[role]))
    return np.random.Generator(np.random.Philox(seq))


def as_seed(seed) -> ReplicateSeed:
    if isinstance(seed, ReplicateSeed):
        return seed
    if isinstance(seed, tuple):
        return ReplicateSeed(*seed)
    return ReplicateSeed(int(seed), 0)


class LogSumExp:
    """Streaming log(sum(exp(x))) over chunks.

    Keeps a running maximum `max` and a sum `scale` of exp(x - max); the sum
    is rescaled whenever a chunk brings a new maximum.
    """

    def __init__(self):
        self.max = -np.inf
        self.scale = 0.0

    def add(self, values: np.ndarray):
        if values.size == 0:
            return
        chunk_max = float(np.max(values))
        chunk_scale = float(np.exp(logsumexp(values) - chunk_max))
        if chunk_max > self.max:
            self.scale = self.scale * np.exp(self.max - chunk_max) + chunk_scale
            self.max = chunk_max
        else:
            self.scale += chunk_scale * np.exp(chunk_max - self.max)

    @property
    def value(self) -> float:
        if self.scale == 0.0:
            return -np.inf
        return self.max + float(np.log(self.scale))

    @property
    def max_share(self) -> float:
        """Largest single term divided by the total"""
        if self.scale == 0.0:
            return np.nan
        return float(np.exp(self.max - self.value))


def resample(pool: np.ndarray, size: int, rng: np.random.Generator):
    """Returns indices and values drawn uniformly with replacement from pool"""
    indices = rng.integers(0, pool.shape[0], size=size)
    return indices, pool[indices]


def check_keys(mapping, path, allowed, required=()):
    """Rejects non-mappings, unknown keys and missing required keys"""
    if not isinstance(mapping, dict):
        raise ConfigError(path, f"expected a mapping, got {type(mapping).__name__}")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    for key in required:
        if key not in mapping:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return mapping


def config_hash(record: dict) -> str:
    canonical = json.dumps(record, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_table(df: pd.DataFrame, path: str, fmt: str = "csv"):
    """Writes a run table; floats keep 17 significant digits in both formats"""
    if fmt == "csv":
        df.to_csv(path, index=False, float_format="%.17g")
    elif fmt == "json-lines":
        with open(path, "w") as f:
            for record in df.to_dict(orient="records"):
                f.write(json.dumps({k: plain(v) for k, v in record.items()}) + "\n")
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    logger.debug("wrote %d rows to %s", len(df), path)


def plain(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def read_runs(path):
    """Returns list of (name, run table) for every run table in path"""
    runs = []
    for fname in sorted(os.listdir(path)):
        name, ext = os.path.splitext(fname)
        if name.endswith("_means"):
            continue
        if ext == ".csv":
            runs.append((name, pd.read_csv(os.path.join(path, fname))))
        elif ext == ".jsonl":
            runs.append((name, pd.read_json(os.path.join(path, fname), lines=True)))
    return runs
