"""Monte-Carlo plumbing: reproducible sub-streams, confidence intervals, distances."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np
from scipy import stats

Z95 = float(stats.norm.ppf(0.975))
CHUNK = 8192


@dataclass(frozen=True)
class Estimate:
    """A point estimate with a 95% half-width (zero for deterministic values)."""

    value: float
    ci: float = 0.0
    samples: int = 0

    @property
    def low(self):
        return self.value - self.ci

    @property
    def high(self):
        return self.value + self.ci


def mean_estimate(values):
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    return Estimate(float(values.mean()), Z95 * sd / math.sqrt(max(n, 1)), n)


def clopper_pearson(k, n, level=0.95):
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def chunk_sizes(total, chunk=CHUNK):
    full, rest = divmod(int(total), chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(func, total, rng, chunk=CHUNK, workers=1):
    """Evaluate ``func(sub_rng, size)`` over fixed-size chunks and concatenate in order.

    Every chunk owns a sub-stream spawned from ``rng``, so the result does not
    depend on ``workers``.
    """
    sizes = chunk_sizes(total, chunk)
    streams = as_generator(rng).spawn(len(sizes))
    jobs = list(zip(streams, sizes))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: func(*job), jobs))
    else:
        parts = [func(s, m) for s, m in jobs]
    return np.concatenate(parts) if parts else np.empty(0)


def variational_distance(p, q):
    """``sum |p - q|`` (no factor 1/2)."""
    return float(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)).sum())


def plugin_vd_slack(p, n):
    """One slack unit for an empirical distance from ``n`` draws of ``p``.

    Sum of the expected per-cell deviations ``E|p_hat - p|`` under the
    normal approximation plus one bounded-difference standard error.
    """
    p = np.asarray(p, dtype=np.float64)
    return float(np.sqrt(2 * p * (1 - p) / (math.pi * n)).sum() + 1.0 / math.sqrt(n))


def empirical_pmf(indices, size):
    counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=size)
    return counts / max(1, counts.sum())
