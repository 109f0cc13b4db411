"""Wasserstein-2 distances on the line, moments and tail estimates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .density import DensityTable
from .particles import Sampler, as_rng

HILL_FRACTION = 0.05
HILL_SWEEP = (0.02, 0.05, 0.10)
# fitted exponents above this are reported as "no power tail"
HILL_SENTINEL = 20.0
# max ratio of the smallest-fraction to the largest-fraction estimate
HILL_RATIO = 1.3
TRUNCATION_WARN = 1e-3


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmpiricalSample:
    sorted_values: np.ndarray

    def __init__(self, values):
        a = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if a.size < 1:
            raise ValueError("empty sample")
        object.__setattr__(self, "sorted_values", a)

    @property
    def k(self) -> int:
        return self.sorted_values.size

    def moment(self, r: float) -> float:
        return empirical_moment(self, r)


def _values(a) -> np.ndarray:
    return a.sorted_values if isinstance(a, EmpiricalSample) else np.sort(np.asarray(a, dtype=np.float64))


def w2_empirical(a, b) -> float:
    x, y = _values(a), _values(b)
    if x.size != y.size:
        raise ValueError(f"samples must have equal size ({x.size} != {y.size})")
    return float(math.sqrt(np.mean((x - y) ** 2)))


def _segments(*knot_sets):
    """Sub-intervals of [0, 1] cut at every given knot, with 2-point Gauss nodes.

    Both the sample's step quantile and a table's piecewise-linear quantile
    are polynomial of degree <= 1 on each piece, so the rule is exact for
    the squared difference.
    """
    b = np.unique(np.clip(np.concatenate([[0.0, 1.0], *knot_sets]), 0.0, 1.0))
    a, c = b[:-1], b[1:]
    keep = c > a
    a, c = a[keep], c[keep]
    mid, half = (a + c) / 2, (c - a) / 2
    off = half / math.sqrt(3.0)
    return np.concatenate([mid - off, mid + off]), np.concatenate([half, half])


def _table_quantile(table: DensityTable, u: np.ndarray) -> np.ndarray:
    # outside the represented mass the tails are pinned at the grid ends
    return np.interp(u, table.cdf, table.v)


def w2_vs_table(a, table: DensityTable) -> float:
    """W2 between an empirical measure and a tabulated law.

    Order statistic i is transported onto the quantile cell ((i-1)/k, i/k].
    Truncated tail mass is assigned to the grid end points.
    """
    x = _values(a)
    k = x.size
    if table.truncated_mass > TRUNCATION_WARN:
        warnings.warn(f"table truncated mass {table.truncated_mass:.2e} exceeds {TRUNCATION_WARN:g}",
                      TruncationWarning, stacklevel=2)
    u, wt = _segments(np.arange(1, k) / k, table.cdf)
    idx = np.minimum((u * k).astype(np.int64), k - 1)
    d2 = (x[idx] - _table_quantile(table, u)) ** 2
    return float(math.sqrt(np.sum(wt * d2)))


def w2_tables(t1: DensityTable, t2: DensityTable) -> float:
    """W2 between two tabulated laws by quantile coupling."""
    u, wt = _segments(t1.cdf, t2.cdf)
    d2 = (_table_quantile(t1, u) - _table_quantile(t2, u)) ** 2
    return float(math.sqrt(np.sum(wt * d2)))


def epsilon_n_samples(sampler: Sampler, N: int, replicas: int, rng, reference: DensityTable) -> np.ndarray:
    """Per-replica W2^2 between N iid draws and the reference law."""
    rng = as_rng(rng)
    return np.array([w2_vs_table(sampler(rng, N), reference) ** 2 for _ in range(replicas)])


def epsilon_n(sampler: Sampler, N: int, replicas: int, rng, reference: DensityTable) -> float:
    return float(np.mean(epsilon_n_samples(sampler, N, replicas, rng, reference)))


def empirical_moment(a, r: float) -> float:
    return float(np.mean(np.abs(_values(a)) ** r))


def tail_index(a, fraction: float = HILL_FRACTION) -> float:
    """Hill estimate of the Pareto exponent of |a| from its top order statistics."""
    x = np.sort(np.abs(_values(a)))[::-1]
    if x.size < 50:
        raise ValueError("tail_index needs at least 50 values")
    if x[0] == x[-1]:
        raise ValueError("tail index undefined for a constant sample")
    k = max(2, int(math.ceil(fraction * x.size)))
    top, threshold = x[:k], x[k]
    if threshold <= 0:
        raise ValueError("tail index undefined: too many zeros in the sample")
    s = np.mean(np.log(top / threshold))
    return math.inf if s == 0 else float(1.0 / s)


def tail_index_sweep(a, fractions=HILL_SWEEP) -> dict[float, float]:
    return {f: tail_index(a, f) for f in fractions}


def has_power_tail(a, fractions=HILL_SWEEP, sentinel: float = HILL_SENTINEL) -> bool:
    """Whether the Hill estimates look like a genuine power tail.

    A power law gives estimates that agree across the sweep; a light tail
    gives estimates that keep rising as the fraction shrinks, or exceed the
    sentinel.
    """
    est = [tail_index(a, f) for f in sorted(fractions)]
    if max(est) > sentinel:
        return False
    return bool(est[0] <= HILL_RATIO * est[-1])


def fit_loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def tail_report(a, fraction: float = HILL_FRACTION, fractions=HILL_SWEEP) -> dict:
    """Hill exponent with its sensitivity sweep.

    Samples without a recognisable power tail report an infinite exponent.
    """
    sweep = tail_index_sweep(a, fractions)
    power = has_power_tail(a, fractions)
    return {"exponent": tail_index(a, fraction) if power else math.inf,
            "power_tail": power, "sweep": sweep}
