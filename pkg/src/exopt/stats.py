"""Small statistics toolkit: permutation tests, CV, and IQR outlier flags."""

from __future__ import annotations

import numpy as np

MIN_PERMUTATIONS = 1_000


class StatsError(ValueError):
    pass


def permutation_test(a, b, n_permutations: int = 100_000, seed: int = 0) -> float:
    """Two-sided permutation test on the difference of means.

    Labels are permuted ``n_permutations`` times (seeded, deterministic) and
    the p-value is the add-one estimator
    ``(1 + #{|diff_perm| >= |diff_obs|}) / (n_permutations + 1)``, so p lies
    in [1/(n+1), 1] and is symmetric in the two samples.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise StatsError("both samples must be non-empty")
    if n_permutations < MIN_PERMUTATIONS:
        raise StatsError(f"n_permutations must be >= {MIN_PERMUTATIONS}")
    observed = abs(a.mean() - b.mean())
    pooled = np.concatenate([a, b])
    n, na = len(pooled), len(a)
    rng = np.random.default_rng(seed)

    count = 0
    chunk = max(1, min(n_permutations, 5_000_000 // max(n, 1)))
    done = 0
    while done < n_permutations:
        m = min(chunk, n_permutations - done)
        perm = rng.permuted(np.broadcast_to(pooled, (m, n)), axis=1)
        diffs = perm[:, :na].mean(axis=1) - perm[:, na:].mean(axis=1)
        count += int(np.sum(np.abs(diffs) >= observed - 1e-12 * max(1.0, observed)))
        done += m
    return (1 + count) / (n_permutations + 1)


def cv(samples) -> float:
    """Coefficient of variation: sample standard deviation over mean."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if len(x) == 0:
        raise StatsError("samples must be non-empty")
    mean = x.mean()
    if mean == 0:
        raise StatsError("coefficient of variation undefined for zero mean")
    if len(x) == 1:
        return 0.0
    return float(x.std(ddof=1) / mean)


def quartiles(samples) -> tuple[float, float, float]:
    """(Q1, median, Q3) with linear interpolation."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if len(x) == 0:
        raise StatsError("samples must be non-empty")
    q1, med, q3 = np.percentile(x, [25.0, 50.0, 75.0])
    return float(q1), float(med), float(q3)


def iqr_outliers(samples) -> np.ndarray:
    """Boolean flags for points outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR]."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    q1, _, q3 = quartiles(x)
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return (x < lo) | (x > hi)
