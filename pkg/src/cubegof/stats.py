"""Univariate test statistics on ordered samples in [0,1].

Four statistics are implemented, each sensitive to a different departure
from uniformity:

* ``ks_statistic``   -- Kolmogorov-Smirnov sup distance (two-sided),
* ``pcs_statistic``  -- product of complementary spacings,
                        T = -sum_i log(1 - g_i) over the m+1 gaps,
* ``slss_statistic`` -- sums of the k largest gaps, k = 1..m+1,
* ``oi_statistic``   -- largest interval lengths containing at most k
                        points, k = 0..m (k=0 is the maximum gap).

Gaps g_i = u_i - u_{i-1} always include the boundary gaps via the
augmented points u_0 = 0 and u_{m+1} = 1.  The PCS and gap statistics grow
when the sample shows clusters or voids, so for all of them "large" means
"deficient relative to uniform".

Batch variants operate row-wise on matrices of already-sorted samples and
are what the Monte Carlo tabulation and study engines call.
"""

from __future__ import annotations

import numpy as np

from .errors import StatisticError

TEST_IDS = ("ks", "pcs", "slss", "oi")


def ordered_sample(values) -> np.ndarray:
    """Validate values in [0,1] and return them sorted ascending."""
    u = np.asarray(values, dtype=float).ravel()
    if u.size and (not np.all(np.isfinite(u)) or u.min() < 0 or u.max() > 1):
        raise StatisticError("ordered sample needs finite values in [0, 1]")
    return np.sort(u)


def spacings(values) -> np.ndarray:
    """The m+1 gaps of a sample, including the two boundary gaps."""
    u = ordered_sample(values)
    return np.diff(u, prepend=0.0, append=1.0)


def ks_statistic(values) -> float:
    """Two-sided sup distance between the empirical CDF and the identity."""
    u = ordered_sample(values)
    m = u.size
    if m == 0:
        raise StatisticError("KS statistic is undefined for an empty sample")
    grid = np.arange(1, m + 1, dtype=float)
    d_plus = np.max(grid / m - u)
    d_minus = np.max(u - (grid - 1.0) / m)
    return float(max(d_plus, d_minus))


def pcs_statistic(values) -> float:
    """Product of complementary spacings, as a log sum.

    Empty samples carry the whole-interval gap; log(1-1) makes the
    statistic +inf, the convention for maximal deficiency.
    """
    u = ordered_sample(values)
    if u.size == 0:
        return float("inf")
    g = np.diff(u, prepend=0.0, append=1.0)
    with np.errstate(divide="ignore"):
        return float(-np.sum(np.log1p(-g)))


def slss_statistic(values) -> np.ndarray:
    """S_k = sum of the k largest gaps, for k = 1..m+1 (S_{m+1} = 1)."""
    g = spacings(values)
    return np.cumsum(np.sort(g)[::-1])


def oi_statistic(values) -> np.ndarray:
    """G_k = length of the largest interval holding at most k points, k=0..m.

    With the augmented points a = (0, u_1, .., u_m, 1), the optimum over
    intervals is attained on windows a[i+k+1] - a[i], which hold exactly k
    sample points; allowing fewer points can only shorten the window.
    """
    u = ordered_sample(values)
    m = u.size
    a = np.concatenate(([0.0], u, [1.0]))
    return np.array([np.max(a[k + 1 :] - a[: m + 1 - k]) for k in range(m + 1)])


# ---------------------------------------------------------------------------
# Row-wise batch forms over matrices of sorted samples.
# ---------------------------------------------------------------------------


def gaps_rows(sorted_rows: np.ndarray) -> np.ndarray:
    """(R, m) sorted rows -> (R, m+1) gaps including the boundary gaps."""
    rows = np.atleast_2d(sorted_rows)
    r = rows.shape[0]
    pad = np.empty((r, rows.shape[1] + 2))
    pad[:, 0] = 0.0
    pad[:, -1] = 1.0
    pad[:, 1:-1] = rows
    return np.diff(pad, axis=1)


def ks_rows(sorted_rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(sorted_rows)
    m = rows.shape[1]
    if m == 0:
        raise StatisticError("KS statistic is undefined for an empty sample")
    grid = np.arange(1, m + 1, dtype=float) / m
    d_plus = np.max(grid - rows, axis=1)
    d_minus = np.max(rows - grid + 1.0 / m, axis=1)
    return np.maximum(d_plus, d_minus)


def pcs_rows(sorted_rows: np.ndarray) -> np.ndarray:
    g = gaps_rows(sorted_rows)
    with np.errstate(divide="ignore"):
        return -np.sum(np.log1p(-g), axis=1)


def slss_rows_at(sorted_rows: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """S_k for the requested k values only; (R, len(ks))."""
    g = gaps_rows(sorted_rows)
    g.sort(axis=1)
    csum = np.cumsum(g[:, ::-1], axis=1)
    ks = np.asarray(ks, dtype=int)
    if ks.size and (ks.min() < 1 or ks.max() > g.shape[1]):
        raise StatisticError(f"SLSS order k out of range 1..{g.shape[1]}")
    return csum[:, ks - 1]


def oi_rows_at(sorted_rows: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """G_k for the requested k values only; (R, len(ks))."""
    rows = np.atleast_2d(sorted_rows)
    r, m = rows.shape
    pad = np.empty((r, m + 2))
    pad[:, 0] = 0.0
    pad[:, -1] = 1.0
    pad[:, 1:-1] = rows
    ks = np.asarray(ks, dtype=int)
    if ks.size and (ks.min() < 0 or ks.max() > m):
        raise StatisticError(f"interval order k out of range 0..{m}")
    out = np.empty((r, ks.size))
    for col, k in enumerate(ks):
        out[:, col] = np.max(pad[:, k + 1 :] - pad[:, : m + 1 - k], axis=1)
    return out
