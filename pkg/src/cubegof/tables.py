"""Monte Carlo null distributions F_T(t | m) of the test statistics.

A ``TabulatedNull`` is the empirical CDF of one statistic at one fixed
event count m, compressed to equi-probability knots and interpolated with
a shape-preserving monotone cubic.  Scalar statistics (KS, PCS) need only
that outer CDF.  The order-resolved statistics (SLSS, OI) additionally
store the raw per-order null CDFs; their scalar form is the most extreme
per-order rank, max_k F_k(S_k), which this module calibrates against its
own Monte Carlo so the resulting p-value is uniform by construction.

Also here: Gaussian large-m asymptotics fitted from MC moments, densities
obtained by differentiating a tabulated CDF, and the FFT self-convolution
power used for sums of independent copies of a statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.interpolate import PchipInterpolator

from . import rng, stats
from .errors import TableError

FORMAT_VERSION = 1
MIN_TRIALS = 100_000
MAX_KNOTS = 2048
INNER_KNOTS = 256
ASYMPTOTE_MIN_M = 10_000

SCALAR_TESTS = ("ks", "pcs")
RANK_TESTS = ("slss", "oi")


def informative_orders(test_id: str, m: int) -> np.ndarray:
    """Geometrically thinned order set for the order-resolved statistics.

    Degenerate orders (S_{m+1} and G_m, both identically 1) carry no
    information and are excluded.
    """
    if test_id == "slss":
        lo, hi = 1, m
    elif test_id == "oi":
        lo, hi = 0, m - 1
    else:
        raise TableError(f"{test_id!r} has no order-resolved form")
    orders = []
    k = lo
    while k <= hi:
        orders.append(k)
        k = max(k + 1, int(round(k * 1.4)))
    return np.asarray(orders, dtype=int)


def _compress_ecdf(sorted_vals: np.ndarray, max_knots: int) -> tuple[np.ndarray, np.ndarray]:
    """Equi-probability knot compression of an empirical CDF."""
    n = sorted_vals.size
    if n == 0:
        raise TableError("cannot compress an empty statistic sample")
    if n <= max_knots:
        idx = np.arange(n)
    else:
        idx = np.unique(np.round(np.linspace(0, n - 1, max_knots)).astype(int))
    vals = sorted_vals[idx]
    cdf = (idx + 1.0) / n
    keep = np.concatenate([vals[1:] != vals[:-1], [True]])  # ties: keep top rank
    vals, cdf = vals[keep], cdf[keep]
    if vals.size < 2:
        raise TableError("statistic distribution is degenerate (single knot)")
    return vals, cdf


@dataclass
class TabulatedNull:
    """Interpolated null CDF of one statistic at fixed conditions.

    ``kind`` is "count" for the per-m tables and "rate" for the
    rate-conditioned outer calibration used in limit setting (then ``mu``
    is set and ``m`` is -1).
    """

    test_id: str
    m: int
    knots: np.ndarray
    cdf_values: np.ndarray
    trials: int
    seed: int
    version: int = FORMAT_VERSION
    kind: str = "count"
    mu: float = float("nan")
    inner_ks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    inner_knots: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    inner_cdf: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    _interp: PchipInterpolator | None = field(default=None, init=False, repr=False, compare=False)
    _inner_interp: list | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.cdf_values = np.asarray(self.cdf_values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.cdf_values.shape:
            raise TableError("knots and cdf values must be matching 1-d arrays")
        if np.any(np.diff(self.knots) <= 0):
            raise TableError("knots must be strictly increasing")
        d = np.diff(self.cdf_values)
        if np.any(d < 0):
            raise TableError("cdf values must be non-decreasing")
        if self.cdf_values[0] < 0 or self.cdf_values[-1] > 1 + 1e-12:
            raise TableError("cdf values must lie in [0, 1]")

    def _outer(self) -> PchipInterpolator:
        if self._interp is None:
            self._interp = PchipInterpolator(self.knots, self.cdf_values, extrapolate=False)
        return self._interp

    def eval(self, t) -> np.ndarray | float:
        """Monotone-interpolated CDF, clamped outside the knots.

        Below the first knot the value is 0; above the last it is the last
        stored value — exactly 1 for count tables, but the rate-conditioned
        tables keep their empty-draw mass at +infinity, so their ceiling is
        P(finite) < 1 and must not be rounded up.
        """
        arr = np.asarray(t, dtype=float)
        out = np.empty(arr.shape, dtype=float)
        below = arr < self.knots[0]
        above = arr >= self.knots[-1]
        mid = ~(below | above)
        out[below] = 0.0
        out[above] = self.cdf_values[-1]
        if np.any(mid):
            out[mid] = np.clip(self._outer()(arr[mid]), 0.0, self.cdf_values[-1])
        return float(out) if np.ndim(t) == 0 else out

    # -- order-resolved extras -------------------------------------------

    @property
    def has_orders(self) -> bool:
        return self.inner_ks.size > 0

    def _order_arrays(self, col: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.inner_knots[col]
        valid = ~np.isnan(row)  # rows are NaN-padded to a rectangle
        return row[valid], self.inner_cdf[col][valid]

    def _inner(self, col: int) -> PchipInterpolator:
        if self._inner_interp is None:
            self._inner_interp = [None] * self.inner_ks.size
        if self._inner_interp[col] is None:
            kn, cd = self._order_arrays(col)
            self._inner_interp[col] = PchipInterpolator(kn, cd, extrapolate=False)
        return self._inner_interp[col]

    def order_cdf(self, col: int, s) -> np.ndarray:
        """Null CDF of the raw order statistic stored in column ``col``."""
        arr = np.atleast_1d(np.asarray(s, dtype=float))
        knots, _ = self._order_arrays(col)
        out = np.empty(arr.shape)
        below = arr < knots[0]
        above = arr >= knots[-1]
        mid = ~(below | above)
        out[below] = 0.0
        out[above] = 1.0
        if np.any(mid):
            out[mid] = np.clip(self._inner(col)(arr[mid]), 0.0, 1.0)
        return out

    def combined_rank(self, order_values: np.ndarray) -> np.ndarray:
        """max_k F_k(value_k) across the stored orders, row-wise."""
        vals = np.atleast_2d(order_values)
        if vals.shape[1] != self.inner_ks.size:
            raise TableError(
                f"expected {self.inner_ks.size} order columns, got {vals.shape[1]}"
            )
        best = np.zeros(vals.shape[0])
        for col in range(self.inner_ks.size):
            np.maximum(best, self.order_cdf(col, vals[:, col]), out=best)
        return best

    def combined_statistic(self, values) -> float:
        """The scalar rank statistic of one dataset of exactly m points."""
        u = stats.ordered_sample(values)
        if u.size != self.m:
            raise TableError(
                f"dataset has {u.size} points but the table was built for m={self.m}"
            )
        if self.test_id == "slss":
            raw = stats.slss_rows_at(u[None, :], self.inner_ks)
        else:
            raw = stats.oi_rows_at(u[None, :], self.inner_ks)
        return float(self.combined_rank(raw)[0])


def _draw_sorted(gen: np.random.Generator, rows: int, m: int) -> np.ndarray:
    u = gen.random((rows, m))
    u.sort(axis=1)
    return u


def _scalar_rows(test_id: str, sorted_rows: np.ndarray) -> np.ndarray:
    if test_id == "ks":
        return stats.ks_rows(sorted_rows)
    if test_id == "pcs":
        return stats.pcs_rows(sorted_rows)
    raise TableError(f"unknown scalar test {test_id!r}")


def _order_rows(test_id: str, sorted_rows: np.ndarray, ks: np.ndarray) -> np.ndarray:
    if test_id == "slss":
        return stats.slss_rows_at(sorted_rows, ks)
    if test_id == "oi":
        return stats.oi_rows_at(sorted_rows, ks)
    raise TableError(f"unknown order-resolved test {test_id!r}")


def _tabulation_chunk(args: tuple) -> np.ndarray:
    """One deterministic chunk of null-table trials (worker function)."""
    test_id, m, seed, idx, size = args
    code = rng.TEST_CODES[test_id]
    gen = rng.stream(seed, rng.DOMAIN_COUNT_TABLE, code, m, idx)
    rows = _draw_sorted(gen, size, m)
    if test_id in SCALAR_TESTS:
        piece = _scalar_rows(test_id, rows)
    else:
        piece = _order_rows(test_id, rows, informative_orders(test_id, m))
    if not np.all(np.isfinite(piece)):
        raise TableError(f"non-finite {test_id} statistic during tabulation")
    return piece


def tabulate_null(
    test_id: str,
    m: int,
    trials: int,
    seed: int,
    *,
    max_knots: int = MAX_KNOTS,
    threads: int = 1,
) -> TabulatedNull:
    """Build the null table of ``test_id`` at event count ``m`` by MC.

    Deterministic in (test_id, m, trials, seed): the trial budget is cut
    into fixed chunks with independent counter-based streams, so the
    result is identical for any ``threads`` setting.
    """
    if test_id not in stats.TEST_IDS:
        raise TableError(f"unknown test id {test_id!r}")
    if m < 1:
        raise TableError(f"tabulation needs m >= 1, got {m}")
    if trials < MIN_TRIALS:
        raise TableError(f"tabulation needs >= {MIN_TRIALS} trials, got {trials}")

    sizes = rng.chunk_sizes(trials, rng.trials_chunk(m))
    scalar = test_id in SCALAR_TESTS
    ks = None if scalar else informative_orders(test_id, m)
    jobs = [(test_id, int(m), int(seed), idx, size) for idx, size in enumerate(sizes)]

    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            pieces = list(pool.map(_tabulation_chunk, jobs, chunksize=1))
    else:
        pieces = [_tabulation_chunk(job) for job in jobs]

    if scalar:
        vals = np.sort(np.concatenate(pieces))
        knots, cdf = _compress_ecdf(vals, max_knots)
        return TabulatedNull(test_id, m, knots, cdf, trials, seed)

    raw = np.concatenate(pieces, axis=0)  # (trials, n_orders)
    inner_knots, inner_cdf = [], []
    width = 0
    for col in range(ks.size):
        kn, cd = _compress_ecdf(np.sort(raw[:, col]), INNER_KNOTS)
        inner_knots.append(kn)
        inner_cdf.append(cd)
        width = max(width, kn.size)
    # pad ragged inner tables into rectangular arrays for storage
    kn_arr = np.full((ks.size, width), np.nan)
    cd_arr = np.full((ks.size, width), np.nan)
    for col in range(ks.size):
        kn_arr[col, : inner_knots[col].size] = inner_knots[col]
        cd_arr[col, : inner_cdf[col].size] = inner_cdf[col]

    table = TabulatedNull(
        test_id, m, np.array([0.0, 1.0]), np.array([0.0, 1.0]), trials, seed,
        inner_ks=ks, inner_knots=kn_arr, inner_cdf=cd_arr,
    )
    combined = table.combined_rank(raw)
    knots, cdf = _compress_ecdf(np.sort(combined), max_knots)
    table.knots = knots
    table.cdf_values = cdf
    table._interp = None
    return table


def eval_null(table: TabulatedNull, t) -> np.ndarray | float:
    """CDF lookup with left/right tail clamping (module-level alias)."""
    return table.eval(t)


# ---------------------------------------------------------------------------
# Large-m Gaussian asymptotics.
# ---------------------------------------------------------------------------


@dataclass
class GaussianAsymptote:
    """Fitted mean(m) and sd(m) of a statistic, valid above a threshold."""

    test_id: str
    m_grid: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    trials: int
    seed: int
    threshold: int = ASYMPTOTE_MIN_M
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.m_grid = np.asarray(self.m_grid, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.sds = np.asarray(self.sds, dtype=float)
        if np.any(self.sds <= 0):
            raise TableError("asymptote standard deviations must be positive")

    def _check(self, m: float):
        if m < self.threshold:
            raise TableError(
                f"Gaussian asymptote only valid for m >= {self.threshold}, got {m}"
            )
        if m > self.m_grid[-1] * 1.0000001:
            raise TableError(f"m={m} beyond the fitted asymptote grid")

    def mean(self, m: float) -> float:
        self._check(m)
        return float(np.interp(np.log(m), np.log(self.m_grid), self.means))

    def sd(self, m: float) -> float:
        self._check(m)
        return float(np.interp(np.log(m), np.log(self.m_grid), self.sds))


def fit_asymptote(
    test_id: str, m_grid: Sequence[int], trials: int, seed: int
) -> GaussianAsymptote:
    """MC moments of a scalar statistic on a large-m grid, interpolated in ln m."""
    if test_id not in SCALAR_TESTS:
        raise TableError(f"asymptote fitting supports scalar tests, not {test_id!r}")
    m_grid = sorted(int(m) for m in m_grid)
    if not m_grid or m_grid[0] < ASYMPTOTE_MIN_M:
        raise TableError(f"asymptote grid must start at m >= {ASYMPTOTE_MIN_M}")
    code = rng.TEST_CODES[test_id]
    means, sds = [], []
    for m in m_grid:
        sizes = rng.chunk_sizes(trials, rng.trials_chunk(m))
        vals = []
        for idx, size in enumerate(sizes):
            gen = rng.stream(seed, rng.DOMAIN_ASYMPTOTE, code, m, idx)
            vals.append(_scalar_rows(test_id, _draw_sorted(gen, size, m)))
        vals = np.concatenate(vals)
        sd = float(np.std(vals, ddof=1))
        if not sd > 0:
            raise TableError(f"non-positive sd estimate at m={m}")
        means.append(float(np.mean(vals)))
        sds.append(sd)
    return GaussianAsymptote(test_id, np.array(m_grid, float), np.array(means),
                             np.array(sds), trials, seed)


# ---------------------------------------------------------------------------
# Densities and FFT self-convolution (sums of independent copies).
# ---------------------------------------------------------------------------


@dataclass
class DensityGrid:
    """A probability density sampled on an equally spaced grid."""

    x0: float
    h: float
    density: np.ndarray

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.h <= 0 or self.density.ndim != 1 or self.density.size < 2:
            raise TableError("density grid needs h > 0 and at least two points")
        if np.any(self.density < 0):
            raise TableError("density values must be non-negative")

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.density.size)

    def mass(self) -> float:
        return float(np.sum(self.density) * self.h)

    def mean(self) -> float:
        return float(np.sum(self.x * self.density) * self.h)

    def cdf_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid and cumulative mass, normalised to end at exactly 1."""
        c = np.cumsum(self.density) * self.h
        c /= c[-1]
        return self.x, np.clip(c, 0.0, 1.0)


def density_from_null(table: TabulatedNull, grid_size: int = 4096) -> DensityGrid:
    """Differentiate the interpolated CDF onto an equal-step grid.

    The derivative is taken as the central difference of the CDF over one
    grid cell, i.e. the cell mass divided by the step.  This stays bounded
    even where the true density diverges (the m = 1 tables have an
    inverse-square-root edge) and keeps the total mass exact.
    """
    if grid_size < 1024:
        raise TableError(f"density grid needs >= 1024 points, got {grid_size}")
    lo, hi = float(table.knots[0]), float(table.knots[-1])
    x = np.linspace(lo, hi, grid_size)
    h = x[1] - x[0]
    upper = table.eval(x + 0.5 * h)
    lower = table.eval(x - 0.5 * h)
    dens = np.clip((upper - lower) / h, 0.0, None)
    total = np.sum(dens) * h
    if not total > 0:
        raise TableError("derivative of the tabulated CDF is identically zero")
    return DensityGrid(lo, h, dens / total)


def convolve_power(f: DensityGrid, n: int) -> DensityGrid:
    """Density of the sum of n i.i.d. draws via an FFT power.

    The transform length covers the full n-fold support plus padding, so
    circular wrap-around cannot fold mass back; a guard still checks that
    the tail touching the padded boundary is negligible.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise TableError(f"convolution power needs integer n >= 1, got {n!r}")
    if n == 1:
        return DensityGrid(f.x0, f.h, f.density / f.mass())
    size = f.density.size
    out_len = n * (size - 1) + 1
    fft_len = next_fast_len(out_len + size)
    spec = rfft(f.density * f.h, fft_len)
    full = irfft(spec ** n, fft_len) / f.h
    conv = np.clip(full[:out_len], 0.0, None)
    guard = np.sum(np.clip(full[out_len:], 0.0, None)) * f.h
    if guard > 1e-6:
        raise TableError(f"convolution aliasing detected (boundary mass {guard:.2e})")
    total = np.sum(conv) * f.h
    if not total > 0:
        raise TableError("convolution produced an empty density")
    return DensityGrid(n * f.x0, f.h, conv / total)
