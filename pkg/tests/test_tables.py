"""Monte Carlo null tables, asymptotics, densities and convolutions."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.stats import kstest, norm

from cubegof import stats, tables
from cubegof.errors import TableError

SEED = 20240801


def pcs_m1_cdf_exact(t):
    """P(T <= t) for one point: the u-interval where -ln u(1-u) <= t.

    Solved by root finding on T(u) = -ln(1-u) - ln(u), which is symmetric
    about u = 1/2 with minimum 2 ln 2.
    """
    t_min = 2 * math.log(2)
    if t <= t_min:
        return 0.0

    def f(u):
        return -math.log1p(-u) - math.log(u) - t

    lo = brentq(f, 1e-15, 0.5)
    hi = brentq(f, 0.5, 1 - 1e-15)
    return hi - lo


@pytest.fixture(scope="module")
def pcs_m1():
    return tables.tabulate_null("pcs", 1, 200_000, SEED)


@pytest.fixture(scope="module")
def ks_m1():
    return tables.tabulate_null("ks", 1, 200_000, SEED)


def test_pcs_m1_minimum_maps_to_zero(pcs_m1):
    assert pcs_m1.eval(1.386294) == pytest.approx(0.0, abs=1e-4)


def test_pcs_m1_median_matches_quadrature_oracle(pcs_m1):
    median = float(np.interp(0.5, pcs_m1.cdf_values, pcs_m1.knots))
    assert pcs_m1.eval(median) == pytest.approx(pcs_m1_cdf_exact(median), abs=0.005)
    # the root-finding oracle itself agrees with the closed form
    for t in (1.6, 2.5, 4.0):
        assert pcs_m1_cdf_exact(t) == pytest.approx(
            math.sqrt(1 - 4 * math.exp(-t)), abs=1e-10
        )


def test_ks_m1_closed_form(ks_m1):
    # with one point the statistic is max(u, 1-u): F(t) = 2t - 1 on [1/2, 1]
    for t in (0.55, 0.7, 0.9, 0.99):
        assert ks_m1.eval(t) == pytest.approx(2 * t - 1, abs=0.005)


def test_eval_null_clamps_and_hits_knots(pcs_m1):
    assert tables.eval_null(pcs_m1, 0.0) == 0.0
    assert tables.eval_null(pcs_m1, 1e9) == 1.0
    mid = pcs_m1.knots.size // 2
    assert tables.eval_null(pcs_m1, pcs_m1.knots[mid]) == pytest.approx(
        pcs_m1.cdf_values[mid], abs=1e-12
    )


def test_tabulate_contracts():
    with pytest.raises(TableError, match="trials"):
        tables.tabulate_null("pcs", 5, 10_000, SEED)
    with pytest.raises(TableError, match="m >= 1"):
        tables.tabulate_null("pcs", 0, 100_000, SEED)
    with pytest.raises(TableError, match="unknown test"):
        tables.tabulate_null("nope", 5, 100_000, SEED)


def test_tabulation_deterministic_and_thread_invariant():
    a = tables.tabulate_null("ks", 3, 100_000, 7)
    b = tables.tabulate_null("ks", 3, 100_000, 7)
    np.testing.assert_array_equal(a.knots, b.knots)
    np.testing.assert_array_equal(a.cdf_values, b.cdf_values)
    c = tables.tabulate_null("ks", 3, 100_000, 7, threads=2)
    np.testing.assert_array_equal(a.knots, c.knots)
    d = tables.tabulate_null("ks", 3, 100_000, 8)
    assert not np.array_equal(a.knots, d.knots)


def test_tabulation_self_consistency_pit():
    # evaluating the table on fresh null statistics gives uniform values
    table = tables.tabulate_null("pcs", 20, 150_000, SEED)
    gen = np.random.default_rng(99)
    rows = np.sort(gen.random((100_000, 20)), axis=1)
    u = table.eval(stats.pcs_rows(rows))
    assert kstest(u, "uniform").statistic < 0.01


def test_rank_table_combined_uniform():
    table = tables.tabulate_null("slss", 12, 120_000, SEED)
    gen = np.random.default_rng(123)
    rows = np.sort(gen.random((50_000, 12)), axis=1)
    raw = stats.slss_rows_at(rows, table.inner_ks)
    u = table.eval(table.combined_rank(raw))
    assert kstest(u, "uniform").statistic < 0.012


def test_combined_statistic_checks_m():
    table = tables.tabulate_null("oi", 6, 100_000, SEED)
    with pytest.raises(TableError, match="m=6"):
        table.combined_statistic(np.sort(np.random.default_rng(1).random(9)))


def test_informative_orders_nested():
    seq30 = tables.informative_orders("oi", 30)
    seq200 = tables.informative_orders("oi", 200)
    np.testing.assert_array_equal(seq200[: seq30.size], seq30)
    assert tables.informative_orders("slss", 1).tolist() == [1]
    assert tables.informative_orders("oi", 1).tolist() == [0]


# -- Gaussian asymptotics ---------------------------------------------------------


@pytest.mark.slow
def test_fit_asymptote_normality_and_monotonicity():
    asym = tables.fit_asymptote("pcs", [10_000, 14_000], 100_000, SEED)
    # standardized statistic at m = 10^4 passes a normality check
    gen = np.random.default_rng(4321)
    vals = []
    chunk = 2_000
    for _ in range(50):  # 100k trials total
        rows = np.sort(gen.random((chunk, 10_000)), axis=1)
        vals.append(stats.pcs_rows(rows))
    vals = np.concatenate(vals)
    z = (vals - asym.mean(10_000)) / asym.sd(10_000)
    assert kstest(z, norm.cdf).statistic < 0.01
    # the fitted mean falls toward 1 as m grows
    assert asym.mean(10_000) > asym.mean(14_000) > 1.0
    assert asym.sd(10_000) > 0


def test_asymptote_contracts():
    asym = tables.GaussianAsymptote(
        "pcs", [10_000, 20_000], [1.01, 1.005], [0.01, 0.007],
        trials=100_000, seed=1,
    )
    with pytest.raises(TableError, match="valid for m >="):
        asym.mean(5_000)
    with pytest.raises(TableError, match="beyond"):
        asym.sd(50_000)
    with pytest.raises(TableError, match="positive"):
        tables.GaussianAsymptote("pcs", [10_000], [1.0], [0.0], 100_000, 1)
    with pytest.raises(TableError, match="grid must start"):
        tables.fit_asymptote("pcs", [100], 100_000, SEED)


# -- densities and convolution ------------------------------------------------------


@pytest.fixture(scope="module")
def pcs_m5():
    return tables.tabulate_null("pcs", 5, 400_000, SEED)


def test_density_from_null_contracts(pcs_m1, pcs_m5):
    dens = tables.density_from_null(pcs_m5, 2048)
    assert dens.mass() == pytest.approx(1.0, abs=1e-6)
    assert dens.x[0] == pcs_m5.knots[0]
    assert dens.x[-1] == pytest.approx(pcs_m5.knots[-1], rel=1e-12)
    # cumulative sum reproduces the tabulated CDF at the knots
    xs, cdf = dens.cdf_arrays()
    at_knots = np.interp(pcs_m5.knots, xs, cdf)
    assert np.max(np.abs(at_knots - pcs_m5.cdf_values)) < 0.01
    # the singular-edge m=1 table still yields unit mass on the same grid span
    d1 = tables.density_from_null(pcs_m1, 2048)
    assert d1.mass() == pytest.approx(1.0, abs=1e-6)
    assert np.isfinite(d1.density).all()
    with pytest.raises(TableError, match=">= 1024"):
        tables.density_from_null(pcs_m5, 512)


def _discretized_normal(mu, sigma, lo, hi, size=4096):
    x = np.linspace(lo, hi, size)
    h = x[1] - x[0]
    dens = norm.pdf(x, mu, sigma)
    return tables.DensityGrid(lo, h, dens / (dens.sum() * h))


def test_convolve_power_identity():
    base = _discretized_normal(2.0, 0.3, 0.0, 4.0)
    out = tables.convolve_power(base, 1)
    np.testing.assert_allclose(out.density, base.density, rtol=1e-12)


def test_convolve_power_gaussian_closed_form():
    base = _discretized_normal(2.0, 0.3, 0.0, 4.0)
    out = tables.convolve_power(base, 2)
    expect = norm.pdf(out.x, 4.0, 0.3 * math.sqrt(2))
    assert np.max(np.abs(out.density - expect)) < 1e-3
    assert out.mass() == pytest.approx(1.0, abs=1e-6)
    assert out.mean() == pytest.approx(2 * base.mean(), rel=1e-3)


def test_convolve_power_matches_mc_sum_oracle(pcs_m5):
    dens = tables.density_from_null(pcs_m5, 4096)
    out = tables.convolve_power(dens, 3)
    xs, cdf = out.cdf_arrays()
    gen = np.random.default_rng(2718)
    rows = np.sort(gen.random((3_000_000, 5)), axis=1)
    t = stats.pcs_rows(rows).reshape(1_000_000, 3).sum(axis=1)  # 10^6 triples
    t.sort()
    # sup distance between the FFT CDF and the empirical CDF of MC sums
    ecdf = (np.arange(t.size) + 0.5) / t.size
    gap = np.max(np.abs(np.interp(t, xs, cdf, left=0.0, right=1.0) - ecdf))
    assert gap < 0.01


def test_convolve_power_contracts():
    base = _discretized_normal(0.0, 1.0, -5, 5)
    with pytest.raises(TableError, match="n >= 1"):
        tables.convolve_power(base, 0)
