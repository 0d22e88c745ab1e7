"""Poisson-averaged limits: curves, solving, projections, calibration."""

import math

import numpy as np
import pytest
from scipy.stats import chi2, poisson

from cubegof import limits, stats
from cubegof.errors import CalibrationError, LimitError
from cubegof.limits import PoissonAveragedCurve


# -- the exclusion CDF ---------------------------------------------------------


def test_counting_curve_values():
    # exclusion of rate mu with zero observed events is P(count > 0)
    for mu in (0.5, 2.0, 7.0):
        assert limits.poisson_averaged_cdf(None, "poisson", 0, mu) == pytest.approx(
            -math.expm1(-mu), rel=1e-12
        )
    assert limits.poisson_averaged_cdf(None, "poisson", 2, 3.0) == pytest.approx(
        float(poisson.sf(2, 3.0)), rel=1e-12
    )


def test_exclusion_is_zero_at_zero_rate(store):
    assert limits.poisson_averaged_cdf(None, "poisson", 0, 0.0) == 0.0
    assert limits.poisson_averaged_cdf(store, "pcs", 2.0, 0.0) == 0.0


def test_pcs_exclusion_matches_mc_oracle(store):
    """Brute force: draw m ~ Poisson(mu), uniform data, compare statistics.

    Empty draws carry an infinite statistic and can never fall below the
    observed value, matching the m = 0 convention.
    """
    rng = np.random.default_rng(314)
    u_obs = np.sort(rng.random(4))
    t_obs = stats.pcs_statistic(u_obs)
    mu = 3.0
    gen = np.random.default_rng(2024)
    trials = 1_000_000
    counts = gen.poisson(mu, trials)
    below = 0
    for m in np.unique(counts[counts > 0]):
        rows = np.sort(gen.random((int((counts == m).sum()), int(m))), axis=1)
        below += int(np.count_nonzero(stats.pcs_rows(rows) < t_obs))
    mc = below / trials
    val = limits.poisson_averaged_cdf(store, "pcs", t_obs, mu)
    assert val == pytest.approx(mc, abs=0.005)


def test_exclusion_monotone_in_rate(store):
    rng = np.random.default_rng(11)
    curve = limits.univariate_curve(store, "pcs", np.sort(rng.random(6)))
    grid = np.linspace(0.0, 40.0, 25)
    vals = [curve(g) for g in grid]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    assert vals[0] == 0.0 and vals[-1] > 0.97


# -- root finding ----------------------------------------------------------------


def test_textbook_counting_limits():
    r0 = limits.solve_limit(limits.counting_curve(0), 0.9)
    assert r0.mu_lim == pytest.approx(2.302585, abs=1e-4)
    r1 = limits.solve_limit(limits.counting_curve(1), 0.9)
    assert r1.mu_lim == pytest.approx(3.889720, abs=1e-4)
    assert abs(r0.f_at_limit - 0.9) < 1e-4
    # and the oracle: root of exp(-mu)(1+mu) = 0.1 by closed-form identity
    assert limits.poisson_counting_limit(1, 0.9) == pytest.approx(
        float(chi2.ppf(0.9, 4) / 2), rel=1e-12
    )


def test_counting_closed_form_matches_solver():
    for m_obs in (0, 1, 2, 5, 20):
        solved = limits.solve_limit(limits.counting_curve(m_obs), 0.9).mu_lim
        closed = limits.poisson_counting_limit(m_obs, 0.9)
        assert solved == pytest.approx(closed, abs=2e-4)


def test_floor_respected_for_extreme_deficiency(store):
    """Even a maximally deficient observed dataset cannot be excluded below
    the counting floor ln(1/(1-CL)): the rate-null keeps its empty-draw
    mass at +inf, so the exclusion curve stays under 1 - exp(-mu)."""
    for tid in ("slss", "oi", "pcs"):
        curve = limits.univariate_curve(store, tid, np.array([0.9999]))
        res = limits.solve_limit(curve, 0.9)
        assert res.mu_lim >= math.log(10) - 2e-3, (tid, res.mu_lim)
        assert curve(1.5) <= -math.expm1(-1.5) + 2e-3, tid


def test_empty_dataset_reproduces_counting_limit(store):
    for tid in ("pcs", "ks", "slss", "oi", "poisson"):
        curve = limits.univariate_curve(store, tid, np.empty(0))
        res = limits.solve_limit(curve, 0.9)
        assert res.mu_lim == pytest.approx(math.log(10), abs=1e-4), tid


def test_solve_limit_contracts():
    with pytest.raises(LimitError, match="confidence level"):
        limits.solve_limit(limits.counting_curve(0), 1.5)
    flat = PoissonAveragedCurve("poisson", 0.0, 0, lambda mu: 0.5)
    with pytest.raises(LimitError, match="no exclusion root"):
        limits.solve_limit(flat, 0.9, mu_cap=100.0)
    dip = PoissonAveragedCurve(
        "poisson", 0.0, 40,
        lambda mu: min(mu / 20.0, 1.0) - 0.4 * math.exp(-((mu - 40.0) ** 2) / 400.0),
    )
    with pytest.raises(LimitError, match="not monotone"):
        limits.solve_limit(dip, 0.9)


# -- per-test univariate limits -----------------------------------------------------


def test_scalar_limit_coverage_oneshot(store):
    out = __import__("cubegof.studies", fromlist=["coverage_fraction"]).coverage_fraction(
        store, "solve", 1, 5.0, cl=0.9, trials=4000, seed=5, test_id="pcs",
        solve_sample=200,
    )
    assert out["coverage"] == pytest.approx(0.9, abs=0.025)
    assert out["solve_agreement"] == 1.0


def test_rank_scalar_vs_batch_agreement(store):
    rng = np.random.default_rng(21)
    rows = np.sort(rng.random((3, 6)), axis=1)
    blocks = [(6, np.arange(3), rows)]
    bc = limits.RankBatchCurve(store, "slss", blocks, 3, m_max=limits.m_max_for_cap(60))
    mu_batch, _ = limits.solve_mu_rows(bc, 0.9, mu_cap=60.0)
    for i in range(3):
        res = limits.solve_limit(limits.univariate_curve(store, "slss", rows[i]), 0.9)
        assert res.mu_lim == pytest.approx(mu_batch[i], abs=2e-4)


# -- PCS multivariate constructions ---------------------------------------------------


def test_pcs_best_reduces_at_n1(store):
    rng = np.random.default_rng(31)
    u = rng.random((7, 1))
    best = limits.pcs_best_projection_limit(store, u, 0.9)
    single = limits.solve_limit(limits.univariate_curve(store, "pcs", u[:, 0]), 0.9)
    assert best.mu_lim == pytest.approx(single.mu_lim, abs=1e-6)


def test_pcs_best_weaker_than_single_axis(store):
    # [F]^n <= F, so the selection limit sits above the single-axis limit
    rng = np.random.default_rng(32)
    u = rng.random((8, 3))
    best = limits.pcs_best_projection_limit(store, u, 0.9)
    t_max = max(stats.pcs_statistic(np.sort(u[:, j])) for j in range(3))
    single = limits.solve_limit(limits.scalar_curve(store, "pcs", t_max, 8), 0.9)
    assert best.mu_lim >= single.mu_lim - 1e-6


def test_pcs_sum_reduces_at_n1(store):
    rng = np.random.default_rng(33)
    u = rng.random((7, 1))
    summed = limits.pcs_sum_projection_limit(store, u, 0.9)
    single = limits.solve_limit(limits.univariate_curve(store, "pcs", u[:, 0]), 0.9)
    assert summed.mu_lim == pytest.approx(single.mu_lim, abs=1e-6)


def test_sum_cdf_matches_mc_pairs(store):
    sums = limits.SumCdf(store, 2)
    gen = np.random.default_rng(99)
    rows = np.sort(gen.random((400_000, 5)), axis=1)
    t = stats.pcs_rows(rows).reshape(200_000, 2).sum(axis=1)
    t.sort()
    ecdf = (np.arange(t.size) + 0.5) / t.size
    gap = np.max(np.abs(sums.cdf_rows(t, 5) - ecdf))
    assert gap < 0.01


def test_empty_multivariate_limits(store):
    empty = np.empty((0, 2))
    for fn in (limits.pcs_best_projection_limit, limits.pcs_sum_projection_limit):
        assert fn(store, empty, 0.9).mu_lim == pytest.approx(math.log(10), abs=1e-4)


# -- best projection and the calibrated correction ------------------------------------


def test_best_projection_basics(store):
    rng = np.random.default_rng(41)
    u = rng.random((6, 3))
    res = limits.best_projection_limit(store, u, "pcs", 0.95)
    assert res.mu_lim == pytest.approx(min(res.per_axis), rel=1e-12)
    assert len(res.per_axis) == 3
    perm = limits.best_projection_limit(store, u[:, [2, 0, 1]], "pcs", 0.95)
    assert perm.mu_lim == pytest.approx(res.mu_lim, abs=2e-4)
    single = limits.best_projection_limit(store, u[:, :1], "pcs", 0.95)
    direct = limits.solve_limit(limits.univariate_curve(store, "pcs", u[:, 0]), 0.95)
    assert single.mu_lim == pytest.approx(direct.mu_lim, abs=1e-6)


@pytest.fixture(scope="module")
def small_surface_n1(store):
    return limits.calibrate_correction(
        store, 1, "pcs",
        c1_grid=limits.default_c1_grid(0.9, 12),
        mu_grid=np.geomspace(0.5, 60.0, 10),
        trials=20_000, seed=1, smooth=False,
    )


@pytest.fixture(scope="module")
def small_surface_n2(store):
    return limits.calibrate_correction(
        store, 2, "pcs",
        c1_grid=limits.default_c1_grid(0.9, 12),
        mu_grid=np.geomspace(0.5, 60.0, 10),
        trials=20_000, seed=1,
    )


def test_surface_n1_is_flat_at_c1(small_surface_n1):
    surf = small_surface_n1
    for i, mu in enumerate(surf.mu_grid):
        for j, c1 in enumerate(surf.c1_grid):
            floor = math.log(1.0 / (1.0 - c1))
            if mu > floor * 1.3:
                assert surf.coverage[i, j] == pytest.approx(c1, abs=0.015), (mu, c1)
            elif mu < floor:
                # no exclusion is possible below the floor: full coverage
                assert surf.coverage[i, j] == pytest.approx(1.0, abs=1e-9)


def test_surface_monotone_in_c1(small_surface_n2):
    assert np.all(np.diff(small_surface_n2.coverage, axis=1) >= -1e-12)


def test_surface_beats_naive_power_rule(small_surface_n2):
    # shared event counts correlate the axes: true coverage of the min sits
    # strictly above the independence guess C_1^n
    surf = small_surface_n2
    checked = 0
    for i, mu in enumerate(surf.mu_grid):
        for j, c1 in enumerate(surf.c1_grid):
            if mu > math.log(1.0 / (1.0 - c1)) * 1.5 and mu < 40:
                assert surf.coverage[i, j] > limits.naive_power_coverage(c1, 2), (mu, c1)
                checked += 1
    assert checked > 10


def test_surface_interpolation_and_extrapolation(small_surface_n2):
    surf = small_surface_n2
    mid_mu = float(np.sqrt(surf.mu_grid[3] * surf.mu_grid[4]))
    val = surf.value(mid_mu, 0.95)
    assert 0.0 <= val <= 1.0
    with pytest.raises(CalibrationError, match="outside"):
        surf.value(1e4, 0.95)
    with pytest.raises(CalibrationError, match="outside"):
        surf.value(mid_mu, 0.8)


def test_corrected_limit_n1_returns_solve_at_cl(store, small_surface_n1):
    rng = np.random.default_rng(51)
    u = rng.random((8, 1))
    res = limits.corrected_projection_limit(store, u, "pcs", 0.9, small_surface_n1)
    direct = limits.solve_limit(limits.univariate_curve(store, "pcs", u[:, 0]), 0.9)
    assert res.mu_lim == pytest.approx(direct.mu_lim, rel=0.02)
    assert res.c1 == pytest.approx(0.9, abs=0.01)


def test_corrected_limit_c1_above_cl(store, small_surface_n2):
    rng = np.random.default_rng(52)
    u = rng.random((12, 2))
    res = limits.corrected_projection_limit(store, u, "pcs", 0.9, small_surface_n2)
    assert res.c1 >= 0.9 - 1e-9
    assert res.mu_lim == pytest.approx(min(res.per_axis), rel=1e-9)
    naive = limits.best_projection_limit(store, u, "pcs", 0.9)
    assert res.mu_lim >= naive.mu_lim - 1e-9  # stricter per-axis confidence


def test_corrected_scalar_vs_batch(store, small_surface_n2):
    rng = np.random.default_rng(53)
    from cubegof.studies import _univariate_batch_curve

    rows = np.sort(rng.random((4, 10, 2)), axis=1)
    m_rows = np.full(4, 10)
    axis_curves = []
    for j in range(2):
        blocks = [(10, np.arange(4), np.sort(rows[:, :, j], axis=1))]
        axis_curves.append(_univariate_batch_curve(store, "pcs", blocks, m_rows,
                                                   limits.m_max_for_cap(60)))
    mu_b, c1_b = limits.corrected_limits_rows(
        small_surface_n2, axis_curves, 0.9, mu_cap=60.0
    )
    for i in range(4):
        res = limits.corrected_projection_limit(
            store, rows[i], "pcs", 0.9, small_surface_n2
        )
        assert res.mu_lim == pytest.approx(mu_b[i], rel=0.02)


def test_surface_mismatch_rejected(store, small_surface_n2):
    with pytest.raises(CalibrationError, match="surface"):
        limits.corrected_projection_limit(
            store, np.random.default_rng(0).random((5, 3)), "pcs", 0.9,
            small_surface_n2,
        )


def test_calibration_contracts(store):
    with pytest.raises(CalibrationError, match="trials"):
        limits.calibrate_correction(store, 2, "pcs", trials=100)
    with pytest.raises(CalibrationError, match="n >= 1"):
        limits.calibrate_correction(store, 0, "pcs")
