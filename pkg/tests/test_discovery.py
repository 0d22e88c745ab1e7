"""Projection and volume discovery p-values."""

import numpy as np
import pytest
from scipy.stats import kstest

from cubegof import discovery as dsc
from cubegof import transforms as tr
from cubegof.errors import TransformError
from cubegof.generators import BackgroundSpec, SignalSpec, generate_experiment


def test_min_p_values():
    p1 = dsc.min_p_combine(dsc.ProjectionPValues(np.array([0.1]), "ks"))
    assert p1.p_final == pytest.approx(0.1, abs=1e-12)
    p5 = dsc.min_p_combine(dsc.ProjectionPValues(np.array([0.1, 0.3, 0.9, 0.5, 0.2]), "ks"))
    assert p5.p_final == pytest.approx(0.40951, abs=1e-5)
    all_one = dsc.min_p_combine(dsc.ProjectionPValues(np.ones(4), "ks"))
    assert all_one.p_final == pytest.approx(1.0)


def test_prod_p_values():
    x = 0.37
    p1 = dsc.prod_p_combine(dsc.ProjectionPValues(np.array([x]), "ks"))
    assert p1.p_final == pytest.approx(x, abs=1e-12)
    p2 = dsc.prod_p_combine(dsc.ProjectionPValues(np.array([np.exp(-1), 1.0]), "ks"))
    assert p2.p_final == pytest.approx(0.735759, abs=5e-7)


def test_prod_p_clamps_zero():
    res = dsc.prod_p_combine(dsc.ProjectionPValues(np.array([0.0, 0.5]), "ks"))
    assert "pvalue-clamped" in res.flags
    assert 0.0 <= res.p_final < 1e-250


def test_combiners_agree_at_n1():
    for x in (0.01, 0.2, 0.77):
        p = dsc.ProjectionPValues(np.array([x]), "ks")
        assert dsc.min_p_combine(p).p_final == pytest.approx(
            dsc.prod_p_combine(p).p_final, rel=1e-12
        )


def test_prod_p_uniform_under_null():
    # combiner-level check: uniform inputs give a uniform output
    rng = np.random.default_rng(8)
    p = rng.random((100_000, 5))
    finals = np.array(
        [dsc.prod_p_combine(dsc.ProjectionPValues(row, "ks")).p_final for row in p]
    )
    assert kstest(finals, "uniform").statistic < 0.01


def test_min_p_uniform_under_null():
    rng = np.random.default_rng(9)
    p = rng.random((100_000, 5))
    pmin = p.min(axis=1)
    finals = 1 - (1 - pmin) ** 5
    assert kstest(finals, "uniform").statistic < 0.01


def test_project_pvalues_single_axis_is_univariate(store):
    rng = np.random.default_rng(10)
    u = rng.random((30, 1))
    proj = dsc.project_pvalues(store, u, "ks")
    assert proj.n == 1
    from cubegof.stats import ks_statistic
    from cubegof.store import NullEvaluator

    ev = NullEvaluator(store, "ks")
    expect = ev.deficiency_pvalue(ks_statistic(u[:, 0]), 30)
    assert proj.p[0] == pytest.approx(expect, rel=1e-12)


def test_project_pvalues_center_mass(store):
    u = np.full((100, 3), 0.5)
    proj = dsc.project_pvalues(store, u, "ks")
    assert np.all(proj.p < 1e-6)


def test_project_pvalues_uniform_self_consistency(store):
    # statistical core at high power: per-axis p-values are table lookups
    # of the axis statistics, checked vectorized on 10^5 fresh trials
    from cubegof.stats import ks_rows
    from cubegof.store import NullEvaluator

    rng = np.random.default_rng(11)
    ev = NullEvaluator(store, "ks")
    for axis in range(2):
        rows = np.sort(rng.random((100_000, 20)), axis=1)
        p = ev.deficiency_pvalue(ks_rows(rows), 20)
        assert kstest(p, "uniform").statistic < 0.01
    # and the operation itself wires those lookups per axis
    ps = np.empty((1_000, 2))
    for i in range(1_000):
        ps[i] = dsc.project_pvalues(store, rng.random((20, 2)), "ks").p
    assert kstest(ps.ravel(), "uniform").statistic < 0.05


def test_volume_single_axis_reduces_to_univariate(store):
    rng = np.random.default_rng(12)
    u = rng.random((40, 1))
    res = dsc.volume_method_pvalue(store, u, "ks")
    proj = dsc.project_pvalues(store, u, "ks")
    assert res.p_final == pytest.approx(proj.p[0], rel=1e-12)


def test_volume_center_mass_values(store):
    u = np.full((50, 2), 0.5)
    z, clamped = tr.volume_pit(u, 2)
    np.testing.assert_allclose(z, 0.596574, atol=5e-7)
    res = dsc.volume_method_pvalue(store, u, "ks")
    assert res.p_final < 1e-6


def test_volume_uniform_self_consistency(store):
    from cubegof.stats import ks_rows
    from cubegof.store import NullEvaluator

    from conftest import ensure_discovery_tables

    ensure_discovery_tables(store, ms=(100,))
    rng = np.random.default_rng(13)
    ev = NullEvaluator(store, "ks")
    p = []
    for _ in range(5):
        u = rng.random((20_000, 100, 5))
        z = np.sort(tr.product_uniform_cdf(u.prod(axis=2), 5), axis=1)
        p.append(ev.deficiency_pvalue(ks_rows(z), 100))
    p = np.concatenate(p)
    assert kstest(p, "uniform").statistic < 0.01
    ps = np.empty(1_000)
    for i in range(1_000):
        ps[i] = dsc.volume_method_pvalue(store, rng.random((100, 5)), "ks").p_final
    assert kstest(ps, "uniform").statistic < 0.05


def test_axis_permutation_invariance(store):
    rng = np.random.default_rng(14)
    u = rng.random((60, 4))
    perm = u[:, [2, 0, 3, 1]]
    for method in dsc.METHODS:
        a = dsc.discover(store, u, method, "ks").p_final
        b = dsc.discover(store, perm, method, "ks").p_final
        assert a == pytest.approx(b, rel=1e-12)


def test_discover_unknown_method(store):
    with pytest.raises(TransformError):
        dsc.discover(store, np.random.default_rng(0).random((5, 2)), "nope", "ks")


def test_empty_sample_rejected(store):
    with pytest.raises(TransformError):
        dsc.project_pvalues(store, np.empty((0, 2)), "ks")


@pytest.mark.slow
def test_monotone_response_to_injected_cluster(store):
    """Medians drop (weakly) as a centered cluster grows, for all methods."""
    bkg = BackgroundSpec(kind="uniform", n=3, n_expected=300)
    medians = {m: [] for m in dsc.METHODS}
    for ns in (0.0, 15.0, 40.0):
        sig = None
        if ns > 0:
            sig = SignalSpec(kind="gauss-cluster", n=3, n_expected=ns, sigma=0.1)
        ps = {m: [] for m in dsc.METHODS}
        rng = np.random.default_rng(1000 + int(ns))
        for _ in range(500):
            pts, _ = generate_experiment(bkg, sig, rng)
            cube = tr.UnitCubeSample(pts)
            for method in dsc.METHODS:
                ps[method].append(dsc.discover(store, cube, method, "ks").p_final)
        for method in dsc.METHODS:
            medians[method].append(float(np.median(ps[method])))
    for method, med in medians.items():
        assert med[0] >= med[1] >= med[2], (method, med)
