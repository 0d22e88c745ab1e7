"""Single goodness-of-fit p-values for samples in the unit hypercube.

Two routes condense an m x n sample into one p-value:

* projection: test each axis separately, then combine the n per-axis
  p-values with either the smallest one (Beta(1, n) order statistic) or
  their product (exact product-of-uniforms CDF);
* volume: reduce each point to the volume of its coordinate hyper-rectangle,
  map those volumes back to uniform with the product CDF, and run a single
  univariate test.

Per-axis p-values share the event count m but are conditionally
independent given it, so the combiners stay exact; none of them mixes in
Poisson count information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TransformError
from .store import NullEvaluator, TableStore
from .transforms import CLAMP_FLOOR, UnitCubeSample, product_uniform_cdf, volume_pit

METHODS = ("min-p", "prod-p", "volume")


@dataclass(frozen=True)
class ProjectionPValues:
    """Per-axis p-values p_j; small p_j flags a poorly fitting axis."""

    p: np.ndarray
    test_id: str

    @property
    def n(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class DiscoveryResult:
    p_final: float
    method: str
    test_id: str
    m: int
    per_axis: ProjectionPValues | None = None
    statistic: float | None = None
    flags: tuple[str, ...] = ()


def _as_cube(data) -> UnitCubeSample:
    return data if isinstance(data, UnitCubeSample) else UnitCubeSample(data)


def project_pvalues(store: TableStore, data, test_id: str = "ks") -> ProjectionPValues:
    """One p-value per axis from the chosen test's tabulated null."""
    cube = _as_cube(data)
    if cube.m < 1:
        raise TransformError("projection p-values need at least one event")
    ev = NullEvaluator(store, test_id)
    p = np.empty(cube.n)
    for j in range(cube.n):
        t = ev.combined_statistic(np.sort(cube.axis(j)))
        p[j] = ev.deficiency_pvalue(t, cube.m)
    return ProjectionPValues(p, test_id)


def min_p_combine(p: ProjectionPValues) -> DiscoveryResult:
    """Smallest per-axis p-value, mapped through the Beta(1, n) CDF."""
    pmin = float(np.min(p.p))
    # 1 - (1 - pmin)^n, stable near both ends
    p_final = 1.0 if pmin >= 1.0 else float(-np.expm1(p.n * np.log1p(-pmin)))
    return DiscoveryResult(
        p_final=p_final, method="min-p", test_id=p.test_id, m=-1,
        per_axis=p, statistic=pmin,
    )


def prod_p_combine(p: ProjectionPValues) -> DiscoveryResult:
    """Product of the per-axis p-values, mapped through its exact CDF."""
    flags = []
    vals = np.asarray(p.p, dtype=float)
    if np.any(vals < CLAMP_FLOOR):
        vals = np.maximum(vals, CLAMP_FLOOR)
        flags.append("pvalue-clamped")
    prod = float(np.exp(np.sum(np.log(vals))))
    if prod < CLAMP_FLOOR:
        prod = CLAMP_FLOOR
        flags.append("product-clamped")
    p_final = float(product_uniform_cdf(prod, p.n))
    return DiscoveryResult(
        p_final=p_final, method="prod-p", test_id=p.test_id, m=-1,
        per_axis=p, statistic=prod, flags=tuple(flags),
    )


def volume_method_pvalue(store: TableStore, data, test_id: str = "ks") -> DiscoveryResult:
    """Volume reduction to one univariate set, then a single test."""
    cube = _as_cube(data)
    if cube.m < 1:
        raise TransformError("volume method needs at least one event")
    z, clamped = volume_pit(cube.points, cube.n)
    ev = NullEvaluator(store, test_id)
    t = ev.combined_statistic(np.sort(z))
    p_final = float(ev.deficiency_pvalue(t, cube.m))
    flags = ("volume-clamped",) if clamped else ()
    return DiscoveryResult(
        p_final=p_final, method="volume", test_id=test_id, m=cube.m,
        statistic=float(t), flags=flags,
    )


def discover(store: TableStore, data, method: str, test_id: str = "ks") -> DiscoveryResult:
    """Dispatch on the combination method; the CLI entry point."""
    cube = _as_cube(data)
    if method == "volume":
        return volume_method_pvalue(store, cube, test_id)
    proj = project_pvalues(store, cube, test_id)
    if method == "min-p":
        res = min_p_combine(proj)
    elif method == "prod-p":
        res = prod_p_combine(proj)
    else:
        raise TransformError(f"unknown discovery method {method!r}")
    return DiscoveryResult(
        p_final=res.p_final, method=res.method, test_id=test_id, m=cube.m,
        per_axis=res.per_axis, statistic=res.statistic, flags=res.flags,
    )
