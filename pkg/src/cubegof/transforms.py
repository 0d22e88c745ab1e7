"""Mapping data under a proposed model onto the unit hypercube.

The multivariate null hypothesis "the data follow model M" is reduced to
"the points are i.i.d. uniform on [0,1]^n" by pushing every coordinate
through its model CDF.  Three transforms are provided:

* ``pit_independent``      -- per-axis CDFs for a product of marginals,
* ``hierarchical_transform`` -- staged CDFs for two-layer hierarchical
  models whose lower layer is conditioned on the observed upper layer,
* ``volume_transform`` / ``product_uniform_cdf`` -- the dimension-reducing
  map v = prod_j u_j together with the exact CDF of a product of n
  independent uniforms, which turns {v_i} back into a univariate uniform
  sample.

All transforms are pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .errors import TransformError

# Products of many coordinates underflow; values below this floor are
# clamped (and counted) rather than rejected.
CLAMP_FLOOR = 1e-300


@dataclass(frozen=True)
class MarginalModel:
    """A one-dimensional model: CDF, inverse CDF and support interval.

    ``cdf`` must be non-decreasing with limits 0/1 at the support edges and
    accept numpy arrays.  ``inverse_cdf`` is its inverse on (0,1).
    """

    cdf: Callable[[np.ndarray], np.ndarray]
    inverse_cdf: Callable[[np.ndarray], np.ndarray]
    descriptor: str
    support: tuple[float, float] = (-np.inf, np.inf)

    def __repr__(self) -> str:  # keep reprs short in error messages
        return f"MarginalModel({self.descriptor})"


def uniform_marginal(a: float = 0.0, b: float = 1.0) -> MarginalModel:
    if not b > a:
        raise TransformError(f"uniform marginal needs b > a, got [{a}, {b}]")
    w = b - a
    return MarginalModel(
        cdf=lambda x: (np.asarray(x, dtype=float) - a) / w,
        inverse_cdf=lambda q: a + np.asarray(q, dtype=float) * w,
        descriptor=f"uniform({a},{b})",
        support=(a, b),
    )


def normal_marginal(mu: float = 0.0, sigma: float = 1.0) -> MarginalModel:
    if not sigma > 0:
        raise TransformError(f"normal marginal needs sigma > 0, got {sigma}")
    return MarginalModel(
        cdf=lambda x: ndtr((np.asarray(x, dtype=float) - mu) / sigma),
        inverse_cdf=lambda q: mu + sigma * ndtri(np.asarray(q, dtype=float)),
        descriptor=f"normal({mu},{sigma})",
    )


def exponential_marginal(rate: float) -> MarginalModel:
    if not rate > 0:
        raise TransformError(f"exponential marginal needs rate > 0, got {rate}")
    return MarginalModel(
        cdf=lambda x: -np.expm1(-rate * np.asarray(x, dtype=float)),
        inverse_cdf=lambda q: -np.log1p(-np.asarray(q, dtype=float)) / rate,
        descriptor=f"exponential({rate})",
        support=(0.0, np.inf),
    )


def truncated_normal_marginal(
    mu: float, sigma: float, a: float, b: float
) -> MarginalModel:
    if not sigma > 0:
        raise TransformError(f"truncated normal needs sigma > 0, got {sigma}")
    if not b > a:
        raise TransformError(f"truncated normal needs b > a, got [{a}, {b}]")
    fa = float(ndtr((a - mu) / sigma))
    fb = float(ndtr((b - mu) / sigma))
    span = fb - fa
    if span <= 0:
        raise TransformError(
            f"truncated normal({mu},{sigma}) has no mass on [{a}, {b}]"
        )

    def cdf(x):
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return np.clip((ndtr(z) - fa) / span, 0.0, 1.0)

    def inverse_cdf(q):
        q = np.asarray(q, dtype=float)
        return mu + sigma * ndtri(fa + q * span)

    return MarginalModel(
        cdf=cdf,
        inverse_cdf=inverse_cdf,
        descriptor=f"truncated-normal({mu},{sigma},{a},{b})",
        support=(a, b),
    )


def tabulated_marginal(
    x: Sequence[float], f: Sequence[float], descriptor: str = "tabulated"
) -> MarginalModel:
    """Marginal defined by (x, F) pairs with strictly increasing F.

    The CDF is the shape-preserving monotone cubic through the knots; the
    inverse is obtained by root finding on that interpolant, so the
    round-trip identity holds to solver precision.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if x.ndim != 1 or x.shape != f.shape or x.size < 2:
        raise TransformError("tabulated marginal needs two 1-d columns, >= 2 rows")
    if np.any(np.diff(x) <= 0):
        raise TransformError("tabulated marginal: x values must be strictly increasing")
    if np.any(np.diff(f) <= 0):
        raise TransformError("tabulated marginal: F values must be strictly increasing")
    if f[0] < 0 or f[-1] > 1:
        raise TransformError("tabulated marginal: F values must lie in [0, 1]")
    interp = PchipInterpolator(x, f, extrapolate=False)

    def cdf(v):
        return interp(np.asarray(v, dtype=float))

    def inverse_cdf(q):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any((q < f[0]) | (q > f[-1])):
            raise TransformError(
                f"tabulated marginal: quantile outside tabulated range "
                f"[{f[0]}, {f[-1]}]"
            )
        out = np.array(
            [brentq(lambda t, qq=qq: float(interp(t)) - qq, x[0], x[-1], xtol=1e-14)
             for qq in q]
        )
        return out if out.size > 1 else float(out[0])

    return MarginalModel(
        cdf=cdf,
        inverse_cdf=inverse_cdf,
        descriptor=descriptor,
        support=(float(x[0]), float(x[-1])),
    )


@dataclass(frozen=True)
class ProductModel:
    """An n-dimensional model with mutually independent marginals."""

    marginals: tuple[MarginalModel, ...]

    def __post_init__(self):
        if len(self.marginals) < 1:
            raise TransformError("ProductModel needs at least one marginal")

    @property
    def dim(self) -> int:
        return len(self.marginals)


@dataclass(frozen=True)
class HierarchicalModel:
    """Two-layer model: upper coordinates drive the law of the lower ones.

    ``high_transform`` maps the (m, n_high) block of upper coordinates into
    [0,1]^n_high all at once.  ``conditional_factory`` receives one observed
    upper vector and must deterministically return the ProductModel of the
    lower coordinates given it.  ``high_indices`` / ``low_indices`` say which
    input columns belong to which layer and must partition range(n).
    """

    high_indices: tuple[int, ...]
    low_indices: tuple[int, ...]
    high_transform: Callable[[np.ndarray], np.ndarray]
    conditional_factory: Callable[[np.ndarray], ProductModel] | None = None

    def __post_init__(self):
        seen = set(self.high_indices) | set(self.low_indices)
        if len(self.high_indices) + len(self.low_indices) != len(seen):
            raise TransformError("hierarchical index split has duplicates")
        if seen != set(range(len(seen))):
            raise TransformError("hierarchical index split must partition 0..n-1")
        if self.low_indices and self.conditional_factory is None:
            raise TransformError("lower layer present but no conditional_factory")

    @property
    def dim(self) -> int:
        return len(self.high_indices) + len(self.low_indices)


def product_high_transform(model: ProductModel) -> Callable[[np.ndarray], np.ndarray]:
    """Adapt a ProductModel into a hierarchical ``high_transform`` callable."""

    def _transform(x: np.ndarray) -> np.ndarray:
        return pit_independent(x, model).points

    return _transform


@dataclass(frozen=True)
class UnitCubeSample:
    """m points in [0,1]^n whose null model is i.i.d. uniform."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2:
            raise TransformError(f"unit-cube sample must be 2-d, got ndim={pts.ndim}")
        if pts.shape[1] < 1:
            raise TransformError("unit-cube sample needs n >= 1 columns")
        if pts.size and (not np.all(np.isfinite(pts)) or pts.min() < 0 or pts.max() > 1):
            raise TransformError("unit-cube sample has coordinates outside [0, 1]")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def axis(self, j: int) -> np.ndarray:
        return self.points[:, j]


def _check_input_matrix(samples: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise TransformError(f"sample matrix must be 2-d, got ndim={x.ndim}")
    if x.shape[1] != dim:
        raise TransformError(
            f"sample matrix has {x.shape[1]} columns but the model has {dim}"
        )
    if x.size and not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise TransformError(f"non-finite coordinate in sample row {bad}")
    return x


def _apply_marginal(marg: MarginalModel, col: np.ndarray, axis: int) -> np.ndarray:
    lo, hi = marg.support
    if col.size and (col.min() < lo or col.max() > hi):
        bad = int(np.flatnonzero((col < lo) | (col > hi))[0])
        raise TransformError(
            f"sample row {bad}, axis {axis}: value {col[bad]!r} outside the "
            f"support [{lo}, {hi}] of {marg.descriptor}"
        )
    # Boundary samples map to exactly 0 or 1 and are kept: downstream
    # spacing tests already pad with u=0 and u=1.
    return np.clip(marg.cdf(col), 0.0, 1.0)


def pit_independent(samples: np.ndarray, model: ProductModel) -> UnitCubeSample:
    """Apply the per-axis probability integral transform u_ij = F_j(x_ij)."""
    x = _check_input_matrix(samples, model.dim)
    u = np.empty_like(x)
    for j, marg in enumerate(model.marginals):
        u[:, j] = _apply_marginal(marg, x[:, j], j)
    return UnitCubeSample(u)


def hierarchical_transform(
    samples: np.ndarray, model: HierarchicalModel
) -> UnitCubeSample:
    """Transform a two-layer hierarchical model in stages.

    Upper coordinates go through ``high_transform`` in one pass; for each
    sample the lower coordinates go through the ProductModel built from
    that sample's observed upper vector.
    """
    x = _check_input_matrix(samples, model.dim)
    m = x.shape[0]
    u = np.empty_like(x)

    high = list(model.high_indices)
    x_high = x[:, high]
    u_high = np.asarray(model.high_transform(x_high), dtype=float)
    if u_high.shape != x_high.shape:
        raise TransformError(
            f"high_transform returned shape {u_high.shape}, expected {x_high.shape}"
        )
    if u_high.size and (u_high.min() < 0 or u_high.max() > 1):
        raise TransformError("high_transform produced values outside [0, 1]")
    u[:, high] = u_high

    low = list(model.low_indices)
    if low:
        x_low = x[:, low]
        for i in range(m):
            try:
                cond = model.conditional_factory(x_high[i])
            except Exception as exc:  # noqa: BLE001 - reported with context
                raise TransformError(
                    f"conditional model construction failed for sample {i}: {exc}"
                ) from exc
            if cond.dim != len(low):
                raise TransformError(
                    f"conditional model for sample {i} has dimension {cond.dim}, "
                    f"expected {len(low)}"
                )
            for jj, marg in enumerate(cond.marginals):
                u[i, low[jj]] = _apply_marginal(marg, x_low[i, jj : jj + 1], low[jj])[0]
    return UnitCubeSample(u)


def volume_transform(u: np.ndarray) -> np.ndarray | float:
    """Volume of the hyper-rectangle spanned by a point: the coordinate product.

    Accepts one point or a batch with points along the last axis.
    """
    arr = np.asarray(u, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1):
        raise TransformError("volume transform needs coordinates in [0, 1]")
    out = np.prod(arr, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def product_uniform_cdf(x: np.ndarray | float, n: int) -> np.ndarray | float:
    """Exact CDF of the product of n independent standard uniforms.

    F(x; n) = x * sum_{j=0}^{n-1} (-ln x)^j / j!, evaluated with the factor
    x folded into the first term so every partial term stays in [0, 1] and
    the running sum never overflows, even for x near the clamp floor.
    """
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise TransformError(f"product-uniform CDF needs integer n >= 1, got {n!r}")
    arr = np.asarray(x, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() <= 0 or arr.max() > 1):
        raise TransformError(
            "product-uniform CDF needs 0 < x <= 1; clamp zero volumes to the "
            f"floor {CLAMP_FLOOR} first"
        )
    log_x = -np.log(arr)
    term = arr.astype(float).copy()
    total = term.copy()
    for j in range(1, n):
        term = term * log_x / j
        total += term
    out = np.clip(total, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def volume_pit(points: np.ndarray, n: int | None = None) -> tuple[np.ndarray, int]:
    """Map cube points to one uniform univariate set via the volume CDF.

    Returns (z, clamped) where ``clamped`` counts volumes that underflowed
    below the clamp floor (including exact zeros) and were clamped instead
    of rejected.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim = pts.shape[1] if n is None else int(n)
    v = np.asarray(volume_transform(pts), dtype=float)
    clamped = int(np.count_nonzero(v < CLAMP_FLOOR))
    v = np.maximum(v, CLAMP_FLOOR)
    z = np.asarray(product_uniform_cdf(v, dim), dtype=float)
    return z, clamped
