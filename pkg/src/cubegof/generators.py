"""Simulated experiments: background populations plus optional signals.

Counts are Poisson fluctuated for both populations.  Signal points are
placed in the unit-cube coordinates (clusters or shells); points landing
outside the cube are redrawn so the realized count is kept.  Backgrounds
cover the shapes used in the study suite:

* ``uniform``       -- flat in the cube (already unit-cube coordinates),
* ``gauss-centered``-- isotropic normal bump at the cube center,
* ``exp-product``   -- independent exponentials in real space, analysed
  against a uniform signal window [0, x_max] per axis (x_max defaults to
  three mean free paths, so the cube-space density falls like exp(-3u)),
* ``concave-bowl``  -- uniform in real space pushed through a truncated
  normal CDF per axis, leaving a bowl-shaped density in the cube.

``generate_experiment`` returns raw-space points plus a truth record; the
matching analysis model (for the PIT into the cube) comes from
``analysis_model``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TransformError
from .transforms import ProductModel, truncated_normal_marginal, uniform_marginal

SIGNAL_KINDS = ("gauss-cluster", "gauss-shell")
BACKGROUND_KINDS = ("uniform", "exp-product", "gauss-centered", "concave-bowl")


@dataclass(frozen=True)
class SignalSpec:
    kind: str
    n: int
    n_expected: float
    sigma: float = 0.1                      # cluster: isotropic std dev
    center_box: tuple[float, float] = (0.2, 0.8)
    radius: float = 0.25                    # shell: mean radius
    sigma_r: float = 0.02                   # shell: radial std dev

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise TransformError(f"unknown signal kind {self.kind!r}")
        if self.n < 1 or self.n_expected < 0:
            raise TransformError("signal needs n >= 1 and n_expected >= 0")
        if self.kind == "gauss-cluster" and not self.sigma > 0:
            raise TransformError("cluster signal needs sigma > 0")
        if self.kind == "gauss-shell":
            if not 0 < self.radius <= 0.5:
                raise TransformError("shell radius must be in (0, 0.5]")
            if self.sigma_r < 0:
                raise TransformError("shell sigma_r must be >= 0")


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str
    n: int
    n_expected: float
    rate: float = 0.1                       # exp-product: per-axis rate
    window_efolds: float = 3.0              # exp-product: window in 1/rate units
    sigma: float = 0.1                      # gauss-centered / concave-bowl
    mu: float = 0.5                         # concave-bowl center

    def __post_init__(self):
        if self.kind not in BACKGROUND_KINDS:
            raise TransformError(f"unknown background kind {self.kind!r}")
        if self.n < 1 or self.n_expected < 0:
            raise TransformError("background needs n >= 1 and n_expected >= 0")
        if self.rate <= 0 or self.sigma <= 0 or self.window_efolds <= 0:
            raise TransformError("background parameters must be positive")


def analysis_model(bkg: BackgroundSpec) -> ProductModel:
    """The proposed-signal model used to transform this experiment's data."""
    if bkg.kind in ("uniform", "gauss-centered"):
        marg = uniform_marginal(0.0, 1.0)
    elif bkg.kind == "exp-product":
        marg = uniform_marginal(0.0, bkg.window_efolds / bkg.rate)
    elif bkg.kind == "concave-bowl":
        marg = truncated_normal_marginal(bkg.mu, bkg.sigma, 0.0, 1.0)
    else:  # pragma: no cover - guarded by the spec validator
        raise TransformError(bkg.kind)
    return ProductModel(tuple(marg for _ in range(bkg.n)))


def _rejection_fill(gen: np.random.Generator, count: int, n: int, draw) -> np.ndarray:
    """Draw ``count`` points inside [0,1]^n, redrawing rejected ones."""
    out = np.empty((count, n))
    need = count
    filled = 0
    while need > 0:
        cand = draw(max(need * 2, 16))
        ok = cand[np.all((cand >= 0.0) & (cand <= 1.0), axis=1)]
        take = min(need, ok.shape[0])
        out[filled : filled + take] = ok[:take]
        filled += take
        need -= take
    return out


def draw_signal(gen: np.random.Generator, sig: SignalSpec, count: int) -> np.ndarray:
    """Signal points in the cube; center drawn once per experiment."""
    lo, hi = sig.center_box
    center = gen.uniform(lo, hi, sig.n)
    if count == 0:
        return np.empty((0, sig.n))
    if sig.kind == "gauss-cluster":
        return _rejection_fill(
            gen, count, sig.n,
            lambda k: center + sig.sigma * gen.standard_normal((k, sig.n)),
        )

    def _shell(k: int) -> np.ndarray:
        direction = gen.standard_normal((k, sig.n))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = sig.radius + sig.sigma_r * gen.standard_normal((k, 1))
        return center + radius * direction

    return _rejection_fill(gen, count, sig.n, _shell)


def draw_background(gen: np.random.Generator, bkg: BackgroundSpec, count: int) -> np.ndarray:
    """Background points in their raw coordinates (see analysis_model)."""
    if count == 0:
        return np.empty((0, bkg.n))
    if bkg.kind == "uniform":
        return gen.random((count, bkg.n))
    if bkg.kind == "gauss-centered":
        return _rejection_fill(
            gen, count, bkg.n,
            lambda k: 0.5 + bkg.sigma * gen.standard_normal((k, bkg.n)),
        )
    if bkg.kind == "exp-product":
        # exponential conditioned on the analysis window [0, x_max]
        x_max = bkg.window_efolds / bkg.rate
        q_max = -np.expm1(-bkg.rate * x_max)
        q = gen.random((count, bkg.n)) * q_max
        return -np.log1p(-q) / bkg.rate
    # concave-bowl: uniform in real space on [0,1]^n; the analysis PIT with
    # the truncated-normal model produces the bowl shape in cube space
    return gen.random((count, bkg.n))


def generate_experiment(
    bkg: BackgroundSpec | None,
    sig: SignalSpec | None,
    seed_or_gen,
) -> tuple[np.ndarray, dict]:
    """One experiment: raw points (shuffled) plus the truth record."""
    if bkg is None and sig is None:
        raise TransformError("experiment needs a background or a signal spec")
    gen = (
        seed_or_gen
        if isinstance(seed_or_gen, np.random.Generator)
        else np.random.default_rng(seed_or_gen)
    )
    n = bkg.n if bkg is not None else sig.n
    if bkg is not None and sig is not None and bkg.n != sig.n:
        raise TransformError("background and signal dimensionalities differ")

    n_b = int(gen.poisson(bkg.n_expected)) if bkg is not None else 0
    n_s = int(gen.poisson(sig.n_expected)) if sig is not None else 0
    pts_b = draw_background(gen, bkg, n_b) if bkg is not None else np.empty((0, n))
    pts_s = draw_signal(gen, sig, n_s) if sig is not None else np.empty((0, n))
    pts = np.concatenate([pts_b, pts_s], axis=0)
    order = gen.permutation(pts.shape[0])
    truth = {
        "n_background": n_b,
        "n_signal": n_s,
        "n": n,
        "background": None if bkg is None else bkg.kind,
        "signal": None if sig is None else sig.kind,
    }
    return pts[order], truth
