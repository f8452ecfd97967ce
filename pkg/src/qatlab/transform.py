"""Learning-rate factor alpha and the weight-warp map between estimator worlds.

For a cyclical, positive estimator the map

    M(w) = w_b + alpha * integral_{w_b}^{w} ds / Q'hat(s),
    alpha = delta / integral_{bin} ds / Q'hat(s)

fixes every boundary point, preserves quantization bins, and has derivative
alpha / Q'hat(w). Training the straight-through twin from weights M(w) with
learning rate alpha*eta mimics the original model. ste and tanh take closed
forms; everything else goes through adaptive Simpson quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import EstimatorSpec, PositivityError, clip_range, derivative
from .quantizer import QuantizerConfig, bin_code

__all__ = [
    "WarpContext",
    "make_warp_context",
    "integrate_reciprocal",
    "alpha",
    "alpha_from_bin",
    "warp",
    "warp_pwl_bounds",
]

DEFAULT_TOL = 1e-10  # absolute quadrature error per bin


def _reciprocal(spec, cfg):
    def f(s):
        d = derivative(s, spec, cfg)
        if np.any(np.asarray(d) <= 0.0):
            raise PositivityError("estimator derivative nonpositive inside integral")
        return 1.0 / d
    return f


def _adaptive_simpson(f, a, b, tol, max_depth=60):
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = left + right - whole
        if depth <= 0 or abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1))

    return recurse(a, fa, b, fb, m, fm, whole, tol, max_depth)


def integrate_reciprocal(spec: EstimatorSpec, cfg: QuantizerConfig,
                         a: float, b: float, tol: float = DEFAULT_TOL) -> float:
    """integral_a^b ds / Q'hat(s) to absolute accuracy tol.

    Exact for ste (the integrand is 1). Raises PositivityError when a
    nonpositive derivative is detected anywhere on [a, b].
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("integration bounds must be finite")
    if a == b:
        return 0.0
    if a > b:
        return -integrate_reciprocal(spec, cfg, b, a, tol)
    if spec.kind == "ste":
        return b - a
    return _adaptive_simpson(_reciprocal(spec, cfg), a, b, tol)


# -- tanh closed form -------------------------------------------------------
# antiderivative of cosh^2(k t)/k in the per-bin offset t

def _tanh_F(t, k):
    return t / (2.0 * k) + np.sinh(2.0 * k * t) / (4.0 * k * k)


def _tanh_period(k, delta):
    # integral of 1/Q'hat over one full bin
    return delta / (2.0 * k) + math.sinh(k * delta) / (2.0 * k * k)


def alpha(spec: EstimatorSpec, cfg: QuantizerConfig, tol: float = DEFAULT_TOL) -> float:
    """Bin width over effective bin width. 1 for ste and for any binary
    quantizer; pwl resolves to 1 via its clip interior."""
    if cfg.binary or spec.kind == "ste":
        return 1.0
    if spec.kind == "tanh":
        return cfg.delta / _tanh_period(spec.k, cfg.delta)
    if spec.kind == "pwl":
        _pwl_check_covers_bin(spec, cfg)
        return 1.0
    return alpha_from_bin(spec, cfg, _first_interior_code(cfg), tol)


def alpha_from_bin(spec: EstimatorSpec, cfg: QuantizerConfig, code: int,
                   tol: float = DEFAULT_TOL) -> float:
    """alpha computed by quadrature over the single bin of the given interior
    code; cyclicity makes the choice irrelevant up to quadrature error."""
    if cfg.binary:
        raise ValueError("binary quantizer has no finite bins")
    if not (cfg.l < code < cfg.u):
        raise ValueError(f"code {code} is not interior to [{cfg.l}, {cfg.u}]")
    lo = (code - 0.5) * cfg.delta
    return cfg.delta / integrate_reciprocal(spec, cfg, lo, lo + cfg.delta, tol)


def _first_interior_code(cfg):
    if cfg.u - cfg.l < 2:
        raise ValueError("quantizer has no interior bin")
    return cfg.l + 1


def _pwl_check_covers_bin(spec, cfg):
    lo, hi = clip_range(spec, cfg)
    k = _first_interior_code(cfg)
    if lo > (k - 0.5) * cfg.delta or hi < (k + 0.5) * cfg.delta:
        raise PositivityError("pwl clip range does not cover an interior bin")


@dataclass(frozen=True)
class WarpContext:
    """Immutable bundle of estimator, quantizer, cached alpha, and the
    evaluation method for the warp map."""

    spec: EstimatorSpec
    cfg: QuantizerConfig
    alpha: float
    method: str  # closed_form | quadrature
    tol: float = DEFAULT_TOL


def make_warp_context(spec: EstimatorSpec, cfg: QuantizerConfig,
                      method: str = "auto", tol: float = DEFAULT_TOL) -> WarpContext:
    if method == "auto":
        method = "closed_form" if spec.kind in ("ste", "tanh", "pwl") else "quadrature"
    if method not in ("closed_form", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    return WarpContext(spec=spec, cfg=cfg, alpha=alpha(spec, cfg, tol),
                       method=method, tol=tol)


def warp(w, ctx: WarpContext):
    """M(w) for a scalar or array of latent weights.

    Anchored at the boundary below w's bin, so boundary points are exact
    fixed points. Past the representable range the outermost bin's integrand
    continues, keeping M monotone and continuous. pwl contexts are the
    identity on their clip interval and undefined outside it.
    """
    spec, cfg = ctx.spec, ctx.cfg
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weight must be finite")
    scalar = w.ndim == 0

    if spec.kind == "ste":
        out = w.copy()
        return float(out) if scalar else out

    if spec.kind == "pwl":
        lo, hi = clip_range(spec, cfg)
        if np.any(w < lo) or np.any(w > hi):
            raise PositivityError("warp of a pwl estimator is undefined outside its clip range")
        out = w.copy()
        return float(out) if scalar else out

    if spec.kind == "tanh" and ctx.method == "closed_form":
        k = spec.k
        if cfg.binary:
            out = ctx.alpha * (_tanh_F(w, k) - 0.0)  # anchor at the sign boundary
        else:
            code = np.clip(np.floor(w / cfg.delta + 0.5), cfg.l, cfg.u)
            t = w - code * cfg.delta
            out = (code - 0.5) * cfg.delta + ctx.alpha * (
                _tanh_F(t, k) + _tanh_F(cfg.delta / 2.0, k))
        return float(out) if scalar else out

    # generic quadrature, one element at a time
    flat = np.atleast_1d(w).ravel()
    out = np.empty_like(flat)
    for i, wi in enumerate(flat):
        if cfg.binary:
            anchor = 0.0
        else:
            anchor = (bin_code(wi, cfg) - 0.5) * cfg.delta
        out[i] = anchor + ctx.alpha * integrate_reciprocal(spec, cfg, anchor, float(wi), ctx.tol)
    out = out.reshape(np.shape(w))
    return float(out) if scalar else out


def warp_pwl_bounds(w_min: float, w_max: float, ctx: WarpContext):
    """Clip bounds (M(w_min), M(w_max)) for the replacement clip estimator in
    the non-adaptive construction for estimators that vanish outside
    [w_min, w_max]."""
    if not w_min < w_max:
        raise ValueError("need w_min < w_max")
    return float(warp(w_min, ctx)), float(warp(w_max, ctx))
