"""Backward-pass gradient estimators and their bounding constants.

An estimator supplies the surrogate derivative used in place of the
quantizer's (almost-everywhere zero) derivative. Supported families:

  ste   constant 1.
  pwl   indicator of a clip interval [w_min, w_max].
  tanh  per-bin hyperbolic shape k / cosh(k*(w - a))**2 around the bin
        center a; past the representable range the outermost bin's shape
        continues, so the derivative decays but stays positive.
  mad   1 on a range, reciprocal decay 1/(1+d)**2 at distance d past it.

The constants L- <= Q'hat <= L+ and the Lipschitz constant L' of Q'hat feed
the per-step alignment bounds checked by the bisim module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quantizer import QuantizerConfig, bin_center, representable_range

__all__ = [
    "EstimatorSpec",
    "EstimatorConstants",
    "PositivityError",
    "derivative",
    "check_cyclical",
    "lipschitz_constants",
    "dsq_bound",
    "clip_range",
]

GRID_POINTS = 100_001  # numeric-fallback resolution, >= 1e5 per contract


class PositivityError(ValueError):
    """The estimator derivative is not strictly positive where required."""


@dataclass(frozen=True)
class EstimatorSpec:
    """One gradient estimator. Range fields left as None resolve to the
    attached quantizer's representable range (or +-delta for binary)."""

    kind: str  # ste | pwl | tanh | mad
    k: float | None = None
    w_min: float | None = None
    w_max: float | None = None
    range_lo: float | None = None
    range_hi: float | None = None

    def __post_init__(self):
        if self.kind not in ("ste", "pwl", "tanh", "mad"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "tanh" and not (self.k is not None and self.k > 0):
            raise ValueError("tanh estimator needs k > 0")
        if self.kind == "pwl" and self.w_min is not None and self.w_max is not None:
            if not self.w_min < self.w_max:
                raise ValueError("pwl needs w_min < w_max")
        if self.kind == "mad" and self.range_lo is not None and self.range_hi is not None:
            if not self.range_lo < self.range_hi:
                raise ValueError("mad needs range_lo < range_hi")

    @classmethod
    def ste(cls):
        return cls(kind="ste")

    @classmethod
    def pwl(cls, w_min=None, w_max=None):
        return cls(kind="pwl", w_min=w_min, w_max=w_max)

    @classmethod
    def tanh_htge(cls, k):
        return cls(kind="tanh", k=k)

    @classmethod
    def mad(cls, range_lo=None, range_hi=None):
        return cls(kind="mad", range_lo=range_lo, range_hi=range_hi)

    @property
    def strictly_positive(self) -> bool:
        """True when the derivative is > 0 on all of R (pwl is zero outside
        its clip interval)."""
        return self.kind != "pwl"


@dataclass(frozen=True)
class EstimatorConstants:
    """Derivative bounds over the representable range plus the Lipschitz
    constant of the derivative. g_plus, when set, is the update-magnitude
    bound used by the momentum-variant checks."""

    l_minus: float
    l_plus: float
    l_prime: float
    g_plus: float | None = None
    method: str = "closed_form"
    grid_step: float | None = None

    def __post_init__(self):
        if not 0 < self.l_minus <= self.l_plus:
            raise ValueError("need 0 < l_minus <= l_plus")
        if self.l_prime < 0:
            raise ValueError("l_prime must be nonnegative")

    def sgd_ratio(self) -> float:
        """L' * L+ / (2 * L-^2), the per-unit convexity-error scale."""
        return self.l_prime * self.l_plus / (2.0 * self.l_minus ** 2)


def _default_range(cfg: QuantizerConfig):
    # binary nets keep delta as the clip-convention scale
    if cfg.binary:
        return (-cfg.delta, cfg.delta)
    return representable_range(cfg)


def clip_range(spec: EstimatorSpec, cfg: QuantizerConfig):
    """Resolved (lo, hi) interval for pwl/mad specs."""
    if spec.kind == "pwl":
        lo = spec.w_min, spec.w_max
    elif spec.kind == "mad":
        lo = spec.range_lo, spec.range_hi
    else:
        raise ValueError(f"{spec.kind} estimator has no clip range")
    auto = _default_range(cfg)
    return (auto[0] if lo[0] is None else lo[0], auto[1] if lo[1] is None else lo[1])


def derivative(w, spec: EstimatorSpec, cfg: QuantizerConfig):
    """Estimator derivative at latent weight w (scalar or array)."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("weight must be finite")
    if spec.kind == "ste":
        out = np.ones_like(w)
    elif spec.kind == "pwl":
        lo, hi = clip_range(spec, cfg)
        out = ((w >= lo) & (w <= hi)).astype(np.float64)
    elif spec.kind == "tanh":
        a = bin_center(w, cfg)
        out = spec.k / np.cosh(spec.k * (w - a)) ** 2
    else:  # mad
        lo, hi = clip_range(spec, cfg)
        d = np.maximum(np.maximum(lo - w, w - hi), 0.0)
        out = 1.0 / (1.0 + d) ** 2
    return float(out) if out.ndim == 0 else out


def check_cyclical(spec_or_fn, cfg: QuantizerConfig, tol: float,
                   samples_per_bin: int = 1000, seed: int = 0) -> bool:
    """True when the derivative repeats across adjacent finite bins:
    |f(w) - f(w + delta)| <= tol for sampled w with both points inside
    interior bins of the representable range.

    Accepts an EstimatorSpec or a bare callable (useful for probing ad-hoc
    shapes).
    """
    if cfg.binary:
        raise ValueError("cyclicity is defined over finite bins; binary has none")
    n_interior = cfg.u - cfg.l - 1
    if n_interior < 2:
        raise ValueError(f"need >= 2 interior bins, have {n_interior}")
    if isinstance(spec_or_fn, EstimatorSpec):
        f = lambda w: derivative(w, spec_or_fn, cfg)
    else:
        f = spec_or_fn
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    worst = 0.0
    # w in bin k, w + delta in bin k+1; both must be interior codes
    for k in range(cfg.l + 1, cfg.u - 1):
        lo = (k - 0.5) * cfg.delta
        w = lo + cfg.delta * rng.random(samples_per_bin)
        worst = max(worst, float(np.max(np.abs(np.asarray(f(w)) - np.asarray(f(w + cfg.delta))))))
    return worst <= tol


def _tanh_constants(k: float, delta: float) -> EstimatorConstants:
    # derivative k/cosh^2(k t) on t in [-delta/2, delta/2]: max at the bin
    # center, min at the edges; |second derivative| peaks at
    # t = log(2+sqrt(3))/(2k) or at the edge, whichever is closer in.
    l_plus = k
    l_minus = k / math.cosh(k * delta / 2.0) ** 2
    t_star = min(delta / 2.0, math.log(2.0 + math.sqrt(3.0)) / (2.0 * k))
    l_prime = 2.0 * k * k * math.tanh(k * t_star) / math.cosh(k * t_star) ** 2
    return EstimatorConstants(l_minus=l_minus, l_plus=l_plus, l_prime=l_prime)


def _grid_constants(spec, cfg: QuantizerConfig, points: int) -> EstimatorConstants:
    lo, hi = _default_range(cfg)  # +-delta convention for binary
    pad = 2.0 * cfg.delta
    grid = np.linspace(lo - pad, hi + pad, points)
    y = derivative(grid, spec, cfg)
    if np.any(y <= 0):
        raise PositivityError("derivative is nonpositive on the sampled grid")
    step = grid[1] - grid[0]
    inside = (grid >= lo) & (grid <= hi)
    # L- is the bound over the representable range, where the theorems live;
    # L+ and L' are taken over the padded grid to catch tail misbehavior.
    return EstimatorConstants(
        l_minus=float(np.min(y[inside])),
        l_plus=float(np.max(y)),
        l_prime=float(np.max(np.abs(np.diff(y)) / step)),
        method="grid",
        grid_step=float(step),
    )


def lipschitz_constants(spec: EstimatorSpec, cfg: QuantizerConfig,
                        method: str = "auto", points: int = GRID_POINTS) -> EstimatorConstants:
    """Constants (L-, L+, L') for the estimator over the quantizer's range.

    Closed forms exist for ste and tanh; anything else is sampled on a dense
    grid (the grid minimum for L- is restricted to the representable range).
    pwl has no positive lower bound and is rejected; its bisimulation route
    goes through the warped-clip construction instead.
    """
    if method not in ("auto", "closed_form", "grid"):
        raise ValueError(f"unknown method {method!r}")
    if spec.kind == "pwl":
        raise PositivityError("pwl constants undefined: L- = 0 outside the clip range")
    if method in ("auto", "closed_form"):
        if spec.kind == "ste":
            return EstimatorConstants(l_minus=1.0, l_plus=1.0, l_prime=0.0)
        if spec.kind == "tanh" and not cfg.binary:
            return _tanh_constants(spec.k, cfg.delta)
        if method == "closed_form":
            raise ValueError(f"no closed form for {spec.kind} on this quantizer")
    return _grid_constants(spec, cfg, points)


def dsq_bound(alpha_param: float) -> float:
    """Upper bound (1-a)/(2a - a^2) on L'L+/L-^2 for the soft-quantizer
    family parameterized by its own shape value a in (0, 1]."""
    if not 0.0 < alpha_param <= 1.0:
        raise ValueError(f"shape parameter must be in (0, 1], got {alpha_param}")
    return (1.0 - alpha_param) / (2.0 * alpha_param - alpha_param ** 2)
