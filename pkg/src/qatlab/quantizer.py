"""Uniform and binary weight quantizers.

The uniform quantizer maps a latent weight w to delta * round(clip(w/delta, l, u)).
Rounding is half-away-from-zero. The representable range is [delta*l, delta*u];
inputs past it are clipped to the end codes. The binary quantizer is sign(w)
with sign(0) := +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuantizerConfig",
    "BoundaryPair",
    "NoRepresentableRange",
    "quantize",
    "bin_code",
    "bin_center",
    "boundary_points",
    "representable_range",
    "range_length",
    "interior_boundaries",
    "code_values",
]


class NoRepresentableRange(ValueError):
    """Raised when a range query is made against a binary (sign) quantizer."""


@dataclass(frozen=True)
class QuantizerConfig:
    """Parameters of one quantizer.

    delta: quantization step.
    l, u: lower/upper clip codes; the code grid is l..u.
    bits: bit width; u - l + 1 codes must fit in 2**bits.
    binary: sign quantizer. l/u/bits are ignored, but delta is kept as the
        scale convention for clip-style estimators attached to a binary net.
    """

    delta: float
    l: int
    u: int
    bits: int = 2
    binary: bool = False

    def __post_init__(self):
        if not (self.delta > 0 and np.isfinite(self.delta)):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")
        if self.binary:
            return
        if self.u <= self.l:
            raise ValueError(f"need u > l, got l={self.l}, u={self.u}")
        if self.bits < 1:
            raise ValueError(f"bits must be positive, got {self.bits}")
        if self.u - self.l + 1 > 2 ** self.bits:
            raise ValueError(
                f"{self.u - self.l + 1} codes do not fit in {self.bits} bits"
            )

    @classmethod
    def symmetric(cls, bits, delta):
        """Signed grid l = -2**(bits-1), u = 2**(bits-1) - 1."""
        return cls(delta=delta, l=-(2 ** (bits - 1)), u=2 ** (bits - 1) - 1, bits=bits)

    @classmethod
    def sign(cls, delta=1.0):
        return cls(delta=delta, l=-1, u=1, bits=1, binary=True)


@dataclass(frozen=True)
class BoundaryPair:
    """Bin edges around one weight; an edge is None when the weight sits in
    the clipped region past that end of the representable range.

    sign_boundary marks the binary-quantizer case: the only boundary is 0 and
    both edges are reported absent.
    """

    lower: float | None
    upper: float | None
    sign_boundary: bool = False


def _check_finite(w):
    if not np.all(np.isfinite(w)):
        raise ValueError("weight must be finite")


def quantize(w, cfg: QuantizerConfig):
    """Quantize a weight (scalar or array). Half-ties round away from zero."""
    w = np.asarray(w, dtype=np.float64)
    _check_finite(w)
    if cfg.binary:
        out = np.where(w < 0.0, -1.0, 1.0)
    else:
        x = np.clip(w / cfg.delta, cfg.l, cfg.u)
        out = cfg.delta * np.copysign(np.floor(np.abs(x) + 0.5), x)
    return float(out) if out.ndim == 0 else out


def bin_code(w, cfg: QuantizerConfig):
    """Clipped code of the bin containing w.

    An exact boundary point belongs to the bin above it (w- <= w < w+). This
    tie rule differs from quantize() only on the measure-zero set of exact
    negative-side boundary points.
    """
    w = np.asarray(w, dtype=np.float64)
    _check_finite(w)
    if cfg.binary:
        out = np.where(w < 0.0, -1, 1)
    else:
        out = np.clip(np.floor(w / cfg.delta + 0.5), cfg.l, cfg.u)
    out = out.astype(np.int64)
    return int(out) if out.ndim == 0 else out


def bin_center(w, cfg: QuantizerConfig):
    """Center of w's bin: the code value delta*k. Zero for binary."""
    if cfg.binary:
        w = np.asarray(w, dtype=np.float64)
        _check_finite(w)
        out = np.zeros_like(w)
        return float(out) if out.ndim == 0 else out
    code = bin_code(w, cfg)
    out = np.asarray(code, dtype=np.float64) * cfg.delta
    return float(out) if np.ndim(out) == 0 else out


def boundary_points(w: float, cfg: QuantizerConfig) -> BoundaryPair:
    """Bin edges (k-1/2)*delta and (k+1/2)*delta around w's clipped code k.

    Past the representable range only the edge nearest the range survives;
    the other is absent. For the binary quantizer the single boundary is 0,
    reported via sign_boundary with both edges absent.
    """
    if cfg.binary:
        _check_finite(w)
        return BoundaryPair(lower=None, upper=None, sign_boundary=True)
    k = bin_code(w, cfg)
    lo, hi = representable_range(cfg)
    lower = (k - 0.5) * cfg.delta if w >= lo else None
    upper = (k + 0.5) * cfg.delta if w <= hi else None
    return BoundaryPair(lower=lower, upper=upper)


def representable_range(cfg: QuantizerConfig):
    """(delta*l, delta*u). Binary quantizers have no representable range."""
    if cfg.binary:
        raise NoRepresentableRange("binary quantizer has no representable range")
    return (cfg.delta * cfg.l, cfg.delta * cfg.u)


def range_length(cfg: QuantizerConfig) -> float:
    lo, hi = representable_range(cfg)
    return hi - lo


def interior_boundaries(cfg: QuantizerConfig) -> np.ndarray:
    """All boundary points (k+1/2)*delta, k = l..u-1; crossing one changes
    the quantized value."""
    if cfg.binary:
        raise NoRepresentableRange("binary quantizer has the single boundary 0")
    ks = np.arange(cfg.l, cfg.u)
    return (ks + 0.5) * cfg.delta


def code_values(cfg: QuantizerConfig) -> np.ndarray:
    """The u - l + 1 representable values delta*l .. delta*u."""
    if cfg.binary:
        return np.array([-1.0, 1.0])
    return cfg.delta * np.arange(cfg.l, cfg.u + 1, dtype=np.float64)
