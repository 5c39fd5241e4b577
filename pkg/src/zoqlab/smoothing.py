"""Channel-wise scale/shift that migrates activation outliers into weights.

For a linear layer y = x w + b the factorization

    y = [(x - shift) / scale] [scale * w] + [b + shift w]

is exact in real arithmetic; quantizing the bracketed factors trades
activation range for weight range. scale and shift are per-input-channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidStateError
from .quantizer import QuantSpec, fake_quant, init_range
from .numerics import Tensor


@dataclass
class SmoothingParams:
    """Per-input-channel scale (> 0) and shift for one linear layer."""

    scale: Tensor
    shift: Tensor

    def __post_init__(self):
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        self.shift = np.atleast_1d(np.asarray(self.shift, dtype=np.float64))
        if self.scale.shape != self.shift.shape:
            raise DimensionError(
                f"scale and shift lengths differ: {self.scale.shape} vs {self.shift.shape}"
            )

    def validate(self) -> None:
        if np.any(self.scale <= 0):
            raise InvalidStateError("smoothing scale must be strictly positive")

    @classmethod
    def identity(cls, d1: int) -> "SmoothingParams":
        return cls(scale=np.ones(d1), shift=np.zeros(d1))

    def copy(self) -> "SmoothingParams":
        return SmoothingParams(self.scale.copy(), self.shift.copy())


def apply_smoothing(
    x: Tensor, w: Tensor, b: Tensor, p: SmoothingParams
) -> tuple[Tensor, Tensor, Tensor]:
    """Return the smoothed triple (x_s, w_s, b_s) with x_s w_s + b_s == x w + b.

    x is (T, D1), w is (D1, D2), b is (1, D2) or (D2,). Row i of w is scaled
    by scale[i]; the shift folds into the bias as shift @ w.
    """
    p.validate()
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d1 = p.scale.shape[0]
    if x.ndim != 2 or x.shape[1] != d1:
        raise DimensionError(f"activation shape {x.shape} incompatible with {d1} channels")
    if w.ndim != 2 or w.shape[0] != d1:
        raise DimensionError(f"weight shape {w.shape} incompatible with {d1} channels")
    if b.reshape(-1).shape[0] != w.shape[1]:
        raise DimensionError(f"bias shape {b.shape} incompatible with weight {w.shape}")
    x_s = (x - p.shift) / p.scale
    w_s = p.scale[:, None] * w
    b_s = b + p.shift @ w
    return x_s, w_s, b_s


def smooth_activation(x: Tensor, p: SmoothingParams) -> Tensor:
    """Activation side of the factorization only: (x - shift) / scale."""
    p.validate()
    return (np.asarray(x, dtype=np.float64) - p.shift) / p.scale


def smoothing_gain(
    x: Tensor,
    w: Tensor,
    b: Tensor,
    p: SmoothingParams,
    weight_spec: QuantSpec,
    act_spec: QuantSpec,
) -> float:
    """Squared reconstruction error of the quantized smoothed layer.

    Quantizers are range-initialized on the smoothed tensors, so this scores
    how well (scale, shift) prepare the layer for quantization; lower is
    better.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    y = x @ w + b
    x_s, w_s, b_s = apply_smoothing(x, w, b, p)
    x_q = fake_quant(x_s, act_spec, init_range(x_s, act_spec))
    w_q = fake_quant(w_s, weight_spec, init_range(w_s, weight_spec))
    diff = y - (x_q @ w_q + b_s)
    return float(np.sum(diff * diff))
