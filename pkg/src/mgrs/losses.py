"""Training losses as single tape operations."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor, record

BCE_CLAMP = 1e-7


def _target_array(target, shape) -> np.ndarray:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != shape:
        raise ContractError(f"prediction {shape} and target {t.shape} differ in shape")
    return t


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to [1e-7, 1 - 1e-7].

    The target is a constant. Clamped entries get zero gradient.
    """
    t = _target_array(target, pred.shape)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (pred.data >= BCE_CLAMP) & (pred.data <= 1.0 - BCE_CLAMP)
    n = p.size
    value = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / n

    def bw(g):
        return (g * inside * (p - t) / (p * (1.0 - p)) / n,)

    return record(np.full((1, 1, 1, 1), value), (pred,), bw, "bce")


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error with subgradient 0 where pred == target."""
    t = _target_array(target, pred.shape)
    d = pred.data - t
    n = d.size
    sign = np.sign(d)
    value = np.abs(d).sum() / n
    return record(np.full((1, 1, 1, 1), value), (pred,), lambda g: (g * sign / n,), "l1")
