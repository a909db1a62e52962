"""Adam with bias correction, operating in place on named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        return state


def _array(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else p


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray] | None,
              state: AdamState, lr: float):
    """One Adam update of every parameter in ``params``.

    ``grads`` maps the same names to gradient arrays; when ``None`` each
    tensor's ``.grad`` is used (a missing grad counts as zero).
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if set(params) != set(state.m):
        raise ContractError("optimizer state does not match the parameter set")
    resolved = {}
    for name, p in params.items():
        arr = _array(p)
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        if g.shape != arr.shape or state.m[name].shape != arr.shape:
            raise ContractError(f"shape mismatch for parameter {name!r}: "
                                f"param {arr.shape}, grad {g.shape}, state {state.m[name].shape}")
        resolved[name] = g

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = resolved[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr = _array(p)
        arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
