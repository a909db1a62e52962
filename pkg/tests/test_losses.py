import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgrs.errors import ContractError
from mgrs.losses import bce_loss, l1_loss
from mgrs.rng import Rng
from mgrs.tensor import Tensor, backward
from oracles import bce_loop, l1_loop


@given(st.integers(0, 10 ** 6))
def test_bce_matches_loop(seed):
    rng = Rng(seed)
    p = rng.random((2, 1, 4, 5))
    p[0, 0, 0, :2] = [0.0, 1.0]     # exercise the clamp
    t = (rng.derive("t").random((2, 1, 4, 5)) > 0.4).astype(float)
    assert abs(bce_loss(Tensor(p), t).item() - bce_loop(p, t)) < 1e-9


@given(st.integers(0, 10 ** 6))
def test_l1_matches_loop(seed):
    rng = Rng(seed)
    p, t = rng.normal((2, 3, 4, 4)), rng.derive("t").normal((2, 3, 4, 4))
    assert abs(l1_loss(Tensor(p), t).item() - l1_loop(p, t)) < 1e-12


def test_bce_perfect_prediction_is_near_zero_and_clamped_gradient_zero():
    t = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    p = Tensor(t.copy(), requires_grad=True)
    loss = bce_loss(p, t)
    assert 0 < loss.item() < 1e-6
    backward(loss)
    assert np.all(p.grad == 0)


def test_l1_subgradient_zero_at_equality():
    p = Tensor(np.array([[[[1.0, 2.0, 3.0]]]]), requires_grad=True)
    backward(l1_loss(p, np.array([[[[1.0, 0.0, 5.0]]]])))
    assert p.grad.ravel().tolist() == [0.0, 1 / 3, -1 / 3]


def test_shape_mismatch():
    with pytest.raises(ContractError):
        bce_loss(Tensor(np.full((1, 1, 2, 2), 0.5)), np.zeros((1, 1, 2, 3)))
    with pytest.raises(ContractError):
        l1_loss(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 1, 2, 2)))
