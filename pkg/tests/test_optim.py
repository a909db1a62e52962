import numpy as np
import pytest

from mgrs.errors import ContractError
from mgrs.optim import AdamState, adam_step
from mgrs.rng import Rng
from mgrs.tensor import Tensor
from oracles import adam_scalar


def test_first_step_moves_by_lr_times_sign():
    p = Tensor(np.array([[[[1.0, -2.0]]]]), requires_grad=True)
    state = AdamState.for_params({"p": p})
    adam_step({"p": p}, {"p": np.array([[[[0.3, -7.0]]]])}, state, 1e-3)
    assert np.allclose(p.data, [[[[1.0 - 1e-3, -2.0 + 1e-3]]]], atol=1e-10)


def test_matches_scalar_oracle_over_many_steps():
    rng = Rng(4)
    grads = rng.normal((25, 1, 3, 2, 2))
    p = Tensor(rng.normal((1, 3, 2, 2)), requires_grad=True)
    start = p.data.copy()
    state = AdamState.for_params({"p": p})
    for g in grads:
        adam_step({"p": p}, {"p": g}, state, 0.01)
    for idx in np.ndindex(start.shape):
        want = adam_scalar(start[idx], [g[idx] for g in grads], 0.01)
        assert abs(p.data[idx] - want) < 1e-12


def test_uses_tensor_grad_and_missing_counts_as_zero():
    a = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    b = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    a.grad = np.full((1, 1, 1, 1), 2.0)
    state = AdamState.for_params({"a": a, "b": b})
    adam_step({"a": a, "b": b}, None, state, 0.1)
    assert a.data.item() < 1.0 and b.data.item() == 1.0
    assert state.t == 1


def test_contract_errors():
    a = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    state = AdamState.for_params({"a": a})
    with pytest.raises(ContractError):
        adam_step({"a": a}, {"a": np.zeros((1, 1, 1, 1))}, state, 0.0)
    with pytest.raises(ContractError):
        adam_step({"a": a}, {"a": np.zeros((1, 2, 1, 1))}, state, 0.1)
    with pytest.raises(ContractError):
        adam_step({"b": a}, None, state, 0.1)
