import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgrs import tensor as T
from mgrs.distill import (MetaHead, alpha_vector, init_distill, match_dims, pair_loss,
                          pair_weight, rho_weights, total_distill_loss)
from mgrs.errors import ContractError
from mgrs.gradcheck import gradcheck
from mgrs.layers import ConvParams
from mgrs.rng import Rng
from mgrs.tensor import Tensor, backward
from oracles import pair_loss_loop, total_distill_loop


def _taps(rng, n=2, chans=(4, 8), size=8):
    return [Tensor(rng.derive("f", k).normal((n, c, size >> k, size >> k)), requires_grad=True)
            for k, c in enumerate(chans)]


def test_identity_regressor_keeps_student():
    rng = Rng(0)
    s = Tensor(rng.normal((2, 4, 6, 6)))
    t = Tensor(rng.normal((2, 4, 6, 6)))
    reg = ConvParams.create(4, 4, 1, rng, padding=0)
    reg.weight.data[...] = np.eye(4).reshape(4, 4, 1, 1)
    s2, t2 = match_dims(s, t, reg)
    assert np.array_equal(s2.data, s.data) and np.array_equal(t2.data, t.data)


def test_match_dims_shapes_and_frozen_teacher():
    rng = Rng(1)
    s = Tensor(rng.normal((3, 8, 16, 16)), requires_grad=True)
    t = Tensor(rng.normal((3, 4, 8, 8)), requires_grad=True)
    reg = ConvParams.create(8, 4, 1, rng, padding=0)
    s2, t2 = match_dims(s, t, reg)
    assert s2.shape == t2.shape == (3, 4, 16, 16)
    backward(pair_loss(s2, t2, np.full(4, 0.25)))
    assert t.grad is None and s.grad is not None


def test_zero_head_gives_uniform_rho():
    head = MetaHead.create(6, 6, Rng(0))
    rho = rho_weights(Tensor(Rng(1).normal((2, 6, 3, 3))), head).data
    assert np.array_equal(rho, np.full((2, 6, 1, 1), 1 / 6))


def test_rho_matches_explicit_oracle():
    rng = Rng(2)
    head = MetaHead.create(5, 5, rng, zero_output=False)
    x = rng.derive("x").normal((1, 5, 4, 3))
    pooled = x[0].mean(axis=(1, 2))
    hidden = np.maximum(0, head.fc1.weight.data[:, :, 0, 0] @ pooled + head.fc1.bias.data.ravel())
    logits = head.fc2.weight.data[:, :, 0, 0] @ hidden + head.fc2.bias.data.ravel()
    want = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    assert np.max(np.abs(rho_weights(Tensor(x), head).data.ravel() - want)) < 1e-14


def test_pair_loss_zero_residual_and_one_hot():
    rng = Rng(3)
    s = rng.normal((2, 3, 4, 4))
    t = rng.derive("t").normal((2, 3, 4, 4))
    assert pair_loss(Tensor(s), Tensor(s), np.full(3, 1 / 3)).item() == 0.0
    got = pair_loss(Tensor(s), Tensor(t), np.array([0.0, 1.0, 0.0])).item()
    assert abs(got - np.mean((s[:, 1] - t[:, 1]) ** 2)) < 1e-15


@given(st.integers(0, 10 ** 6))
def test_pair_loss_matches_loop(seed):
    rng = Rng(seed)
    s = rng.normal((2, 3, 5, 4))
    t = rng.derive("t").normal((2, 3, 5, 4))
    rho = rng.derive("r").random(3)
    assert abs(pair_loss(Tensor(s), Tensor(t), rho).item() - pair_loss_loop(s, t, rho)) < 1e-12


def test_pair_loss_contract():
    with pytest.raises(ContractError):
        pair_loss(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 4))), np.ones(2) / 2)
    with pytest.raises(ContractError):
        pair_loss(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 3, 3))), np.ones(3) / 3)


def test_single_level_pair_is_the_pair_loss():
    rng = Rng(4)
    dp = init_distill([3], [2], rng)
    s, t = Tensor(rng.normal((2, 3, 4, 4))), Tensor(rng.derive("t").normal((2, 2, 4, 4)))
    r, w = total_distill_loss([s], [t], dp)
    s2, t2 = match_dims(s, t, dp.regressors[(1, 1)])
    assert w.alpha.tolist() == [1.0]
    assert abs(r.item() - pair_loss(s2, t2, np.full(2, 0.5)).item()) < 1e-15


def test_equal_pair_losses_give_that_value():
    # every pair compares identical zero features shifted by a constant bias
    rng = Rng(5)
    dp = init_distill([2, 2], [2, 2], rng, zero_heads=False)
    for reg in dp.regressors.values():
        reg.weight.data[...] = 0.0
        reg.bias.data[...] = 1.0
    students = [Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2)))]
    teachers = [Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2)))]
    r, _ = total_distill_loss(students, teachers, dp)
    assert abs(r.item() - 1.0) < 1e-15


@given(st.integers(0, 10 ** 6))
def test_total_loss_matches_loop_oracle(seed):
    rng = Rng(seed)
    dp = init_distill([3, 5], [2, 4], rng.derive("dp"), zero_heads=False)
    students = [rng.derive("s1").normal((2, 3, 6, 6)), rng.derive("s2").normal((2, 5, 3, 3))]
    teachers = [rng.derive("t1").normal((2, 2, 8, 8)), rng.derive("t2").normal((2, 4, 4, 4))]
    r, w = total_distill_loss([Tensor(s) for s in students], [Tensor(t) for t in teachers], dp)
    want, alphas, rhos = total_distill_loop(students, teachers, dp)
    assert abs(r.item() - want) < 1e-12
    assert np.max(np.abs(w.alpha_batch - alphas)) < 1e-12
    for key, rho in rhos.items():
        assert np.max(np.abs(w.rho_batch[key] - rho)) < 1e-12


def test_simplex_and_pair_order_invariance():
    rng = Rng(6)
    dp = init_distill([4, 8], [2, 4], rng.derive("dp"), zero_heads=False)
    students, teachers = _taps(rng.derive("s"), chans=(4, 8)), _taps(rng.derive("t"), chans=(2, 4))
    r, w = total_distill_loss(students, teachers, dp)
    assert np.all(w.alpha_batch >= 0) and np.allclose(w.alpha_batch.sum(axis=1), 1, atol=1e-12)
    alpha = alpha_vector(teachers, dp)
    assert np.array_equal(pair_weight(alpha, 2).data, alpha.data[:, 2:3])
    order = dp.pairs()
    dp.pairs = lambda: list(reversed(order))
    r_rev, _ = total_distill_loss(students, teachers, dp)
    assert abs(r.item() - r_rev.item()) < 1e-13


def test_zero_iff_students_match_teachers():
    rng = Rng(7)
    dp = init_distill([2, 2], [2, 2], rng.derive("dp"), zero_heads=False)
    for reg in dp.regressors.values():
        reg.weight.data[...] = np.eye(2).reshape(2, 2, 1, 1)
        reg.bias.data[...] = 0.0
    const = [Tensor(np.full((1, 2, 4, 4), 0.3)), Tensor(np.full((1, 2, 2, 2), 0.3))]
    assert total_distill_loss(const, const, dp)[0].item() == 0.0
    other = [Tensor(np.full((1, 2, 4, 4), 0.3)), Tensor(np.full((1, 2, 2, 2), 0.31))]
    assert total_distill_loss(other, const, dp)[0].item() > 0


def test_teacher_taps_get_no_gradient():
    rng = Rng(8)
    dp = init_distill([4, 8], [2, 4], rng.derive("dp"), zero_heads=False)
    students, teachers = _taps(rng.derive("s"), chans=(4, 8)), _taps(rng.derive("t"), chans=(2, 4))
    backward(total_distill_loss(students, teachers, dp)[0])
    assert all(t.grad is None for t in teachers)
    assert all(s.grad is not None for s in students)
    assert all(p.grad is not None for p in dp.tensors().values())


def test_level_count_mismatch():
    dp = init_distill([2, 2], [2, 2], Rng(0))
    with pytest.raises(ContractError):
        total_distill_loss([Tensor(np.zeros((1, 2, 4, 4)))], [Tensor(np.zeros((1, 2, 4, 4)))], dp)


def test_gradients_reach_every_distill_parameter():
    rng = Rng(9)
    dp = init_distill([4, 8], [2, 4], rng.derive("dp"), zero_heads=False)
    students, teachers = _taps(rng.derive("s"), chans=(4, 8)), _taps(rng.derive("t"), chans=(2, 4))
    params = dict(dp.tensors())
    params.update({f"s{i}": s for i, s in enumerate(students)})
    rep = gradcheck(lambda: total_distill_loss(students, teachers, dp)[0], params, 1e-6, max_entries=8)
    assert rep.passed, str(rep)
