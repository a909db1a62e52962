"""Finite-difference verification of every differentiable operation.

``gradcheck_suite()`` returns ``(name, GradcheckReport)`` pairs: one per
primitive at tolerance 1e-6 on small random tensors, plus the composed
stage-2 loss (L1 + lambda * R through gated blocks, regressors, rho heads and
alpha heads) at 1e-5 on a 16x16 input with 2 levels.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from . import tensor as T
from .distill import init_distill, pair_loss, total_distill_loss
from .gradcheck import gradcheck
from .losses import bce_loss, l1_loss
from .networks import init_network, mask_config, mask_forward, restore_config, restore_forward
from .rng import Rng
from .tensor import Tensor, no_grad

OP_TOLERANCE = 1e-6
END_TO_END_TOLERANCE = 1e-5


def _t(rng: Rng, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(shape) * scale, requires_grad=True)


def _const(rng: Rng, shape) -> Tensor:
    return Tensor(rng.normal(shape))


def _op_cases(rng: Rng) -> list:
    """(name, build_loss, params) triples; each loss is a weighted sum of the op output."""
    cases = []

    def add_case(name, fn, params, out_shape):
        w = _const(rng.derive("w", name), out_shape)
        cases.append((name, lambda: T.sum_(T.mul(fn(), w)), params))

    a, b = _t(rng.derive("a"), (2, 3, 4, 4)), _t(rng.derive("b"), (2, 3, 4, 4))
    m = _t(rng.derive("m"), (2, 1, 4, 4))
    add_case("add", lambda: T.add(a, b), [a, b], (2, 3, 4, 4))
    add_case("sub", lambda: T.sub(a, b), [a, b], (2, 3, 4, 4))
    add_case("mul", lambda: T.mul(a, b), [a, b], (2, 3, 4, 4))
    add_case("mul_mask_broadcast", lambda: T.mul(a, m), [a, m], (2, 3, 4, 4))
    add_case("scale", lambda: T.scale(a, -1.7), [a], (2, 3, 4, 4))
    add_case("abs", lambda: T.absolute(a), [a], (2, 3, 4, 4))
    add_case("clamp", lambda: T.clamp(a, -0.5, 0.7), [a], (2, 3, 4, 4))
    add_case("relu", lambda: T.relu(a), [a], (2, 3, 4, 4))
    add_case("sigmoid", lambda: T.sigmoid(a), [a], (2, 3, 4, 4))
    add_case("softmax_channels", lambda: T.softmax_channels(a), [a], (2, 3, 4, 4))
    for op in ("sum", "mean"):
        add_case(f"{op}_all", lambda op=op: T.reduce(op, a, "all"), [a], (1, 1, 1, 1))
        add_case(f"{op}_spatial", lambda op=op: T.reduce(op, a, "spatial"), [a], (2, 3, 1, 1))
        add_case(f"{op}_channels", lambda op=op: T.reduce(op, a, "channels"), [a], (2, 1, 4, 4))
    add_case("concat", lambda: T.concat([a, m]), [a, m], (2, 4, 4, 4))
    add_case("channel_slice", lambda: T.channel_slice(a, 1, 3), [a], (2, 2, 4, 4))

    x = _t(rng.derive("x"), (2, 3, 4, 4))
    c1 = L.ConvParams.create(3, 5, 3, rng.derive("c1"), stride=1, padding=1)
    c1.bias.data[...] = rng.derive("c1b").normal((1, 5, 1, 1))
    add_case("conv2d_3x3", lambda: L.conv2d(x, c1), [x, c1.weight, c1.bias], (2, 5, 4, 4))
    c2 = L.ConvParams.create(3, 4, 3, rng.derive("c2"), stride=2, padding=1)
    add_case("conv2d_stride2", lambda: L.conv2d(x, c2), [x, c2.weight, c2.bias], (2, 4, 2, 2))
    c3 = L.ConvParams.create(3, 2, 1, rng.derive("c3"), padding=0)
    add_case("conv2d_1x1", lambda: L.conv2d(x, c3), [x, c3.weight, c3.bias], (2, 2, 4, 4))
    add_case("pixel_unshuffle", lambda: L.pixel_unshuffle(x, 2), [x], (2, 12, 2, 2))
    y = _t(rng.derive("y"), (1, 8, 2, 2))
    add_case("pixel_shuffle", lambda: L.pixel_shuffle(y, 2), [y], (1, 2, 4, 4))
    add_case("resize_bilinear_up", lambda: L.resize(x, (7, 5), "bilinear"), [x], (2, 3, 7, 5))
    add_case("resize_bilinear_down", lambda: L.resize(x, (3, 2), "bilinear"), [x], (2, 3, 3, 2))
    add_case("resize_nearest", lambda: L.resize(x, (8, 6), "nearest"), [x], (2, 3, 8, 6))
    add_case("upsample2x", lambda: L.upsample2x(x), [x], (2, 3, 8, 8))
    add_case("global_avg_pool", lambda: L.global_avg_pool(x), [x], (2, 3, 1, 1))

    f = _t(rng.derive("f"), (2, 4, 4, 4))
    gate = L.GateBlockParams.create(4, rng.derive("gate"))
    mask = Tensor(rng.derive("gm").random((2, 1, 8, 8)))
    add_case("gated_block", lambda: L.gated_block(f, mask, gate),
             [f, gate.conv.weight, gate.conv.bias], (2, 4, 4, 4))

    prob = Tensor(0.05 + 0.9 * rng.derive("p").random((2, 1, 4, 4)), requires_grad=True)
    target = (rng.derive("tg").random((2, 1, 4, 4)) > 0.5).astype(float)
    cases.append(("bce", lambda: bce_loss(prob, target), [prob]))
    pred = _t(rng.derive("pred"), (2, 3, 4, 4))
    clean = rng.derive("clean").normal((2, 3, 4, 4))
    cases.append(("l1", lambda: l1_loss(pred, clean), [pred]))

    s, t = _t(rng.derive("s"), (2, 4, 4, 4)), _const(rng.derive("t"), (2, 4, 4, 4))
    rho = Tensor(rng.derive("rho").random((1, 4, 1, 1)), requires_grad=True)
    cases.append(("pair_loss", lambda: pair_loss(s, t, rho), [s, rho]))
    return cases


def _distill_case(rng: Rng) -> tuple:
    """R w.r.t. student features, regressors, rho heads and alpha heads (heads randomised)."""
    dp = init_distill([4, 8], [2, 4], rng.derive("dp"), zero_heads=False)
    students = [_t(rng.derive("s1"), (2, 4, 4, 4)), _t(rng.derive("s2"), (2, 8, 2, 2))]
    teachers = [_const(rng.derive("t1"), (2, 2, 8, 8)), _const(rng.derive("t2"), (2, 4, 4, 4))]
    params = {f"student{i}": s for i, s in enumerate(students)}
    params.update(dp.tensors())
    return ("total_distill_loss",
            lambda: total_distill_loss(students, teachers, dp)[0], params)


def end_to_end_case(seed: int = 0, lambda_distill: float = 0.1) -> tuple:
    """Composed stage-2 loss on a 16x16 batch with 2 levels and randomised heads."""
    rng = Rng(seed).derive("e2e")
    mnet = init_network(mask_config(2, 2), rng.derive("mask"))
    mnet.set_trainable(False)
    rnet = init_network(restore_config(2, 4, True), rng.derive("restore"))
    out = rnet.convs["out"]
    out.weight.data[...] = rng.derive("out").normal(out.weight.shape) * 0.1
    dp = init_distill([4, 8], [2, 4], rng.derive("dp"), zero_heads=False)
    degraded = rng.derive("img").random((2, 3, 16, 16))
    clean = rng.derive("clean").random((2, 3, 16, 16))
    with no_grad():
        prob, teacher_taps = mask_forward(mnet, degraded)

    def build():
        restored, student_taps = restore_forward(rnet, degraded, prob)
        r, _ = total_distill_loss(student_taps, teacher_taps, dp)
        return T.add(l1_loss(restored, clean), T.scale(r, lambda_distill))

    params = {f"restore.{k}": v for k, v in rnet.tensors().items()}
    params.update(dp.tensors())
    return "stage2_end_to_end", build, params


def gradcheck_suite(seed: int = 0, max_entries: int = 6) -> list:
    rng = Rng(seed)
    results = []
    for name, build, params in _op_cases(rng.derive("ops")):
        results.append((name, gradcheck(build, params, OP_TOLERANCE)))
    name, build, params = _distill_case(rng.derive("distill"))
    results.append((name, gradcheck(build, params, OP_TOLERANCE, max_entries=max_entries * 4)))
    name, build, params = end_to_end_case(seed)
    results.append((name, gradcheck(build, params, END_TO_END_TOLERANCE, max_entries=max_entries)))
    return results


def all_passed(results) -> bool:
    return all(rep.passed for _, rep in results)
