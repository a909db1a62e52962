"""
Reverse-mode autodiff and finite-difference checks
===================================================

Every differentiable op records its output on a tape together with a
backward closure.  ``backward(loss)`` walks the tape in reverse.  Here we
build a tiny conv + sigmoid model by hand, look at its gradients and compare
them against central differences.
"""

import numpy as np

from mgrs import tensor as T
from mgrs.gradcheck import gradcheck
from mgrs.layers import ConvParams, conv2d
from mgrs.rng import Rng
from mgrs.tensor import Tensor, Tape, backward

rng = Rng(0)

###############################################################################
# A 3x3 convolution from 2 to 4 channels on a batch of two 6x6 inputs.
x = Tensor(rng.derive("x").normal((2, 2, 6, 6)), requires_grad=True)
conv = ConvParams.create(2, 4, 3, rng.derive("conv"))
target = rng.derive("y").random((2, 4, 6, 6))


def loss_fn():
    pred = T.sigmoid(conv2d(x, conv))
    diff = T.sub(pred, Tensor(target))
    return T.mean(T.mul(diff, diff))


loss = loss_fn()
print("loss:", loss.item())
print("ops on the tape:", [node.op for node in Tape.from_output(loss).nodes])

###############################################################################
# Gradients land in ``.grad`` and accumulate until cleared.
backward(loss)
print("dL/dW shape:", conv.weight.grad.shape, " |dL/dW|:", np.abs(conv.weight.grad).sum())

###############################################################################
# Central differences with h = 1e-5 agree to ~1e-9 relative error.
report = gradcheck(loss_fn, {"x": x, "weight": conv.weight, "bias": conv.bias})
print(report)

###############################################################################
# The same machinery catches a broken backward rule immediately.
from mgrs.tensor import record


def sloppy_square(a):
    return record(a.data ** 2, (a,), lambda g: (g * a.data,), "sloppy_square")


print(gradcheck(lambda: T.sum_(sloppy_square(x)), [x]))
