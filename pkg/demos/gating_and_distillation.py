"""
Mask-gated decoder blocks and attentive feature distillation
=============================================================

A gated block adds ``conv(f) * M`` to its input, so with an all-zero mask
it does nothing at all.  The distillation loss compares every restoration
encoder level with every mask encoder level, weighting channels (rho) and
level pairs (alpha) with small heads driven by the mask features.
"""

import numpy as np

from mgrs import layers as L
from mgrs.distill import init_distill, total_distill_loss
from mgrs.networks import (init_network, mask_config, mask_forward, param_count_formula,
                           restore_config, restore_forward)
from mgrs.rng import Rng
from mgrs.tensor import Tensor, backward

rng = Rng(1)

###############################################################################
# Gated block on a random feature map.
f = Tensor(rng.derive("f").normal((1, 4, 8, 8)))
gate = L.GateBlockParams.create(4, rng.derive("gate"))
zero = L.gated_block(f, np.zeros((1, 1, 8, 8)), gate)
half = L.gated_block(f, np.full((1, 1, 8, 8), 0.5), gate)
print("M = 0 leaves features untouched:", np.array_equal(zero.data, f.data))
print("M = 0.5 change:", np.abs(half.data - f.data).mean())

###############################################################################
# The two networks at their default sizes.
for cfg in (mask_config(), restore_config()):
    print(f"{cfg.kind:8s} net: {param_count_formula(cfg):7d} parameters")

mask_net = init_network(mask_config(), rng.derive("mask"))
restore_net = init_network(restore_config(), rng.derive("restore"))
image = rng.derive("img").random((2, 3, 32, 32))
prob, teacher_taps = mask_forward(mask_net, image)
restored, student_taps = restore_forward(restore_net, image, prob)
print("untrained restoration net returns its input:", np.array_equal(restored.data, image))
print("teacher taps:", [t.feature.shape for t in teacher_taps])
print("student taps:", [t.feature.shape for t in student_taps])

###############################################################################
# Distillation over all 3 x 3 level pairs.  Zero-initialised heads start
# with uniform weights: rho = 1/C, alpha = 1/9.
dp = init_distill([16, 32, 64], [8, 16, 32], rng.derive("distill"))
r, weights = total_distill_loss(student_taps, teacher_taps, dp)
print("R =", r.item())
print("alpha:", np.round(weights.alpha, 4))
print("rho entropy per pair (nats):", {k: round(v, 3) for k, v in weights.rho_entropy().items()})

###############################################################################
# Gradients flow into the student and the heads but never into the teacher.
backward(r)
print("teacher weight has grad:", mask_net.convs["enc1.conv1"].weight.grad is not None)
print("student weight has grad:", restore_net.convs["enc1.conv1"].weight.grad is not None)
