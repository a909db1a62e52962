"""
Two-stage training on a small synthetic rain set
=================================================

Stage 1 fits the mask predictor with BCE against thresholded difference
masks.  Stage 2 freezes it and trains the restoration network with
L1 + lambda * R.  This script uses a reduced setting (48 images, 32 px
patches, 8 epochs) so it finishes in about a minute; the default config
(128 images, 64 px, 30 epochs) is what the acceptance tests use.
"""

import numpy as np

from mgrs.config import TrainConfig
from mgrs.data import make_dataset
from mgrs.evaluation import evaluate_set, psnr
from mgrs.train import train_mask_stage, train_restore_stage

train = make_dataset(7, "train", 48, size=32)
test = make_dataset(7, "test", 8, size=32)
print("degraded test PSNR: %.2f dB" % np.mean([psnr(t.degraded, t.clean) for t in test]))

cfg = TrainConfig(patch_size=32, epochs=8, lr0=3e-4)

###############################################################################
# Stage 1.
mask_ck, mask_log = train_mask_stage(cfg, train, test, save=False)
print(mask_log.to_csv())

###############################################################################
# Stage 2 with and without distillation + gating.
runs = {}
for name, on in (("distill+gates", True), ("plain L1", False)):
    ck, log_ = train_restore_stage(cfg.replace(distill=on, gated_decoder=on), mask_ck,
                                   train, test, save=False)
    runs[name] = ck
    print(name)
    print(log_.to_csv())

###############################################################################
# Per-image report for the full model, using predicted masks.
ck = runs["distill+gates"]
report = evaluate_set(ck.extra["net"], ck.extra["mask_net"], test)
print(report.summary())
