"""
Synthetic rain, regional blur and ground-truth masks
=====================================================

Clean scenes are procedural (gradients, rectangles, discs, light noise).
Rain screen-blends anti-aliased white streaks; regional blur applies a
linear motion kernel inside a rectangle with a soft 4-px border.  The
ground-truth mask marks pixels whose mean RGB change exceeds tau.
"""

import tempfile
from pathlib import Path

import numpy as np

from mgrs.data import make_sample, quantize
from mgrs.evaluation import psnr
from mgrs.imageio import write_image, write_mask
from mgrs.masking import (BlurParams, RainParams, gen_clean_image, make_gt_mask, synth_rain,
                          synth_regional_blur)
from mgrs.rng import Rng

clean = gen_clean_image(Rng(3), 64, 64)
print("clean image: range [%.3f, %.3f], std %.3f" % (clean.min(), clean.max(), clean.std()))

###############################################################################
# Rain.  The generator returns its own rasterised streak support; thresholding
# the difference image recovers it wherever the change is above tau.
rainy, support = synth_rain(clean, RainParams(streak_count=24, seed=11))
gt = make_gt_mask(clean, rainy, tau=0.05)
print("rain: streak support %.1f%%, thresholded mask %.1f%%, PSNR %.2f dB"
      % (100 * support.mean(), 100 * gt.mean(), psnr(rainy, clean)))
print("  thresholded mask inside support:", bool(np.all(gt <= support)))

###############################################################################
# A larger tau keeps a subset of the pixels.
for tau in (0.02, 0.05, 0.1, 0.2):
    print("  tau %.2f -> %5d mask pixels" % (tau, make_gt_mask(clean, rainy, tau).sum()))

###############################################################################
# Regional motion blur: only the rectangle changes.
blurred, region = synth_regional_blur(clean, BlurParams((10, 8, 50, 40), kernel_length=9,
                                                        kernel_angle=30.0))
outside = region == 0
print("blur: region %.1f%% of image, max change outside region %.1e, PSNR %.2f dB"
      % (100 * region.mean(), np.abs(blurred - clean)[:, outside].max(), psnr(blurred, clean)))

###############################################################################
# Dataset samples are already quantised to 8 bits, so writing and reading
# the PPM files changes nothing.
sample = make_sample(7, "train", 0)
assert np.array_equal(quantize(sample.degraded), sample.degraded)
out = Path(tempfile.mkdtemp())
write_image(out / "degraded.ppm", sample.degraded)
write_image(out / "clean.ppm", sample.clean)
write_mask(out / "mask.ppm", sample.mask)
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)
