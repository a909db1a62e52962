"""Mask-guided image restoration with attentive feature distillation, in numpy.

Two networks share one encoder layout: a light mask predictor trained with
BCE against thresholded |clean - degraded| maps, and a restoration U-Net whose
decoder blocks are gated by the predicted mask and whose encoder features are
pulled toward the mask predictor's through learned channel and pair weights.
Everything (autodiff, layers, Adam, metrics, file formats) is implemented here
on top of numpy.
"""

from .errors import (CheckpointError, ConfigError, ContractError, FormatError, MgrsError,
                     NonFiniteError, ShapeError)
from .rng import Rng
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"
