"""Convolutional building blocks on top of :mod:`mgrs.tensor`.

Conventions:

* ``conv2d`` is a cross-correlation (no kernel flip) with zero padding.
* ``pixel_unshuffle`` puts the r*r sub-pixel offsets of channel ``c`` at
  channels ``c*r*r + dy*r + dx`` (row-major offsets); ``pixel_shuffle`` is
  its exact inverse.
* bilinear ``resize`` uses align-corners-true sampling: output corners map
  onto input corners, ``src = dst * (in - 1) / (out - 1)``.
* nearest ``resize`` takes ``src = floor(dst * in / out)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError
from .tensor import (Tensor, add, create_tensor, mean, mul, record, relu, sigmoid,
                     softmax_channels)


@dataclass
class ConvParams:
    weight: Tensor            # (C_out, C_in, k, k)
    bias: Tensor              # (1, C_out, 1, 1)
    stride: int = 1
    padding: int = 0

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(cls, c_in: int, c_out: int, k: int, rng=None, stride: int = 1,
               padding: int | None = None, init: str = "he_normal") -> "ConvParams":
        """He-normal (or ``zeros``) weights, zero bias; padding defaults to k // 2."""
        if padding is None:
            padding = k // 2
        shape = (c_out, c_in, k, k)
        if init == "zeros":
            w = create_tensor(shape, "zeros", requires_grad=True)
        else:
            w = create_tensor(shape, "he_normal", rng=rng, fan_in=c_in * k * k, requires_grad=True)
        b = create_tensor((1, c_out, 1, 1), "zeros", requires_grad=True)
        return cls(w, b, stride, padding)

    def tensors(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = p.weight.shape
    if k != k2:
        raise ShapeError(f"kernels must be square, got {k}x{k2}")
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    s, pad = int(p.stride), int(p.padding)
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: padded input {h + 2 * pad}x{w + 2 * pad} smaller than kernel {k}")
    ho = (h + 2 * pad - k) // s + 1
    wo = (w + 2 * pad - k) // s + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    # cols: (N*Ho*Wo, C*k*k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    wmat = p.weight.data.reshape(c_out, c * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2) + p.bias.data
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        gx = gw = gb = None
        if p.weight.requires_grad:
            gw = (gmat.T @ cols).reshape(p.weight.shape)
        if p.bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1)
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c, k, k)
            gxp = np.zeros(xp.shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    return record(out, (x, p.weight, p.bias), bw, "conv2d")


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: {h}x{w} not divisible by {r}")
    out = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    out = out.reshape(n, c * r * r, h // r, w // r)

    def bw(g):
        gx = g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3)
        return (gx.reshape(n, c, h, w),)

    return record(out, (x,), bw, "pixel_unshuffle")


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    n, cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {cr} channels not divisible by {r * r}")
    c = cr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def bw(g):
        gx = g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return (gx.reshape(n, cr, h, w),)

    return record(out, (x,), bw, "pixel_shuffle")


def interpolation_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """(n_out, n_in) matrix mapping a 1-D signal to its resampled version."""
    if n_out < 1 or n_in < 1:
        raise ShapeError("resize sizes must be >= 1")
    m = np.zeros((n_out, n_in))
    dst = np.arange(n_out)
    if mode == "nearest":
        src = np.minimum((dst * n_in) // n_out, n_in - 1)
        m[dst, src] = 1.0
    elif mode == "bilinear":
        if n_out == 1 or n_in == 1:
            m[:, 0] = 1.0
        else:
            pos = dst * (n_in - 1) / (n_out - 1)
            lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
            frac = pos - lo
            m[dst, lo] += 1.0 - frac
            m[dst, lo + 1] += frac
    else:
        raise ContractError(f"unknown resize mode {mode!r}")
    return m


def resize(x: Tensor, size: tuple, mode: str = "bilinear") -> Tensor:
    n, c, h, w = x.shape
    ho, wo = int(size[0]), int(size[1])
    if (ho, wo) == (h, w):
        return x
    ry = interpolation_matrix(h, ho, mode)
    rx = interpolation_matrix(w, wo, mode)
    out = np.einsum("ih,nchw,jw->ncij", ry, x.data, rx, optimize=True)
    return record(out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", ry, g, rx, optimize=True),),
                  f"resize_{mode}")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling (each pixel becomes a 2x2 block)."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return record(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample2x")


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_channels":
        return softmax_channels(x)
    raise ContractError(f"unknown activation {kind!r}")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.shape[2] * x.shape[3] < 1:
        raise ShapeError("global_avg_pool needs a non-empty spatial extent")
    return mean(x, over="spatial")


@dataclass
class GateBlockParams:
    conv: ConvParams

    @classmethod
    def create(cls, channels: int, rng) -> "GateBlockParams":
        return cls(ConvParams.create(channels, channels, 3, rng))


def prepare_mask(mask, size: tuple) -> Tensor:
    """Validate a [0, 1] mask and resize it bilinearly to ``size``; never on the tape."""
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if data.ndim != 4 or data.shape[1] != 1:
        raise ShapeError(f"mask must be (N, 1, h, w), got {data.shape}")
    if data.min() < -1e-9 or data.max() > 1 + 1e-9:
        raise ContractError(f"mask values outside [0, 1]: [{data.min()}, {data.max()}]")
    m = Tensor(np.clip(data, 0.0, 1.0))
    return resize(m, size, "bilinear")


def gated_block(f: Tensor, mask, p: GateBlockParams) -> Tensor:
    """Residual mask-gated convolution: ``f + conv(f) * M``.

    ``M`` is resized to the feature resolution and broadcast over channels.
    It is treated as a constant input: no gradient reaches it.
    """
    conv = p.conv
    if conv.in_channels != conv.out_channels or conv.in_channels != f.shape[1]:
        raise ShapeError("gated_block needs C_in == C_out == feature channels")
    m = prepare_mask(mask, f.shape[2:])
    if m.shape[0] != f.shape[0]:
        raise ShapeError(f"mask batch {m.shape[0]} != feature batch {f.shape[0]}")
    return add(f, mul(conv2d(f, conv), m))
