"""The mask predictor and the mask-guided restoration network.

Both are encoder-decoders with ``m`` levels and widths ``c_k = base * 2**(k-1)``
(bottleneck ``c_{m+1} = base * 2**m``).  Per encoder level ``k``::

    conv3x3(c_{k-1} -> c_k) + relu
    conv3x3(c_k -> c_k) + relu          <- feature tap (level k)
    conv3x3 stride 2 (c_k -> c_{k+1}) + relu

Restoration network (input 3 -> pixel_unshuffle -> 12 channels)::

    bottleneck: 2 x conv3x3(c_{m+1}) + relu
    decoder level k = m..1:
        upsample2x, conv3x3(c_{k+1} -> c_k) + relu
        concat(tap k), conv3x3(2 c_k -> c_k) + relu
        gated_block(c_k)                  (when gated_decoder)
    out conv3x3(c_1 -> 12), zero initialised, pixel_shuffle -> 3, + input

Mask network (full resolution, lighter)::

    bottleneck: 1 x conv3x3(c_{m+1}) + relu
    decoder level k: upsample2x, concat(tap k), conv3x3(c_{k+1} + c_k -> c_k) + relu
    out conv3x3(c_1 -> 1), sigmoid
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .layers import (ConvParams, GateBlockParams, conv2d, gated_block, pixel_shuffle,
                     pixel_unshuffle, upsample2x)
from .rng import Rng
from .tensor import Tensor, add, clamp, concat, relu, sigmoid


@dataclass(frozen=True)
class NetConfig:
    kind: str                  # "mask" or "restore"
    levels: int = 3
    base_channels: int = 16
    gated_decoder: bool = True

    def __post_init__(self):
        if self.kind not in ("mask", "restore"):
            raise ContractError(f"unknown network kind {self.kind!r}")
        if self.levels < 2:
            raise ContractError("levels must be >= 2")
        if self.base_channels < 1:
            raise ContractError("base_channels must be >= 1")
        if self.kind == "mask" and self.gated_decoder:
            raise ContractError("the mask network has no gated decoder")

    @property
    def in_channels(self) -> int:
        return 12 if self.kind == "restore" else 3

    @property
    def out_channels(self) -> int:
        return 12 if self.kind == "restore" else 1

    def width(self, k: int) -> int:
        return self.base_channels * 2 ** (k - 1)

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels + (1 if self.kind == "restore" else 0))


def mask_config(levels: int = 3, base_channels: int = 8) -> NetConfig:
    return NetConfig("mask", levels, base_channels, gated_decoder=False)


def restore_config(levels: int = 3, base_channels: int = 16, gated_decoder: bool = True) -> NetConfig:
    return NetConfig("restore", levels, base_channels, gated_decoder)


@dataclass
class FeatureTap:
    level: int
    feature: Tensor


@dataclass
class NetworkParams:
    config: NetConfig
    convs: dict = field(default_factory=dict)      # name -> ConvParams, in build order

    def tensors(self) -> dict:
        out = {}
        for name, conv in self.convs.items():
            out[f"{name}.weight"] = conv.weight
            out[f"{name}.bias"] = conv.bias
        return out

    def load_arrays(self, arrays: dict):
        for name, t in self.tensors().items():
            if name not in arrays:
                raise ContractError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: expected {t.shape}, got {arr.shape}")
            t.data[...] = arr

    def set_trainable(self, flag: bool):
        for t in self.tensors().values():
            t.requires_grad = flag
            t.grad = None

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def _layer_plan(cfg: NetConfig) -> list:
    """(name, c_in, c_out, stride, init) for every conv, in a stable order."""
    m = cfg.levels
    plan = []
    c_prev = cfg.in_channels
    for k in range(1, m + 1):
        c = cfg.width(k)
        plan.append((f"enc{k}.conv1", c_prev, c, 1, "he"))
        plan.append((f"enc{k}.conv2", c, c, 1, "he"))
        plan.append((f"enc{k}.down", c, cfg.width(k + 1), 2, "he"))
        c_prev = cfg.width(k + 1)
    cb = cfg.width(m + 1)
    plan.append(("mid.conv1", cb, cb, 1, "he"))
    if cfg.kind == "restore":
        plan.append(("mid.conv2", cb, cb, 1, "he"))
    for k in range(m, 0, -1):
        c = cfg.width(k)
        if cfg.kind == "restore":
            plan.append((f"dec{k}.up", cfg.width(k + 1), c, 1, "he"))
            plan.append((f"dec{k}.fuse", 2 * c, c, 1, "he"))
            if cfg.gated_decoder:
                plan.append((f"dec{k}.gate", c, c, 1, "he"))
        else:
            plan.append((f"dec{k}.fuse", cfg.width(k + 1) + c, c, 1, "he"))
    plan.append(("out", cfg.width(1), cfg.out_channels, 1,
                 "zeros" if cfg.kind == "restore" else "he"))
    return plan


def param_count_formula(cfg: NetConfig) -> int:
    """Closed-form parameter count (3x3 kernels, one bias per output channel).

    With ``b = base``, ``m = levels``, ``c_k = b 2^(k-1)``, ``i`` input and
    ``o`` output channels, and ``conv(a, c) = 9 a c + c``:

    encoder  conv(i, c_1) - conv(c_1, c_1) + sum_k 2 conv(c_k, c_k) + conv(c_k, c_{k+1})
    restore  2 conv(c_{m+1}, c_{m+1}) + sum_k [conv(c_{k+1}, c_k) + conv(2 c_k, c_k)
             + g conv(c_k, c_k)] + conv(c_1, o)
    mask     conv(c_{m+1}, c_{m+1}) + sum_k conv(c_{k+1} + c_k, c_k) + conv(c_1, o)
    """
    b, m = cfg.base_channels, cfg.levels
    c = [cfg.in_channels] + [b * 2 ** (k - 1) for k in range(1, m + 2)]

    def conv(a, out):
        return 9 * a * out + out

    total = conv(c[0], c[1]) - conv(c[1], c[1])
    total += sum(2 * conv(c[k], c[k]) + conv(c[k], c[k + 1]) for k in range(1, m + 1))
    if cfg.kind == "restore":
        g = 1 if cfg.gated_decoder else 0
        total += 2 * conv(c[m + 1], c[m + 1])
        total += sum(conv(c[k + 1], c[k]) + conv(2 * c[k], c[k]) + g * conv(c[k], c[k])
                     for k in range(1, m + 1))
    else:
        total += conv(c[m + 1], c[m + 1])
        total += sum(conv(c[k + 1] + c[k], c[k]) for k in range(1, m + 1))
    return total + conv(c[1], cfg.out_channels)


def init_network(cfg: NetConfig, rng: Rng) -> NetworkParams:
    """He-normal weights and zero biases; each conv draws from its own sub-stream."""
    params = NetworkParams(cfg)
    for name, c_in, c_out, stride, init in _layer_plan(cfg):
        sub = rng.derive("conv", cfg.kind, name)
        params.convs[name] = ConvParams.create(c_in, c_out, 3, sub, stride=stride, padding=1,
                                               init="zeros" if init == "zeros" else "he_normal")
    return params


def _as_batch(image) -> Tensor:
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr)


def _check_divisible(x: Tensor, d: int):
    h, w = x.shape[2:]
    if h % d or w % d:
        raise ShapeError(f"input {h}x{w} must be divisible by {d} (pad before calling)")


def _encode(params: NetworkParams, x: Tensor) -> tuple:
    cv = params.convs
    taps = []
    for k in range(1, params.config.levels + 1):
        x = relu(conv2d(x, cv[f"enc{k}.conv1"]))
        x = relu(conv2d(x, cv[f"enc{k}.conv2"]))
        taps.append(FeatureTap(k, x))
        x = relu(conv2d(x, cv[f"enc{k}.down"]))
    return x, taps


def mask_forward(params: NetworkParams, image) -> tuple:
    """Predicted degradation probability (N, 1, H, W) and the m encoder taps."""
    cfg = params.config
    if cfg.kind != "mask":
        raise ContractError("mask_forward needs mask-network parameters")
    x = _as_batch(image)
    _check_divisible(x, cfg.divisor)
    cv = params.convs
    x, taps = _encode(params, x)
    x = relu(conv2d(x, cv["mid.conv1"]))
    for k in range(cfg.levels, 0, -1):
        x = concat([upsample2x(x), taps[k - 1].feature])
        x = relu(conv2d(x, cv[f"dec{k}.fuse"]))
    return sigmoid(conv2d(x, cv["out"])), taps


def restore_forward(params: NetworkParams, image, mask, gated: bool | None = None,
                    clamp_output: bool = False) -> tuple:
    """Restored image (N, 3, H, W) and the m encoder taps.

    ``mask`` is the (N, 1, H, W) degradation probability; it only enters the
    gated blocks and never receives gradient.  ``gated=False`` skips the gated
    blocks even when their parameters exist.
    """
    cfg = params.config
    if cfg.kind != "restore":
        raise ContractError("restore_forward needs restoration-network parameters")
    use_gates = cfg.gated_decoder if gated is None else (gated and cfg.gated_decoder)
    inp = _as_batch(image)
    _check_divisible(inp, cfg.divisor)
    cv = params.convs
    x, taps = _encode(params, pixel_unshuffle(inp, 2))
    x = relu(conv2d(x, cv["mid.conv1"]))
    x = relu(conv2d(x, cv["mid.conv2"]))
    for k in range(cfg.levels, 0, -1):
        x = relu(conv2d(upsample2x(x), cv[f"dec{k}.up"]))
        x = relu(conv2d(concat([x, taps[k - 1].feature]), cv[f"dec{k}.fuse"]))
        if use_gates:
            x = gated_block(x, mask, GateBlockParams(cv[f"dec{k}.gate"]))
    out = add(pixel_shuffle(conv2d(x, cv["out"]), 2), inp)
    if clamp_output:
        out = clamp(out, 0.0, 1.0)
    return out, taps
