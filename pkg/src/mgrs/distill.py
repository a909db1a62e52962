"""Attentive feature distillation from the mask encoder to the restoration encoder.

For every (student level p, teacher level q) pair the teacher tap is resized
bilinearly to the student's resolution and the student tap is mapped to the
teacher's channel count by a learned 1x1 regressor.  Channel weights ``rho``
come from a small per-pair head on the pooled teacher features (softmax over
channels); pair weights ``alpha`` come from one logit per pair, softmaxed over
all m*m pairs.  The per-pair loss is the rho-weighted, spatially averaged
squared difference; the total is the alpha-weighted sum over pairs, averaged
over the batch.

Teacher features never carry gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .layers import ConvParams, conv2d, global_avg_pool, resize
from .rng import Rng
from .tensor import (Tensor, channel_slice, concat, mean, mul, reduce, relu, scale,
                     softmax_channels, sub, sum_)


@dataclass
class MetaHead:
    """Two-layer perceptron on pooled features, as two 1x1 convolutions."""
    fc1: ConvParams
    fc2: ConvParams

    def __call__(self, pooled: Tensor) -> Tensor:
        return conv2d(relu(conv2d(pooled, self.fc1)), self.fc2)

    def tensors(self) -> dict:
        return {"fc1.weight": self.fc1.weight, "fc1.bias": self.fc1.bias,
                "fc2.weight": self.fc2.weight, "fc2.bias": self.fc2.bias}

    @classmethod
    def create(cls, c_in: int, c_out: int, rng: Rng, zero_output: bool = True) -> "MetaHead":
        hidden = max(c_in // 2, 1)
        fc1 = ConvParams.create(c_in, hidden, 1, rng.derive("fc1"), padding=0)
        fc2 = ConvParams.create(hidden, c_out, 1, rng.derive("fc2"), padding=0,
                                init="zeros" if zero_output else "he_normal")
        return cls(fc1, fc2)


@dataclass
class DistillParams:
    levels: int
    regressors: dict = field(default_factory=dict)    # (p, q) -> ConvParams, C_p -> C_q
    rho_heads: dict = field(default_factory=dict)     # (p, q) -> MetaHead, C_q -> C_q
    alpha_heads: dict = field(default_factory=dict)   # (p, q) -> MetaHead, C_q -> 1

    def pairs(self) -> list:
        m = self.levels
        return [(p, q) for p in range(1, m + 1) for q in range(1, m + 1)]

    def tensors(self) -> dict:
        out = {}
        for p, q in self.pairs():
            reg = self.regressors[(p, q)]
            out[f"distill.reg.{p}.{q}.weight"] = reg.weight
            out[f"distill.reg.{p}.{q}.bias"] = reg.bias
            for tag, heads in (("rho", self.rho_heads), ("alpha", self.alpha_heads)):
                for name, t in heads[(p, q)].tensors().items():
                    out[f"distill.{tag}.{p}.{q}.{name}"] = t
        return out

    def load_arrays(self, arrays: dict):
        for name, t in self.tensors().items():
            if name not in arrays:
                raise ContractError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name!r}: expected {t.shape}, got {arr.shape}")
            t.data[...] = arr


def init_distill(student_channels, teacher_channels, rng: Rng,
                 zero_heads: bool = True) -> DistillParams:
    """Regressors are He-normal; with ``zero_heads`` the heads start at uniform weights."""
    if len(student_channels) != len(teacher_channels):
        raise ContractError("student and teacher must expose the same number of levels")
    dp = DistillParams(len(student_channels))
    for p, q in dp.pairs():
        cp, cq = student_channels[p - 1], teacher_channels[q - 1]
        sub_rng = rng.derive("distill", p, q)
        dp.regressors[(p, q)] = ConvParams.create(cp, cq, 1, sub_rng.derive("reg"), padding=0)
        dp.rho_heads[(p, q)] = MetaHead.create(cq, cq, sub_rng.derive("rho"), zero_heads)
        dp.alpha_heads[(p, q)] = MetaHead.create(cq, 1, sub_rng.derive("alpha"), zero_heads)
    return dp


@dataclass
class DistillWeights:
    rho: dict          # (p, q) -> (C_q,) batch-mean channel weights
    alpha: np.ndarray  # (m*m,) batch-mean pair weights, pairs in row-major (p, q) order
    rho_batch: dict = field(default_factory=dict)    # (p, q) -> (N, C_q)
    alpha_batch: np.ndarray | None = None            # (N, m*m)

    def rho_entropy(self) -> dict:
        """Mean entropy (nats) of the per-sample rho vectors, per pair."""
        out = {}
        for key, r in self.rho_batch.items():
            r = np.clip(r, 1e-300, None)
            out[key] = float(np.mean(-(r * np.log(r)).sum(axis=1)))
        return out


def _feature(tap) -> Tensor:
    return tap.feature if hasattr(tap, "feature") else tap


def match_dims(student, teacher, regressor: ConvParams) -> tuple:
    """(student', teacher') both shaped (N, C_q, H_p, W_p); teacher' is off the tape."""
    s = _feature(student)
    t = Tensor(_feature(teacher).data)
    if s.shape[0] != t.shape[0]:
        raise ShapeError(f"taps come from different batches: {s.shape[0]} vs {t.shape[0]}")
    t = resize(t, s.shape[2:], "bilinear")
    return conv2d(s, regressor), t


def rho_weights(teacher, head: MetaHead) -> Tensor:
    """Channel weights (N, C_q, 1, 1): pool -> perceptron -> softmax over channels."""
    t = Tensor(_feature(teacher).data)
    return softmax_channels(head(global_avg_pool(t)))


def alpha_logit(teacher, head: MetaHead) -> Tensor:
    t = Tensor(_feature(teacher).data)
    return head(global_avg_pool(t))


def _rho_tensor(rho, channels: int) -> Tensor:
    if isinstance(rho, Tensor):
        r = rho
    else:
        arr = np.asarray(rho, dtype=np.float64)
        r = Tensor(arr.reshape(1, -1, 1, 1) if arr.ndim == 1 else arr)
    if r.shape[1] != channels or r.shape[2:] != (1, 1):
        raise ContractError(f"rho has shape {r.shape}, expected {channels} channel weights")
    return r


def pair_loss_per_sample(student: Tensor, teacher: Tensor, rho) -> Tensor:
    """(N, 1, 1, 1): sum_c rho_c * mean_{h,w} (student - teacher)_c ** 2."""
    if student.shape != teacher.shape:
        raise ContractError(f"pair_loss shapes differ: {student.shape} vs {teacher.shape}")
    r = _rho_tensor(rho, student.shape[1])
    d = sub(student, teacher)
    msq = mean(mul(d, d), over="spatial")
    return reduce("sum", mul(msq, r), over="channels")


def pair_loss(student: Tensor, teacher: Tensor, rho) -> Tensor:
    """rho-weighted squared error, normalised by N*H*W, as a scalar."""
    return mean(pair_loss_per_sample(student, teacher, rho))


def total_distill_loss(student_taps, teacher_taps, dp: DistillParams) -> tuple:
    """Combined transfer loss R over all m*m pairs and the weights used."""
    m = dp.levels
    if len(student_taps) != m or len(teacher_taps) != m:
        raise ContractError(f"expected {m} student and teacher taps, got "
                            f"{len(student_taps)} and {len(teacher_taps)}")
    losses, logits, rhos = [], [], {}
    for p, q in dp.pairs():
        s, t = match_dims(student_taps[p - 1], teacher_taps[q - 1], dp.regressors[(p, q)])
        rho = rho_weights(teacher_taps[q - 1], dp.rho_heads[(p, q)])
        rhos[(p, q)] = rho
        losses.append(pair_loss_per_sample(s, t, rho))
        logits.append(alpha_logit(teacher_taps[q - 1], dp.alpha_heads[(p, q)]))
    alpha = softmax_channels(concat(logits))
    per_pair = concat(losses)
    n = per_pair.shape[0]
    r = scale(sum_(mul(alpha, per_pair)), 1.0 / n)

    rho_batch = {k: v.data[:, :, 0, 0].copy() for k, v in rhos.items()}
    alpha_batch = alpha.data[:, :, 0, 0].copy()
    weights = DistillWeights(rho={k: v.mean(axis=0) for k, v in rho_batch.items()},
                             alpha=alpha_batch.mean(axis=0),
                             rho_batch=rho_batch, alpha_batch=alpha_batch)
    return r, weights


def alpha_vector(teacher_taps, dp: DistillParams) -> Tensor:
    """Pair weights (N, m*m, 1, 1) alone, for inspection."""
    logits = [alpha_logit(teacher_taps[q - 1], dp.alpha_heads[(p, q)]) for p, q in dp.pairs()]
    return softmax_channels(concat(logits))


def pair_weight(alpha: Tensor, index: int) -> Tensor:
    return channel_slice(alpha, index, index + 1)
