"""Two-stage training: mask predictor (BCE), then restoration (L1 + lambda * R).

Randomness is fully determined by ``cfg.seed``:

* network init      ``Rng(seed).derive("init", <net>)``
* epoch order       ``Rng(seed).derive("shuffle", epoch)``
* crops and flips   ``Rng(seed).derive("batch", epoch, batch_index)``

so a run resumed from the checkpoint of epoch ``k`` continues exactly as the
uninterrupted run.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import load_dataset
from .distill import DistillParams, init_distill, total_distill_loss
from .errors import CheckpointError, ContractError, NonFiniteError
from .evaluation import mask_iou, psnr, ssim
from .losses import bce_loss, l1_loss
from .networks import (NetworkParams, init_network, mask_config, mask_forward, restore_config,
                       restore_forward)
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import Tensor, add, backward, no_grad, scale

log = logging.getLogger(__name__)

MASK_PREFIX = "mask."
RESTORE_PREFIX = "restore."


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 halved every ``lr_half_every`` epochs."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_half_every)


@dataclass
class Batch:
    degraded: np.ndarray    # (B, 3, P, P)
    clean: np.ndarray       # (B, 3, P, P)
    mask: np.ndarray        # (B, 1, P, P)
    crops: list             # (y, x, flip_h, flip_v) per sample


def flip(arr: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    if horizontal:
        arr = arr[..., ::-1]
    if vertical:
        arr = arr[..., ::-1, :]
    return arr


def sample_batch(dataset, indices, cfg: TrainConfig, rng: Rng) -> Batch:
    """Random crops and flips, applied identically to the three images of a triple."""
    p = cfg.patch_size
    deg, cln, msk, crops = [], [], [], []
    for i in indices:
        t = dataset[i]
        _, h, w = t.clean.shape
        if h < p or w < p:
            raise ContractError(f"{t.name}: {h}x{w} smaller than patch size {p}")
        y = rng.integers(0, h - p + 1)
        x = rng.integers(0, w - p + 1)
        fh = rng.random() < 0.5
        fv = rng.random() < 0.5
        crops.append((y, x, fh, fv))
        window = (slice(y, y + p), slice(x, x + p))
        deg.append(flip(t.degraded[(slice(None),) + window], fh, fv))
        cln.append(flip(t.clean[(slice(None),) + window], fh, fv))
        msk.append(flip(t.mask[window], fh, fv)[None])
    return Batch(np.ascontiguousarray(deg), np.ascontiguousarray(cln),
                 np.ascontiguousarray(msk), crops)


def epoch_batches(n: int, cfg: TrainConfig, epoch: int) -> list:
    order = Rng(cfg.seed).derive("shuffle", epoch).permutation(n)
    bs = cfg.batch_size
    return [order[i:i + bs] for i in range(0, n, bs)]


@dataclass
class EpochRecord:
    epoch: int
    loss: float              # BCE (stage 1) or L1 (stage 2), mean over batches
    loss_r: float            # distillation loss, mean over batches (nan in stage 1)
    lr: float
    psnr: float
    ssim: float
    iou: float
    wall_time: float = 0.0   # seconds; informational, excluded from CSV and equality

    def key(self) -> tuple:
        # repr strings so that nan fields compare equal and floats compare bit-exactly
        return (self.epoch,) + tuple(repr(float(v)) for v in
                                     (self.loss, self.loss_r, self.lr, self.psnr, self.ssim, self.iou))


@dataclass
class TrainLog:
    stage: str
    records: list = field(default_factory=list)
    distill_rows: list = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ContractError("epoch indices must increase")
        self.records.append(rec)

    def __eq__(self, other):
        return (isinstance(other, TrainLog) and self.stage == other.stage
                and [r.key() for r in self.records] == [r.key() for r in other.records]
                and _row_keys(self.distill_rows) == _row_keys(other.distill_rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.stage == "mask":
            w.writerow(("epoch", "loss_bce", "lr", "iou"))
            for r in self.records:
                w.writerow((r.epoch, _f(r.loss), _f(r.lr), _f(r.iou)))
        else:
            w.writerow(("epoch", "loss_l1", "loss_R", "lr", "psnr", "ssim", "iou"))
            for r in self.records:
                w.writerow((r.epoch, _f(r.loss), _f(r.loss_r), _f(r.lr), _f(r.psnr),
                            _f(r.ssim), _f(r.iou)))
        return buf.getvalue()

    def distill_csv(self, levels: int) -> str:
        pairs = [(p, q) for p in range(1, levels + 1) for q in range(1, levels + 1)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch"] + [f"alpha_{p}_{q}" for p, q in pairs]
                   + [f"rho_entropy_{p}_{q}" for p, q in pairs])
        for row in self.distill_rows:
            w.writerow([row[0]] + [_f(v) for v in row[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, stage: str, text: str, distill_text: str = "") -> "TrainLog":
        """Inverse of ``to_csv`` / ``distill_csv``; wall times are not stored and come back as 0."""
        nan = float("nan")
        log_ = cls(stage)
        for row in list(csv.reader(io.StringIO(text)))[1:]:
            if stage == "mask":
                e, loss, lr, iou = row
                log_.append(EpochRecord(int(e), float(loss), nan, float(lr), nan, nan, float(iou)))
            else:
                e, loss, r, lr, ps, ss, iou = row
                log_.append(EpochRecord(int(e), *(float(v) for v in (loss, r, lr, ps, ss, iou))))
        for row in list(csv.reader(io.StringIO(distill_text)))[1:]:
            log_.distill_rows.append([int(row[0])] + [float(v) for v in row[1:]])
        return log_


def _f(v) -> str:
    return repr(float(v))


def _row_keys(rows) -> list:
    return [[_f(v) for v in row] for row in rows]


def _prefixed(tensors: dict, prefix: str) -> dict:
    return {prefix + k: v for k, v in tensors.items()}


def _arrays(tensors: dict) -> dict:
    return {k: v.data.copy() for k, v in tensors.items()}


def _strip(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _snapshot(params: dict, epoch: int, cfg: TrainConfig, adam: AdamState, log_) -> Checkpoint:
    state = AdamState(adam.beta1, adam.beta2, adam.eps, adam.t,
                      {k: v.copy() for k, v in adam.m.items()},
                      {k: v.copy() for k, v in adam.v.items()})
    ck = Checkpoint(_arrays(params), epoch, cfg.hash(), cfg.to_text(include_paths=False), state)
    ck.extra["log"] = log_
    return ck


def _adam(cfg: TrainConfig, params: dict) -> AdamState:
    return AdamState.for_params(params, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)


def _restore_adam(ck: Checkpoint, params: dict) -> AdamState:
    if ck.adam is None or set(ck.adam.m) != set(params):
        raise CheckpointError("checkpoint optimizer state does not match the parameters")
    state = ck.adam
    state.m = {k: state.m[k].copy() for k in params}
    state.v = {k: state.v[k].copy() for k in params}
    return state


def _load_sets(cfg: TrainConfig, train_set, test_set) -> tuple:
    if train_set is None:
        train_set = load_dataset(cfg.train_dir, min_size=cfg.patch_size)
    if test_set is None:
        test_set = load_dataset(cfg.test_dir)
    if not train_set:
        raise ContractError("empty training set")
    for t in train_set:
        if min(t.clean.shape[1:]) < cfg.patch_size:
            raise ContractError(f"{t.name}: smaller than patch size {cfg.patch_size}")
    return list(train_set), list(test_set)


def _check_finite(value: float, epoch: int, batch: int, what: str):
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite {what} loss at epoch {epoch}, batch {batch}: {value}")


def _save(cfg: TrainConfig, name: str, ck: Checkpoint, log_: TrainLog, epoch: int):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{name}.ckpt", ck)
    if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
        save_checkpoint(out / f"{name}_epoch{epoch:03d}.ckpt", ck)
    (out / f"{name}_log.csv").write_text(log_.to_csv())
    if log_.distill_rows:
        (out / f"{name}_distill.csv").write_text(log_.distill_csv(cfg.levels))


def build_mask_net(cfg: TrainConfig, rng: Rng | None = None) -> NetworkParams:
    rng = rng or Rng(cfg.seed)
    return init_network(mask_config(cfg.levels, cfg.mask_base_channels), rng.derive("init", "mask"))


def build_restore_net(cfg: TrainConfig) -> NetworkParams:
    rcfg = restore_config(cfg.levels, cfg.restore_base_channels, cfg.gated_decoder)
    return init_network(rcfg, Rng(cfg.seed).derive("init", "restore"))


def build_distill(cfg: TrainConfig) -> DistillParams:
    student = [cfg.restore_base_channels * 2 ** k for k in range(cfg.levels)]
    teacher = [cfg.mask_base_channels * 2 ** k for k in range(cfg.levels)]
    return init_distill(student, teacher, Rng(cfg.seed).derive("init", "distill"))


def mask_net_from_checkpoint(ck: Checkpoint) -> NetworkParams:
    from .config import parse_config
    cfg = parse_config(ck.config_text)
    net = build_mask_net(cfg)
    net.load_arrays(_strip(ck.params, MASK_PREFIX))
    return net


def restore_nets_from_checkpoint(ck: Checkpoint) -> tuple:
    """(restoration params, distill params or None) from a stage-2 checkpoint."""
    from .config import parse_config
    cfg = parse_config(ck.config_text)
    net = build_restore_net(cfg)
    net.load_arrays(_strip(ck.params, RESTORE_PREFIX))
    dp = None
    if any(k.startswith("distill.") for k in ck.params):
        dp = build_distill(cfg)
        dp.load_arrays(ck.params)
    return net, dp


def evaluate_mask_net(net: NetworkParams, test_set) -> float:
    if not test_set:
        return float("nan")
    ious = []
    with no_grad():
        for t in test_set:
            prob, _ = mask_forward(net, t.degraded[None])
            ious.append(mask_iou(prob.data[0, 0], t.mask))
    return float(np.mean(ious))


def train_mask_stage(cfg: TrainConfig, train_set=None, test_set=None,
                     resume: Checkpoint | None = None, save: bool = True) -> tuple:
    """Stage 1: Adam on BCE(mask_forward(degraded), gt_mask). Returns (Checkpoint, TrainLog)."""
    cfg.validate()
    train_set, test_set = _load_sets(cfg, train_set, test_set)
    net = build_mask_net(cfg)
    params = _prefixed(net.tensors(), MASK_PREFIX)
    log_ = TrainLog("mask")
    start = 0
    if resume is not None:
        net.load_arrays(_strip(resume.params, MASK_PREFIX))
        adam = _restore_adam(resume, params)
        log_.records = list(resume.extra.get("log", TrainLog("mask")).records)
        start = resume.epoch + 1
    else:
        adam = _adam(cfg, params)

    ck = resume
    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        losses = []
        for b, idx in enumerate(epoch_batches(len(train_set), cfg, epoch)):
            batch = sample_batch(train_set, idx, cfg, Rng(cfg.seed).derive("batch", epoch, b))
            for t in params.values():
                t.grad = None
            try:
                prob, _ = mask_forward(net, batch.degraded)
                loss = bce_loss(prob, batch.mask)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from None
            _check_finite(loss.item(), epoch, b, "BCE")
            backward(loss)
            adam_step(params, None, adam, lr)
            losses.append(loss.item())
        rec = EpochRecord(epoch, float(np.mean(losses)), float("nan"), lr, float("nan"),
                          float("nan"), evaluate_mask_net(net, test_set),
                          time.perf_counter() - t0)
        log_.append(rec)
        log.info("mask epoch %d  bce %.5f  iou %.4f  (%.1fs)", epoch, rec.loss, rec.iou, rec.wall_time)
        ck = _snapshot(params, epoch, cfg, adam, log_)
        if save:
            _save(cfg, "mask", ck, log_, epoch)
    if ck is None:
        ck = _snapshot(params, 0, cfg, adam, log_)
    ck.extra["net"] = net
    return ck, log_


def evaluate_restore_net(net: NetworkParams, mask_net: NetworkParams, test_set,
                         gated: bool | None = None) -> tuple:
    """Mean (PSNR, SSIM) of clamped restorations against clean, on luminance."""
    if not test_set:
        return float("nan"), float("nan")
    ps, ss = [], []
    with no_grad():
        for t in test_set:
            prob, _ = mask_forward(mask_net, t.degraded[None])
            out, _ = restore_forward(net, t.degraded[None], prob, gated=gated, clamp_output=True)
            ps.append(psnr(out.data[0], t.clean))
            ss.append(ssim(out.data[0], t.clean))
    return float(np.mean(ps)), float(np.mean(ss))


def train_restore_stage(cfg: TrainConfig, mask_ckpt, train_set=None, test_set=None,
                        resume: Checkpoint | None = None, save: bool = True) -> tuple:
    """Stage 2: Adam on L1(restored, clean) + lambda * R with the mask net frozen.

    ``mask_ckpt`` is a stage-1 :class:`Checkpoint` or a path to one.
    """
    cfg.validate()
    if not isinstance(mask_ckpt, Checkpoint):
        mask_ckpt = load_checkpoint(mask_ckpt)
    mask_net = mask_net_from_checkpoint(mask_ckpt)
    mask_net.set_trainable(False)
    mcfg = mask_net.config
    if mcfg.levels != cfg.levels or mcfg.base_channels != cfg.mask_base_channels:
        raise CheckpointError("mask checkpoint architecture does not match the config")
    train_set, test_set = _load_sets(cfg, train_set, test_set)

    net = build_restore_net(cfg)
    dp = build_distill(cfg) if cfg.distill else None
    params = _prefixed(net.tensors(), RESTORE_PREFIX)
    if dp is not None:
        params.update(dp.tensors())
    log_ = TrainLog("restore")
    start = 0
    if resume is not None:
        net.load_arrays(_strip(resume.params, RESTORE_PREFIX))
        if dp is not None:
            dp.load_arrays(resume.params)
        adam = _restore_adam(resume, params)
        prev = resume.extra.get("log", TrainLog("restore"))
        log_.records, log_.distill_rows = list(prev.records), list(prev.distill_rows)
        start = resume.epoch + 1
    else:
        adam = _adam(cfg, params)

    iou = evaluate_mask_net(mask_net, test_set)
    ck = resume
    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        l1s, rs, alphas, entropies = [], [], [], []
        for b, idx in enumerate(epoch_batches(len(train_set), cfg, epoch)):
            batch = sample_batch(train_set, idx, cfg, Rng(cfg.seed).derive("batch", epoch, b))
            for t in params.values():
                t.grad = None
            try:
                with no_grad():
                    prob, teacher_taps = mask_forward(mask_net, batch.degraded)
                restored, student_taps = restore_forward(net, batch.degraded, prob)
                l1 = l1_loss(restored, batch.clean)
                loss = l1
                if dp is not None:
                    r, weights = total_distill_loss(student_taps, teacher_taps, dp)
                    loss = add(l1, scale(r, cfg.lambda_distill))
                    rs.append(r.item())
                    alphas.append(weights.alpha)
                    ent = weights.rho_entropy()
                    entropies.append([ent[k] for k in dp.pairs()])
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from None
            _check_finite(loss.item(), epoch, b, "restoration")
            backward(loss)
            adam_step(params, None, adam, lr)
            l1s.append(l1.item())
        ps, ss = evaluate_restore_net(net, mask_net, test_set)
        rec = EpochRecord(epoch, float(np.mean(l1s)), float(np.mean(rs)) if rs else float("nan"),
                          lr, ps, ss, iou, time.perf_counter() - t0)
        log_.append(rec)
        if dp is not None:
            log_.distill_rows.append([epoch] + list(np.mean(alphas, axis=0))
                                     + list(np.mean(entropies, axis=0)))
        log.info("restore epoch %d  l1 %.5f  R %.5f  psnr %.3f  (%.1fs)",
                 epoch, rec.loss, rec.loss_r, rec.psnr, rec.wall_time)
        ck = _snapshot(params, epoch, cfg, adam, log_)
        if save:
            _save(cfg, "restore", ck, log_, epoch)
    if ck is None:
        ck = _snapshot(params, 0, cfg, adam, log_)
    ck.extra.update(net=net, distill=dp, mask_net=mask_net)
    return ck, log_
