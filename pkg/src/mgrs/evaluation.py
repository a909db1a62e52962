"""PSNR / SSIM on the luminance channel, mask IoU, and test-set evaluation.

Conventions: BT.601 luma ``Y = 0.299 R + 0.587 G + 0.114 B``; PSNR with peak 1
capped at 100 dB; SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, averaged over valid (unpadded) window positions only.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError
from .networks import NetworkParams, mask_forward, restore_forward
from .tensor import no_grad

LUMA = np.array([0.299, 0.587, 0.114])
PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"luminance needs a (3, H, W) image, got {img.shape}")
    return LUMA[0] * img[0] + LUMA[1] * img[1] + LUMA[2] * img[2]


def _planes(a, b, on_luminance: bool) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if on_luminance:
        return luminance(a)[None], luminance(b)[None]
    return (a, b) if a.ndim == 3 else (a[None], b[None])


def psnr(a, b, on_luminance: bool = True) -> float:
    pa, pb = _planes(a, b, on_luminance)
    mse = np.mean((pa - pb) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Separable 2-D window; sums to 1."""
    g = gaussian_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(plane: np.ndarray, g1: np.ndarray) -> np.ndarray:
    k = g1.size
    rows = sliding_window_view(plane, k, axis=0) @ g1
    return sliding_window_view(rows, k, axis=1) @ g1


def _ssim_plane(x: np.ndarray, y: np.ndarray) -> float:
    g = gaussian_1d()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def ssim(a, b, on_luminance: bool = True) -> float:
    pa, pb = _planes(a, b, on_luminance)
    if pa.shape[-1] < SSIM_WINDOW or pa.shape[-2] < SSIM_WINDOW:
        raise ContractError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    return float(np.mean([_ssim_plane(x, y) for x, y in zip(pa, pb)]))


def mask_iou(pred, gt, binarize_at: float = 0.5) -> float:
    """|pred & gt| / |pred | gt| with both masks binarised at ``>= binarize_at``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred >= binarize_at
    g = gt >= binarize_at
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def _reflect_pad(img: np.ndarray, d: int) -> tuple:
    _, h, w = img.shape
    ph, pw = (-h) % d, (-w) % d
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, (h, w)


def predict_mask(mask_params: NetworkParams, degraded: np.ndarray) -> np.ndarray:
    """(H, W) degradation probability for one (3, H, W) image."""
    padded, (h, w) = _reflect_pad(np.asarray(degraded, dtype=np.float64), mask_params.config.divisor)
    with no_grad():
        prob, _ = mask_forward(mask_params, padded[None])
    return prob.data[0, 0, :h, :w].copy()


def restore_image(restore_params: NetworkParams, mask_params: NetworkParams | None,
                  degraded: np.ndarray) -> tuple:
    """(restored (3, H, W) clamped to [0, 1], predicted mask (H, W) or None)."""
    degraded = np.asarray(degraded, dtype=np.float64)
    d = max(restore_params.config.divisor, mask_params.config.divisor if mask_params else 1)
    padded, (h, w) = _reflect_pad(degraded, d)
    with no_grad():
        if mask_params is not None:
            prob, _ = mask_forward(mask_params, padded[None])
        else:
            prob = np.zeros((1, 1) + padded.shape[1:])
        out, _ = restore_forward(restore_params, padded[None], prob, clamp_output=True)
    mask = prob.data[0, 0, :h, :w].copy() if mask_params is not None else None
    return out.data[0, :, :h, :w].copy(), mask


@dataclass
class ImageMetrics:
    name: str
    psnr: float
    ssim: float
    psnr_input: float
    ssim_input: float
    iou: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)        # ImageMetrics, in input order
    failures: list = field(default_factory=list)    # (name, error message)

    def _values(self, key: str) -> np.ndarray:
        return np.array([getattr(r, key) for r in self.rows], dtype=np.float64)

    def mean(self, key: str) -> float:
        return float(self._values(key).mean()) if self.rows else float("nan")

    def median(self, key: str) -> float:
        return float(np.median(self._values(key))) if self.rows else float("nan")

    KEYS = ("psnr", "ssim", "psnr_input", "ssim_input", "iou")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("image",) + self.KEYS)
        for r in self.rows:
            w.writerow([r.name] + [repr(float(getattr(r, k))) for k in self.KEYS])
        for stat in ("mean", "median"):
            w.writerow([f"__{stat}__"] + [repr(getattr(self, stat)(k)) for k in self.KEYS])
        for name, msg in self.failures:
            w.writerow([name, "ERROR", msg, "", "", ""])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"images evaluated: {len(self.rows)}   failed: {len(self.failures)}"]
        for k in self.KEYS:
            lines.append(f"  {k:<11} mean {self.mean(k):9.4f}   median {self.median(k):9.4f}")
        for name, msg in self.failures:
            lines.append(f"  FAILED {name}: {msg}")
        return "\n".join(lines)


def evaluate_triple(name, degraded, clean, gt_mask, restore_params, mask_params) -> ImageMetrics:
    restored, pred_mask = restore_image(restore_params, mask_params, degraded)
    iou = mask_iou(pred_mask, gt_mask) if pred_mask is not None and gt_mask is not None else float("nan")
    return ImageMetrics(name, psnr(restored, clean), ssim(restored, clean),
                        psnr(degraded, clean), ssim(degraded, clean), iou)


def evaluate_set(restore_params: NetworkParams, mask_params: NetworkParams | None, test_set,
                 threads: int = 1) -> MetricReport:
    """Evaluate every triple of ``test_set``.

    ``test_set`` yields ``ImageTriple``-like objects or ``(name, exception)``
    pairs for images that failed to load; the latter are listed in the
    report and excluded from aggregates.  Rows keep the input order whatever
    ``threads`` is.
    """
    items = list(test_set)
    report = MetricReport()

    def work(item):
        if isinstance(item, tuple):
            return item
        try:
            return evaluate_triple(item.name, item.degraded, item.clean, item.mask,
                                   restore_params, mask_params)
        except Exception as exc:  # reported per image, never aborts the set
            return (item.name, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    for res in results:
        if isinstance(res, ImageMetrics):
            report.rows.append(res)
        else:
            report.failures.append((res[0], str(res[1])))
    return report
