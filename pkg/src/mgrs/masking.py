"""Ground-truth degradation masks and synthetic spatially-varying degradations.

Images are float64 arrays shaped (3, H, W) with values in [0, 1]; masks are
(H, W) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .rng import Rng

DEFAULT_TAU = 0.05


def _check_image(img: np.ndarray, name: str = "image"):
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"{name} must be (3, H, W), got {img.shape}")


def make_gt_mask(clean: np.ndarray, degraded: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """1 where the RGB-mean absolute difference exceeds ``tau``, else 0."""
    clean = np.asarray(clean, dtype=np.float64)
    degraded = np.asarray(degraded, dtype=np.float64)
    if clean.shape != degraded.shape:
        raise ShapeError(f"image shapes differ: {clean.shape} vs {degraded.shape}")
    _check_image(clean)
    if not 0.0 < tau < 1.0:
        raise ContractError(f"tau must lie in (0, 1), got {tau}")
    diff = np.abs(clean - degraded).mean(axis=0)
    return (diff > tau).astype(np.float64)


@dataclass
class RainParams:
    streak_count: int = 24
    angle_range: tuple = (-15.0, 15.0)      # degrees from vertical
    length_range: tuple = (12.0, 32.0)      # px
    width_range: tuple = (1.0, 2.5)         # px
    opacity_range: tuple = (0.35, 0.85)
    # streak alpha below this is dropped, so the support is well defined
    min_alpha: float = 0.06
    seed: int = 0

    def validate(self):
        if self.streak_count < 0:
            raise ContractError("streak_count must be >= 0")
        for name in ("angle_range", "length_range", "width_range", "opacity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractError(f"{name} is not ordered: {lo} > {hi}")
        lo, hi = self.opacity_range
        if not (0.0 < lo and hi <= 1.0):
            raise ContractError("opacity_range must lie in (0, 1]")
        if self.width_range[0] <= 0 or self.length_range[0] < 0:
            raise ContractError("streak width must be positive and length non-negative")


def _segment_distance(xs, ys, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        t = np.zeros_like(xs)
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg2, 0.0, 1.0)
    return np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))


def rain_alpha(height: int, width: int, p: RainParams) -> np.ndarray:
    """Anti-aliased streak alpha layer in [0, 1] (0 outside the streak support).

    Coverage of a pixel centre at distance ``d`` from a segment of width
    ``w`` is ``clip(w/2 + 0.5 - d, 0, 1)`` (box-filtered edge); overlapping
    streaks combine as ``1 - prod(1 - alpha)``.
    """
    p.validate()
    rng = Rng(p.seed).derive("rain")
    keep = np.ones((height, width))
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for _ in range(p.streak_count):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        theta = np.deg2rad(rng.uniform(*p.angle_range))
        length = rng.uniform(*p.length_range)
        w = rng.uniform(*p.width_range)
        opacity = rng.uniform(*p.opacity_range)
        ux, uy = np.sin(theta) * length / 2, np.cos(theta) * length / 2
        x0, y0, x1, y1 = cx - ux, cy - uy, cx + ux, cy + uy
        reach = w / 2 + 1.0
        r0 = max(int(np.floor(min(y0, y1) - reach)), 0)
        r1 = min(int(np.ceil(max(y0, y1) + reach)) + 1, height)
        c0 = max(int(np.floor(min(x0, x1) - reach)), 0)
        c1 = min(int(np.ceil(max(x0, x1) + reach)) + 1, width)
        if r0 >= r1 or c0 >= c1:
            continue
        d = _segment_distance(xs[r0:r1, c0:c1], ys[r0:r1, c0:c1], x0, y0, x1, y1)
        cover = np.clip(w / 2 + 0.5 - d, 0.0, 1.0)
        keep[r0:r1, c0:c1] *= 1.0 - opacity * cover
    alpha = 1.0 - keep
    alpha[alpha < p.min_alpha] = 0.0
    return alpha


def synth_rain(clean: np.ndarray, p: RainParams) -> tuple:
    """Screen-blend white streaks over ``clean``.

    Returns ``(degraded, mask)`` where ``mask`` is the exact rasterised streak
    support.  ``degraded >= clean`` everywhere.
    """
    clean = np.asarray(clean, dtype=np.float64)
    _check_image(clean, "clean")
    alpha = rain_alpha(clean.shape[1], clean.shape[2], p)
    degraded = np.clip(clean + alpha * (1.0 - clean), 0.0, 1.0)
    # guard against rounding pulling a pixel below its clean value
    degraded = np.maximum(degraded, clean)
    return degraded, (alpha > 0).astype(np.float64)


@dataclass
class BlurParams:
    region: tuple                 # (y0, x0, y1, x1), half-open
    kernel_length: int = 9
    kernel_angle: float = 0.0     # degrees, counter-clockwise from +x
    seed: int = 0
    ramp: int = 4                 # px of linear blending inside the region border

    def validate(self, height: int, width: int):
        y0, x0, y1, x1 = self.region
        if not (0 <= y0 < y1 <= height and 0 <= x0 < x1 <= width):
            raise ContractError(f"blur region {self.region} outside a {height}x{width} image")
        if self.kernel_length < 1 or self.kernel_length % 2 == 0:
            raise ContractError(f"kernel_length must be odd and >= 1, got {self.kernel_length}")
        if self.ramp < 1:
            raise ContractError("ramp must be >= 1 px")


def motion_kernel(length: int, angle: float) -> np.ndarray:
    """Normalised linear motion kernel of odd size ``length``.

    ``length`` taps are placed along the line through the kernel centre and
    bilinearly splatted onto the grid.
    """
    k = np.zeros((length, length))
    c = (length - 1) / 2
    theta = np.deg2rad(angle)
    for i in range(length):
        t = i - c
        x = c + t * np.cos(theta)
        y = c - t * np.sin(theta)
        x = min(max(x, 0.0), length - 1.0)
        y = min(max(y, 0.0), length - 1.0)
        xi, yi = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - xi, y - yi
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                if wy * wx > 0:
                    k[yi + dy, xi + dx] += wy * wx
    return k / k.sum()


def region_weight(height: int, width: int, region: tuple, ramp: int) -> np.ndarray:
    """Blend weight: 0 outside ``region``, ramping to 1 over ``ramp`` px inside it."""
    y0, x0, y1, x1 = region
    ys, xs = np.mgrid[0:height, 0:width]
    inside = (ys >= y0) & (ys < y1) & (xs >= x0) & (xs < x1)
    d = np.minimum.reduce([ys - y0, y1 - 1 - ys, xs - x0, x1 - 1 - xs])
    return np.where(inside, np.minimum(1.0, (d + 1.0) / ramp), 0.0)


def synth_regional_blur(clean: np.ndarray, p: BlurParams) -> tuple:
    """Motion-blur the region only; returns ``(degraded, region_mask)``.

    The blur is a correlation with replicate padding; it is written as
    ``clean + sum_t k_t * (shift_t(clean) - clean)`` so a constant image or a
    delta kernel leaves the input bit-identical.
    """
    clean = np.asarray(clean, dtype=np.float64)
    _check_image(clean, "clean")
    _, h, w = clean.shape
    p.validate(h, w)
    k = motion_kernel(p.kernel_length, p.kernel_angle)
    r = p.kernel_length // 2
    padded = np.pad(clean, ((0, 0), (r, r), (r, r)), mode="edge")
    delta = np.zeros_like(clean)
    for i in range(p.kernel_length):
        for j in range(p.kernel_length):
            if k[i, j] != 0.0:
                delta += k[i, j] * (padded[:, i:i + h, j:j + w] - clean)
    weight = region_weight(h, w, p.region, p.ramp)
    degraded = np.clip(clean + weight * delta, 0.0, 1.0)
    y0, x0, y1, x1 = p.region
    mask = np.zeros((h, w))
    mask[y0:y1, x0:x1] = 1.0
    return degraded, mask


def gen_clean_image(rng: Rng, height: int, width: int) -> np.ndarray:
    """Procedural RGB scene: colour gradient, rectangles, discs and mild texture."""
    if height < 16 or width < 16:
        raise ContractError(f"clean images need both dims >= 16, got {height}x{width}")
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    yn, xn = ys / (height - 1), xs / (width - 1)

    base = rng.uniform(0.1, 0.6, 3)
    gx = rng.uniform(-0.3, 0.3, 3)
    gy = rng.uniform(-0.3, 0.3, 3)
    img = base[:, None, None] + gx[:, None, None] * xn + gy[:, None, None] * yn

    for _ in range(rng.integers(2, 6)):
        y0 = rng.integers(0, height - 4)
        x0 = rng.integers(0, width - 4)
        y1 = rng.integers(y0 + 3, min(height, y0 + height // 2) + 1)
        x1 = rng.integers(x0 + 3, min(width, x0 + width // 2) + 1)
        color = rng.uniform(0.0, 0.9, 3)
        img[:, y0:y1, x0:x1] = 0.2 * img[:, y0:y1, x0:x1] + 0.8 * color[:, None, None]

    for _ in range(rng.integers(2, 6)):
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        rad = rng.uniform(3.0, min(height, width) / 4)
        color = rng.uniform(0.0, 0.9, 3)
        inside = (ys - cy) ** 2 + (xs - cx) ** 2 <= rad * rad
        img[:, inside] = color[:, None]

    img += 0.02 * rng.normal((3, height, width))
    return np.clip(img, 0.0, 1.0)
