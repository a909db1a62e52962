"""Degraded/clean/mask triples: synthesis, on-disk layout, loading.

A dataset directory holds ``<name>_degraded.ppm``, ``<name>_clean.ppm`` and
``<name>_mask.ppm`` per sample; ``gen-data`` writes ``train/`` and ``test/``
subdirectories.  Sample ``i`` of a split draws from the sub-stream
``Rng(seed).derive(split, i)`` so samples can be generated in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ShapeError
from .imageio import encode_ppm, read_image, read_mask, write_image, write_mask
from .masking import (DEFAULT_TAU, BlurParams, RainParams, gen_clean_image, make_gt_mask,
                      synth_rain, synth_regional_blur)
from .rng import Rng


@dataclass
class ImageTriple:
    name: str
    degraded: np.ndarray    # (3, H, W)
    clean: np.ndarray       # (3, H, W)
    mask: np.ndarray        # (H, W), binary

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape or self.degraded.ndim != 3:
            raise ShapeError(f"{self.name}: degraded {self.degraded.shape} vs clean {self.clean.shape}")
        if self.mask.shape != self.clean.shape[1:]:
            raise ShapeError(f"{self.name}: mask {self.mask.shape} vs image {self.clean.shape}")


def quantize(img: np.ndarray) -> np.ndarray:
    """Round-trip through 8 bits, exactly as writing and re-reading a PPM does."""
    return np.clip(np.rint(img * 255.0), 0, 255) / 255.0


def make_sample(seed: int, split: str, index: int, size: int = 64, kind: str = "rain",
                tau: float = DEFAULT_TAU, rain: RainParams | None = None) -> ImageTriple:
    """One synthetic triple, already quantised to 8 bits.

    Rain masks threshold the quantised pair at ``tau``; blur masks are the
    generator's region support.
    """
    rng = Rng(seed).derive(split, index)
    clean = gen_clean_image(rng.derive("clean"), size, size)
    if kind == "rain":
        base = rain or RainParams()
        params = RainParams(**{**base.__dict__, "seed": rng.derive("rain").next_u64()})
        degraded, _ = synth_rain(clean, params)
        clean_q, degraded_q = quantize(clean), quantize(degraded)
        mask = make_gt_mask(clean_q, degraded_q, tau)
    elif kind == "blur":
        r = rng.derive("blur")
        bh = r.integers(size // 4, size // 2 + 1)
        bw = r.integers(size // 4, size // 2 + 1)
        y0 = r.integers(0, size - bh + 1)
        x0 = r.integers(0, size - bw + 1)
        length = 2 * r.integers(2, 6) + 1
        params = BlurParams((y0, x0, y0 + bh, x0 + bw), length, r.uniform(0.0, 180.0))
        degraded, mask = synth_regional_blur(clean, params)
        clean_q, degraded_q = quantize(clean), quantize(degraded)
    else:
        raise ContractError(f"unknown degradation kind {kind!r}")
    return ImageTriple(f"{split}_{index:05d}", degraded_q, clean_q, mask)


def make_dataset(seed: int, split: str, count: int, **kwargs) -> list:
    return [make_sample(seed, split, i, **kwargs) for i in range(count)]


def write_triple(directory, t: ImageTriple):
    directory = Path(directory)
    write_image(directory / f"{t.name}_degraded.ppm", t.degraded)
    write_image(directory / f"{t.name}_clean.ppm", t.clean)
    write_mask(directory / f"{t.name}_mask.ppm", t.mask)


def write_dataset(root, seed: int, count: int, test_count: int = 0, **kwargs) -> dict:
    """Write ``root/train`` and ``root/test``; returns the triples per split."""
    root = Path(root)
    out = {}
    for split, n in (("train", count), ("test", test_count)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        out[split] = make_dataset(seed, split, n, **kwargs)
        for t in out[split]:
            write_triple(d, t)
    return out


def list_names(directory) -> list:
    directory = Path(directory)
    return sorted(p.name[:-len("_degraded.ppm")] for p in directory.glob("*_degraded.ppm"))


def load_triple(directory, name: str) -> ImageTriple:
    directory = Path(directory)
    try:
        return ImageTriple(name, read_image(directory / f"{name}_degraded.ppm"),
                           read_image(directory / f"{name}_clean.ppm"),
                           read_mask(directory / f"{name}_mask.ppm"))
    except OSError as exc:
        raise FormatError(f"{name}: {exc}") from None


def load_dataset(directory, min_size: int = 0, tolerant: bool = False) -> list:
    """All triples in ``directory`` in name order.

    With ``tolerant`` a triple that fails to load becomes a ``(name, error)``
    pair instead of raising.  ``min_size`` rejects images smaller than a patch.
    """
    names = list_names(directory)
    if not names:
        raise FormatError(f"no *_degraded.ppm files in {directory}")
    out = []
    for name in names:
        try:
            t = load_triple(directory, name)
            if min(t.clean.shape[1:]) < min_size:
                raise ContractError(f"{name}: {t.clean.shape[1:]} smaller than patch size {min_size}")
            out.append(t)
        except (FormatError, ShapeError, ContractError) as exc:
            if not tolerant:
                raise
            out.append((name, exc))
    return out


def dataset_bytes(triples) -> bytes:
    """Concatenated PPM encodings, for byte-level comparisons."""
    return b"".join(encode_ppm(t.degraded) + encode_ppm(t.clean) for t in triples)
