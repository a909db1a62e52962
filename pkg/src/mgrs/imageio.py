"""Binary PPM (P6, maxval 255) reading and writing.

Images are (3, H, W) float arrays in [0, 1]; a byte ``v`` reads as ``v/255``
and a value ``x`` writes as ``round(x * 255)`` clipped to [0, 255].  The writer
always emits the canonical header ``P6\\n<w> <h>\\n255\\n``, so reading and
re-writing a canonically written file reproduces it byte for byte.  The reader
also accepts comments and arbitrary whitespace in the header.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

_WS = b" \t\n\r\x0b\x0c"


def _header_token(buf: bytes, pos: int) -> tuple:
    while pos < len(buf):
        if buf[pos] in _WS:
            pos += 1
        elif buf[pos] == ord("#"):
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos] not in _WS and buf[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise FormatError(f"PPM header truncated at byte offset {start}")
    return buf[start:pos], start, pos


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise FormatError(f"bad PPM magic at byte offset 0: {buf[:2]!r} (expected b'P6')")
    pos = 2
    values = []
    for field in ("width", "height", "maxval"):
        tok, start, pos = _header_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"PPM {field} is not a decimal integer at byte offset {start}: {tok!r}")
        values.append((int(tok), start))
    (w, _), (h, _), (maxval, mstart) = values
    if maxval != 255:
        raise FormatError(f"PPM maxval must be 255, got {maxval} at byte offset {mstart}")
    if w < 1 or h < 1:
        raise FormatError(f"PPM dimensions must be positive, got {w}x{h}")
    if pos >= len(buf) or buf[pos] not in _WS:
        raise FormatError(f"missing whitespace after PPM header at byte offset {pos}")
    pos += 1
    need = w * h * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"PPM payload truncated at byte offset {pos + len(payload)}: "
                          f"expected {need} bytes from offset {pos}, got {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return px.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"P6 images are (3, H, W), got {img.shape}")
    _, h, w = img.shape
    px = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def read_image(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_image(path, img: np.ndarray):
    Path(path).write_bytes(encode_ppm(img))


def read_mask(path) -> np.ndarray:
    """Single-channel mask stored as a grey P6 file; returns (H, W) in [0, 1]."""
    return read_image(path)[0]


def write_mask(path, mask: np.ndarray):
    mask = np.asarray(mask, dtype=np.float64)
    write_image(path, np.broadcast_to(mask, (3,) + mask.shape))
