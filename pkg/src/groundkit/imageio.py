"""Minimal image IO: binary PPM (P6) in, 16-bit PGM (P5) and raw float dumps out.

PNG/JPEG input is supported through Pillow when available.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import GroundkitError


class ImageReadError(GroundkitError):
    pass


def _read_pnm_header(data: bytes, magic: bytes) -> tuple[list[int], int]:
    if not data.startswith(magic):
        raise ImageReadError(f"expected {magic.decode()} header")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields, pos + 1  # single whitespace after maxval


def read_ppm(path: str | Path) -> np.ndarray:
    """Binary P6 PPM -> float32 [3, H, W] in [0, 1]."""
    data = Path(path).read_bytes()
    (w, h, maxval), offset = _read_pnm_header(data, b"P6")
    if maxval > 255:
        raise ImageReadError("only 8-bit PPM supported")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=offset)
    if pixels.size < h * w * 3:
        raise ImageReadError(f"{path}: truncated PPM payload")
    pixels = pixels[: h * w * 3]
    return (pixels.reshape(h, w, 3).transpose(2, 0, 1) / np.float32(maxval)).astype(np.float32)


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    """float32 [3, H, W] in [0, 1] -> binary P6 PPM."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    _, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.transpose(1, 2, 0).tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Read PPM natively; fall back to Pillow for other formats."""
    path = Path(path)
    if not path.exists():
        raise ImageReadError(f"no such image: {path}")
    if path.read_bytes()[:2] == b"P6":
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as e:  # pragma: no cover
        raise ImageReadError(f"{path}: not a PPM and Pillow unavailable") from e
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as e:
        raise ImageReadError(f"{path}: {e}") from e
    return rgb.transpose(2, 0, 1)


def write_pgm16(values: np.ndarray, path: str | Path) -> None:
    """Min-max scale a 2-D float map into a 16-bit big-endian P5 PGM."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    arr = np.round(scaled * 65535).astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(arr.tobytes())


def write_raw_dump(values: np.ndarray, path: str | Path) -> None:
    """Shape-prefixed little-endian float dump.

    Header: u32 ndim, u32 dims..., u32 bytes-per-element (4 or 8), then the
    raw float32/float64 payload. The array's own precision is preserved so
    reloading is bitwise.
    """
    arr = np.ascontiguousarray(values)
    itemsize = 8 if arr.dtype == np.float64 else 4
    arr = arr.astype(f"<f{itemsize}")
    with open(path, "wb") as f:
        f.write(np.uint32(arr.ndim).tobytes())
        f.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        f.write(np.uint32(itemsize).tobytes())
        f.write(arr.tobytes())


def read_raw_dump(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    ndim = int(np.frombuffer(data, dtype="<u4", count=1)[0])
    shape = tuple(np.frombuffer(data, dtype="<u4", count=ndim, offset=4))
    itemsize = int(np.frombuffer(data, dtype="<u4", count=1, offset=4 + 4 * ndim)[0])
    offset = 8 + 4 * ndim
    return np.frombuffer(data, dtype=f"<f{itemsize}", offset=offset).reshape(shape).copy()
