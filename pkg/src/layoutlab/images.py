"""8-bit raster I/O.

Binary PPM (P6) and PGM (P5) are read and written natively so the byte
layout is fully under our control; PNG goes through Pillow.  Grayscale
conversion uses integer BT.601 luma so results do not depend on any
library's rounding behaviour.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from .errors import InputError

_PNM_MAGICS = {b"P5", b"P6"}


def rgb_to_gray(arr: np.ndarray) -> np.ndarray:
    """Integer luma (BT.601, round-half-up) of an (H, W, 3) uint8 array."""
    r = arr[..., 0].astype(np.uint32)
    g = arr[..., 1].astype(np.uint32)
    b = arr[..., 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def _read_pnm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    stream = io.BytesIO(data)

    def token() -> bytes:
        # skip whitespace and '#' comments
        out = b""
        while True:
            ch = stream.read(1)
            if not ch:
                raise InputError(f"{path}: truncated PNM header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = stream.read(1)
                continue
            if ch.isspace():
                if out:
                    return out
                continue
            out += ch

    magic = token()
    if magic not in _PNM_MAGICS:
        raise InputError(f"{path}: unsupported PNM magic {magic!r}")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PNM supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    raw = stream.read(width * height * channels)
    if len(raw) != width * height * channels:
        raise InputError(f"{path}: truncated PNM pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def _read_with_pillow(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is a declared dep
        raise InputError(f"{path}: PNG support requires Pillow") from exc
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img).copy()


def load_raster(path: str | os.PathLike[str]) -> np.ndarray:
    """Load an image as uint8, shape (H, W) or (H, W, 3)."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"raster not found: {p}")
    if p.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return _read_pnm(p)
    return _read_with_pillow(p)


def load_gray(path: str | os.PathLike[str]) -> np.ndarray:
    """Load an image and reduce it to a (H, W) uint8 gray raster."""
    arr = load_raster(path)
    if arr.ndim == 3:
        return rgb_to_gray(arr)
    return arr


def load_saliency(path: str | os.PathLike[str]) -> np.ndarray:
    """Load an 8-bit mask and rescale it to float64 values in [0, 1]."""
    return load_gray(path).astype(np.float64) / 255.0


def encode_pgm(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype=np.uint8)
    if a.ndim != 2:
        raise InputError("PGM requires a 2-D array")
    h, w = a.shape
    return b"P5\n%d %d\n255\n" % (w, h) + a.tobytes()


def encode_ppm(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr, dtype=np.uint8)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError("PPM requires an (H, W, 3) array")
    h, w = a.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + a.tobytes()


def save_pgm(path: str | os.PathLike[str], arr: np.ndarray) -> None:
    write_bytes_atomic(Path(path), encode_pgm(arr))


def save_ppm(path: str | os.PathLike[str], arr: np.ndarray) -> None:
    write_bytes_atomic(Path(path), encode_ppm(arr))


def save_png(path: str | os.PathLike[str], arr: np.ndarray) -> None:
    from PIL import Image

    a = np.ascontiguousarray(arr, dtype=np.uint8)
    mode = "L" if a.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(a, mode=mode).save(buf, format="PNG")
    write_bytes_atomic(Path(path), buf.getvalue())


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
