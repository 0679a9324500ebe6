"""Grayscale image files and exact float sidecars.

Binary PGM (P5, maxval 255) is the required interchange format; pixel
values map to [0, 1] by division by 255.  Every image a command writes is
accompanied by a ``.f64`` sidecar holding the raw float64 data, so 8-bit
quantization never corrupts downstream exactness checks.

Sidecar layout: three little-endian int32 (channels, height, width)
followed by channels*height*width little-endian float64 in row-major
order.

8-bit grayscale PNG input is supported when Pillow is installed; it is
not a package dependency.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

SIDECAR_SUFFIX = ".f64"


class ImageFormatError(ValueError):
    """File contents do not match the expected image format."""


def read_pgm(path) -> Tensor:
    """Read a binary PGM (P5, maxval 255) as a (1, H, W) tensor in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")

    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval

    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    expected = width * height
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ImageFormatError(f"{path}: PGM raster truncated")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(1, height, width)


def write_pgm(path, image: Tensor) -> None:
    """Write a (1, H, W) tensor as binary PGM, clipping to [0, 1] first."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ImageFormatError(f"PGM output needs a (1, H, W) tensor, got {image.shape}")
    _, h, w = image.shape
    quantized = np.clip(np.rint(image[0] * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_png(path) -> Tensor:
    """Read an 8-bit grayscale PNG via Pillow, if available."""
    try:
        from PIL import Image
    except ImportError as exc:
        raise ImageFormatError(
            f"{path}: PNG support requires Pillow (pip install Pillow)"
        ) from exc
    with Image.open(path) as im:
        gray = im.convert("L")
        arr = np.asarray(gray, dtype=np.float64) / 255.0
    return arr[np.newaxis, :, :]


def read_image(path) -> Tensor:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    if suffix == SIDECAR_SUFFIX:
        return read_sidecar(path)
    raise ImageFormatError(f"{path}: unsupported image format {suffix!r}")


def write_sidecar(path, data: Tensor) -> None:
    """Write the exact float64 tensor next to an image."""
    c, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3i", c, h, w))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_sidecar(path) -> Tensor:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise ImageFormatError(f"{path}: sidecar truncated")
    c, h, w = struct.unpack("<3i", raw[:12])
    count = c * h * w
    if c < 1 or h < 1 or w < 1 or len(raw) != 12 + 8 * count:
        raise ImageFormatError(f"{path}: sidecar shape header inconsistent with size")
    data = np.frombuffer(raw[12:], dtype="<f8").astype(np.float64)
    return data.reshape(c, h, w)


def sidecar_path(image_path) -> Path:
    image_path = Path(image_path)
    return image_path.with_suffix(image_path.suffix + SIDECAR_SUFFIX)


def write_image_with_sidecar(path, data: Tensor, display_offset: float = 0.0) -> None:
    """PGM for viewing (optionally offset for signed data) plus exact sidecar."""
    write_pgm(path, data + display_offset)
    write_sidecar(sidecar_path(path), data)


def read_exact(image_path) -> Tensor:
    """Prefer the sidecar when present, fall back to the quantized image."""
    sc = sidecar_path(image_path)
    if sc.exists():
        return read_sidecar(sc)
    return read_image(image_path)
