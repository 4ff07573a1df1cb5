"""Image representation, PPM I/O, luma conversion and crop/pad geometry."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import SplitMix64

# BT.601 luma weights, matching the codec's YCbCr convention.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnreadableFileError(ImageError):
    """File missing or not readable."""


class MalformedImageError(ImageError):
    """Header or payload does not parse as a supported format."""


class UnsupportedImageError(ImageError):
    """Format recognized but outside the supported subset."""


@dataclass
class RasterImage:
    """Interleaved 8-bit raster; ``data`` is (height, width, channels) uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise UnsupportedImageError(f"expected HxWx1 or HxWx3 data, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise MalformedImageError(f"empty image: shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise MalformedImageError(f"samples must be uint8, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _read_ppm(raw: bytes, path: str) -> RasterImage:
    magic = raw[:2]
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None:
        raise MalformedImageError(f"{path}: not a P5/P6 netpbm file")
    # header = magic + 3 decimal fields, with whitespace and # comments
    pos = 2
    fields = []
    while len(fields) < 3:
        m = re.compile(rb"(?:\s+|#[^\n]*\n)*(\d+)").match(raw, pos)
        if m is None:
            raise MalformedImageError(f"{path}: truncated or malformed netpbm header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedImageError(f"{path}: only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise MalformedImageError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = raw[pos : pos + need]
    if len(payload) != need:
        raise MalformedImageError(
            f"{path}: payload has {len(payload)} bytes, expected {need}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return RasterImage(arr.copy())


def load_image(path: str | Path) -> RasterImage:
    """Load a PPM (P6) / PGM (P5) file; PNG is accepted when Pillow is installed."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    if raw[:2] in (b"P6", b"P5"):
        return _read_ppm(raw, str(path))
    if raw[:8] == _PNG_MAGIC:
        return _load_png(path)
    raise MalformedImageError(f"{path}: unrecognized format (not netpbm or PNG)")


def _load_png(path: Path) -> RasterImage:
    try:
        from PIL import Image
    except ImportError as exc:
        raise UnsupportedImageError(f"{path}: PNG support requires Pillow") from exc
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return RasterImage(arr)


def save_image(img: RasterImage, path: str | Path, comment: str | None = None) -> None:
    """Write P6 (3 channels) or P5 (1 channel), maxval 255, bit-exact payload."""
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("utf-8") + b"\n"
    header += f"{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.data.tobytes())


def to_grayscale(img: RasterImage) -> np.ndarray:
    """Luma plane as float32 (BT.601 weights); identity cast for 1-channel input."""
    if img.channels == 1:
        return img.data[:, :, 0].astype(np.float32)
    r, g, b = (img.data[:, :, i].astype(np.float32) for i in range(3))
    w = LUMA_WEIGHTS
    return (w[0] * r + w[1] * g + w[2] * b).astype(np.float32)


def crop_or_pad(img: RasterImage, size: int, seed: int) -> RasterImage:
    """Seeded random crop to size x size; short dimensions are zero padded.

    One bounded draw per croppable dimension (width first, then height).
    Padding is centered, with the odd leftover pixel on the bottom/right.
    """
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    rng = SplitMix64(seed)
    h, w, c = img.data.shape

    if w >= size:
        x0 = rng.bounded(w - size + 1)
        cols = slice(x0, x0 + size)
        px0, px1 = 0, 0
    else:
        cols = slice(0, w)
        px0 = (size - w) // 2
        px1 = size - w - px0
    if h >= size:
        y0 = rng.bounded(h - size + 1)
        rows = slice(y0, y0 + size)
        py0, py1 = 0, 0
    else:
        rows = slice(0, h)
        py0 = (size - h) // 2
        py1 = size - h - py0

    out = img.data[rows, cols, :]
    if px0 or px1 or py0 or py1:
        out = np.pad(out, ((py0, py1), (px0, px1), (0, 0)), mode="constant")
    return RasterImage(out.copy())
