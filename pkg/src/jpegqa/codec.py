"""JPEG-style degradation: blockwise DCT, Q-scaled quantization, reconstruction.

This is the distortion path only: 4:4:4, no entropy coding, no bitstream.
The compressed-size proxy is the count of nonzero quantized coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import RasterImage

# ITU-T T.81 Annex K.1 quantization tables, row-major.
BASE_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

BASE_CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


def _check_quality(q: int) -> int:
    q = int(q)
    if not 1 <= q <= 100:
        raise ValueError(f"quality factor must be in [1, 100], got {q}")
    return q


def scale_quant_table(base: np.ndarray, q: int) -> np.ndarray:
    """IJG quality scaling: identity at q=50, all-ones at q=100."""
    q = _check_quality(q)
    base = np.asarray(base, dtype=np.int64)
    if base.shape != (8, 8) or base.min() < 1 or base.max() > 255:
        raise ValueError("base table must be 8x8 with entries in [1, 255]")
    s = 5000 // q if q < 50 else 200 - 2 * q
    scaled = (base * s + 50) // 100
    return np.clip(scaled, 1, 255)


# Orthonormal DCT-II basis; identical scaling to the T.81 2-D DCT.
def _dct_matrix() -> np.ndarray:
    k = np.arange(8)
    basis = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16)
    basis *= np.sqrt(2.0 / 8.0)
    basis[0, :] = np.sqrt(1.0 / 8.0)
    return basis


_DCT = _dct_matrix()


def fdct8x8(block: np.ndarray) -> np.ndarray:
    """Forward 2-D DCT of one level-shifted 8x8 block (orthonormal)."""
    return _DCT @ np.asarray(block, dtype=np.float64) @ _DCT.T


def idct8x8(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fdct8x8`."""
    return _DCT.T @ np.asarray(coeffs, dtype=np.float64) @ _DCT


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """BT.601 full-range RGB (float) -> YCbCr (float, chroma centered on 128)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    """(H, W) with H, W multiples of 8 -> (H//8, W//8, 8, 8)."""
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bh * 8, bw * 8)


def _process_plane(plane: np.ndarray, table: np.ndarray) -> tuple[np.ndarray, int]:
    """Quantize/dequantize one padded plane; returns plane and nonzero count."""
    blocks = _to_blocks(plane - 128.0)
    coeffs = np.einsum("ij,bcjk,lk->bcil", _DCT, blocks, _DCT)
    quant = np.rint(coeffs / table)
    nonzero = int(np.count_nonzero(quant))
    recon = np.einsum("ji,bcjk,kl->bcil", _DCT, quant * table, _DCT)
    return _from_blocks(recon) + 128.0, nonzero


@dataclass
class CompressResult:
    image: RasterImage
    quality: int
    nonzero_coeffs: int  # file-size proxy


def compress_detailed(img: RasterImage, q: int) -> CompressResult:
    """JPEG-style lossy round trip at quality q; keeps original dimensions."""
    q = _check_quality(q)
    if img.channels != 3:
        raise ValueError("compress expects a 3-channel image")
    h, w = img.height, img.width
    pad_h = (-h) % 8
    pad_w = (-w) % 8

    ycc = rgb_to_ycbcr(img.data.astype(np.float64))
    if pad_h or pad_w:
        ycc = np.pad(ycc, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")

    luma_table = scale_quant_table(BASE_LUMA_TABLE, q).astype(np.float64)
    chroma_table = scale_quant_table(BASE_CHROMA_TABLE, q).astype(np.float64)

    planes = []
    nonzero = 0
    for ch, table in ((0, luma_table), (1, chroma_table), (2, chroma_table)):
        plane, nz = _process_plane(ycc[:, :, ch], table)
        planes.append(plane)
        nonzero += nz

    recon = ycbcr_to_rgb(np.stack(planes, axis=-1))[:h, :w, :]
    out = np.clip(np.rint(recon), 0, 255).astype(np.uint8)
    return CompressResult(RasterImage(out), q, nonzero)


def compress(img: RasterImage, q: int) -> RasterImage:
    return compress_detailed(img, q).image
