"""Seeded natural-texture generators for references and test corpora.

Multi-octave value noise gives the roughly 1/f spectrum of natural photos,
so JPEG quantization produces the usual quality gradient across Q factors.
Everything is a pure function of (seed, width, height).
"""

from __future__ import annotations

import numpy as np

from .image import RasterImage
from .rng import SplitMix64, derive_seed


def _value_noise(rng: SplitMix64, height: int, width: int, cells: int) -> np.ndarray:
    """Bilinear interpolation of a random (cells+1)^2 lattice, floats in [0,1]."""
    lattice = rng.fill_uniform((cells + 1) * (cells + 1)).reshape(cells + 1, cells + 1)
    ys = np.linspace(0.0, cells, height, endpoint=False)
    xs = np.linspace(0.0, cells, width, endpoint=False)
    yi = np.minimum(ys.astype(np.int64), cells - 1)
    xi = np.minimum(xs.astype(np.int64), cells - 1)
    yf = (ys - yi)[:, None]
    xf = (xs - xi)[None, :]
    tl = lattice[np.ix_(yi, xi)]
    tr = lattice[np.ix_(yi, xi + 1)]
    bl = lattice[np.ix_(yi + 1, xi)]
    br = lattice[np.ix_(yi + 1, xi + 1)]
    top = tl + (tr - tl) * xf
    bot = bl + (br - bl) * xf
    return top + (bot - top) * yf


def synth_texture(width: int, height: int, seed: int) -> RasterImage:
    """Deterministic RGB texture: low-frequency color field plus luma detail."""
    rng = SplitMix64(derive_seed(seed, "texture"))
    luma = np.zeros((height, width))
    amplitude, total = 1.0, 0.0
    cells = 2
    while cells <= max(4, min(width, height) // 2):
        luma += amplitude * _value_noise(rng, height, width, cells)
        total += amplitude
        amplitude *= 0.55
        cells *= 2
    luma /= total

    # broad chroma washes, decorrelated from the fine luma structure
    cr = _value_noise(rng, height, width, 3) - 0.5
    cb = _value_noise(rng, height, width, 3) - 0.5

    r = luma + 0.55 * cr
    g = luma - 0.25 * cr - 0.15 * cb
    b = luma + 0.55 * cb
    rgb = np.stack([r, g, b], axis=-1)
    lo, hi = rgb.min(), rgb.max()
    rgb = (rgb - lo) / max(hi - lo, 1e-9)
    return RasterImage(np.round(rgb * 255.0).astype(np.uint8))


def texture_corpus(count: int, width: int, height: int, seed: int) -> list[RasterImage]:
    """Fixed corpus of textures; image i depends only on (seed, i, size)."""
    return [
        synth_texture(width, height, derive_seed(seed, "corpus", i)) for i in range(count)
    ]
