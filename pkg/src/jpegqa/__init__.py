"""jpegqa: perceptual quality toolkit for simulated JPEG compression.

Submodules:
    rng         seeded splitmix64 streams and key derivation
    image       PPM raster IO, grayscale conversion, crop/pad
    synth       deterministic texture synthesis
    codec       blockwise DCT + quantization compression simulator
    metrics     PSNR / SSIM / MS-SSIM / NIQE-lite / two-step quality
    nn          minimal reverse-mode autodiff and Adam
    comparator  pairwise preference CNN, training, rd tuning
    dataset     pairwise dataset planning, materialization, rater oracle
    evaluation  correlation of predictions against labels
    cli         command-line entry point

The package root imports lazily so the CLI can configure BLAS threading
before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("rng", "image", "synth", "codec", "metrics", "nn",
               "comparator", "dataset", "evaluation", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
