"""Classical full-reference and no-reference quality metrics.

All metrics operate on luma planes (float32/float64 2-D arrays in [0, 255]).
SSIM / MS-SSIM follow the standard published constants; the NIQE-style metric
is a documented single-scale simplification whose pristine model is fit on a
corpus supplied by the caller, so its structure (not its absolute values)
matches the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gamma as gamma_fn

from .image import RasterImage, to_grayscale

PSNR_INF = float("inf")  # sentinel for psnr of identical planes

SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_MIN_DIM = SSIM_WINDOW * 2 ** (len(MSSSIM_WEIGHTS) - 1)  # 176

NIQE_PATCH = 96
NIQE_FEATURES = 18
_NIQE_RIDGE_SCALE = 1e-3


class MetricError(Exception):
    pass


class DimensionMismatchError(MetricError):
    pass


class DegenerateInputError(MetricError):
    """Input has no structure to measure (e.g. constant plane for NIQE)."""


@dataclass
class MetricValue:
    name: str
    value: float
    higher_is_better: bool


def _as_planes(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatchError("metrics expect 2-D luma planes")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"plane shapes differ: {a.shape} vs {b.shape}")
    return a, b


# ---------------------------------------------------------------------------
# MSE / PSNR
# ---------------------------------------------------------------------------

def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _as_planes(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(255.0**2 / err))


# ---------------------------------------------------------------------------
# SSIM / MS-SSIM
# ---------------------------------------------------------------------------

def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


_SSIM_TAPS = _gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a symmetric 1-D kernel."""
    n = taps.size
    rows = x.shape[0] - n + 1
    out = np.zeros((rows, x.shape[1]))
    for k in range(n):
        out += taps[k] * x[k : k + rows, :]
    cols = x.shape[1] - n + 1
    out2 = np.zeros((rows, cols))
    for k in range(n):
        out2 += taps[k] * out[:, k : k + cols]
    return out2


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Luminance map and contrast-structure map over valid window positions."""
    mu_a = _filter_valid(a, _SSIM_TAPS)
    mu_b = _filter_valid(b, _SSIM_TAPS)
    var_a = _filter_valid(a * a, _SSIM_TAPS) - mu_a * mu_a
    var_b = _filter_valid(b * b, _SSIM_TAPS) - mu_b * mu_b
    cov = _filter_valid(a * b, _SSIM_TAPS) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + SSIM_C1)
    cs = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return lum, cs


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid positions."""
    a, b = _as_planes(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionMismatchError(
            f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}"
        )
    lum, cs = _ssim_maps(a, b)
    return float(np.mean(lum * cs))


def _downsample2(x: np.ndarray) -> np.ndarray:
    """2x2 box average then decimation; odd trailing row/col dropped."""
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]) / 4.0


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """5-scale MS-SSIM with the standard exponents.

    Contrast-structure means are taken at every scale and the luminance mean
    at the coarsest; pooled terms are floored at 0 before exponentiation so
    adversarial inputs cannot produce complex powers.
    """
    a, b = _as_planes(a, b)
    if min(a.shape) < MSSSIM_MIN_DIM:
        raise DimensionMismatchError(
            f"ms_ssim needs at least {MSSSIM_MIN_DIM} pixels per side, got {a.shape}"
        )
    result = 1.0
    for level, weight in enumerate(MSSSIM_WEIGHTS):
        lum, cs = _ssim_maps(a, b)
        result *= max(float(np.mean(cs)), 0.0) ** weight
        if level == len(MSSSIM_WEIGHTS) - 1:
            result *= max(float(np.mean(lum)), 0.0) ** weight
        else:
            a = _downsample2(a)
            b = _downsample2(b)
    return float(result)


# ---------------------------------------------------------------------------
# NIQE-lite: single-scale natural-scene-statistics distance
# ---------------------------------------------------------------------------

_GAMMA_GRID = np.arange(0.2, 10.001, 0.001)
_GGD_RATIO = (
    gamma_fn(1.0 / _GAMMA_GRID)
    * gamma_fn(3.0 / _GAMMA_GRID)
    / gamma_fn(2.0 / _GAMMA_GRID) ** 2
)
_AGGD_RATIO = (
    gamma_fn(2.0 / _GAMMA_GRID) ** 2
    / (gamma_fn(1.0 / _GAMMA_GRID) * gamma_fn(3.0 / _GAMMA_GRID))
)

_NIQE_TAPS = _gaussian_taps(7, 7.0 / 6.0)


def _filter_same_replicate(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    pad = taps.size // 2
    xp = np.pad(x, pad, mode="edge")
    return _filter_valid(xp, taps)


def _mscn(plane: np.ndarray) -> np.ndarray:
    mu = _filter_same_replicate(plane, _NIQE_TAPS)
    sigma = np.sqrt(
        np.maximum(_filter_same_replicate(plane * plane, _NIQE_TAPS) - mu * mu, 0.0)
    )
    return (plane - mu) / (sigma + 1.0)


def _fit_ggd(x: np.ndarray) -> tuple[float, float]:
    """Moment-matched generalized Gaussian: returns (shape, variance)."""
    var = float(np.mean(x * x))
    mean_abs = float(np.mean(np.abs(x)))
    if var < 1e-12 or mean_abs < 1e-12:
        return 10.0, var
    rho = var / mean_abs**2
    shape = float(_GAMMA_GRID[np.argmin(np.abs(_GGD_RATIO - rho))])
    return shape, var


def _fit_aggd(x: np.ndarray) -> tuple[float, float, float, float]:
    """Asymmetric GGD fit: returns (shape, mean, left variance, right variance)."""
    left = x[x < 0]
    right = x[x > 0]
    sigma_l = float(np.sqrt(np.mean(left**2))) if left.size else 0.0
    sigma_r = float(np.sqrt(np.mean(right**2))) if right.size else 0.0
    if sigma_l < 1e-12 or sigma_r < 1e-12:
        return 10.0, 0.0, sigma_l**2, sigma_r**2
    gamma_hat = sigma_l / sigma_r
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x**2))
    big_r = r_hat * (gamma_hat**3 + 1.0) * (gamma_hat + 1.0) / (gamma_hat**2 + 1.0) ** 2
    shape = float(_GAMMA_GRID[np.argmin(np.abs(_AGGD_RATIO - big_r))])
    const = np.sqrt(gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    mean = (sigma_r - sigma_l) * const * (gamma_fn(2.0 / shape) / gamma_fn(1.0 / shape))
    return shape, float(mean), sigma_l**2, sigma_r**2


def _patch_features(mscn: np.ndarray) -> np.ndarray:
    feats = list(_fit_ggd(mscn))
    pairs = (
        mscn[:, :-1] * mscn[:, 1:],  # horizontal
        mscn[:-1, :] * mscn[1:, :],  # vertical
        mscn[:-1, :-1] * mscn[1:, 1:],  # main diagonal
        mscn[:-1, 1:] * mscn[1:, :-1],  # anti diagonal
    )
    for prod in pairs:
        feats.extend(_fit_aggd(prod))
    return np.array(feats, dtype=np.float64)


def _image_features(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.shape[0] < NIQE_PATCH or plane.shape[1] < NIQE_PATCH:
        raise DimensionMismatchError(
            f"NIQE needs at least {NIQE_PATCH}x{NIQE_PATCH}, got {plane.shape}"
        )
    if float(np.ptp(plane)) == 0.0:
        raise DegenerateInputError("constant plane has no scene statistics")
    mscn = _mscn(plane)
    rows = plane.shape[0] // NIQE_PATCH
    cols = plane.shape[1] // NIQE_PATCH
    feats = [
        _patch_features(
            mscn[i * NIQE_PATCH : (i + 1) * NIQE_PATCH, j * NIQE_PATCH : (j + 1) * NIQE_PATCH]
        )
        for i in range(rows)
        for j in range(cols)
    ]
    return np.stack(feats)


@dataclass
class PristineModel:
    """Gaussian over NIQE-lite features fit on a pristine corpus."""

    mean: np.ndarray
    cov: np.ndarray
    dim: int = NIQE_FEATURES

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(self.dim)
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(self.dim, self.dim)


def _feature_gaussian(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = feats.mean(axis=0)
    if feats.shape[0] >= 2:
        cov = np.cov(feats, rowvar=False)
    else:
        cov = np.zeros((feats.shape[1], feats.shape[1]))
    return mean, cov


def fit_pristine(corpus: list[np.ndarray]) -> PristineModel:
    """Fit the reference feature Gaussian on a corpus of pristine luma planes."""
    if not corpus:
        raise ValueError("pristine corpus must be nonempty")
    feats = np.concatenate([_image_features(p) for p in corpus], axis=0)
    mean, cov = _feature_gaussian(feats)
    return PristineModel(mean, cov)


def niqe_lite(plane: np.ndarray, model: PristineModel) -> float:
    """Distance between the test image's feature Gaussian and the pristine model."""
    feats = _image_features(plane)
    mean_t, cov_t = _feature_gaussian(feats)
    diff = model.mean - mean_t
    pooled = (model.cov + cov_t) / 2.0
    ridge = _NIQE_RIDGE_SCALE * float(np.mean(np.diag(pooled))) + 1e-12
    pooled = pooled + ridge * np.eye(model.dim)
    dist2 = float(diff @ np.linalg.solve(pooled, diff))
    return float(np.sqrt(max(dist2, 0.0)))


def two_step_qa(ref: np.ndarray, test: np.ndarray, model: PristineModel) -> float:
    """MS-SSIM multiplied by the negative inverse of the NIQE-style score."""
    return ms_ssim(ref, test) * (-1.0 / niqe_lite(test, model))


def save_pristine(model: PristineModel, path) -> None:
    payload = {
        "format": "jpegqa-pristine",
        "version": 1,
        "dim": model.dim,
        "mean": model.mean.tolist(),
        "cov": model.cov.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_pristine(path) -> PristineModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "jpegqa-pristine":
        raise MetricError(f"{path}: not a pristine model file")
    dim = int(payload["dim"])
    try:
        return PristineModel(payload["mean"], payload["cov"], dim)
    except (ValueError, KeyError) as exc:
        raise MetricError(f"{path}: malformed pristine model: {exc}") from None


# ---------------------------------------------------------------------------
# Delta convention and metric registry
# ---------------------------------------------------------------------------

def metric_delta(
    metric: Callable[[np.ndarray, np.ndarray], float],
    img1: RasterImage,
    img2: RasterImage,
    ref: RasterImage,
) -> float:
    """metric(img2, ref) - metric(img1, ref), all on luma planes."""
    if not (img1.data.shape == img2.data.shape == ref.data.shape):
        raise DimensionMismatchError("metric_delta requires equal image dimensions")
    p1, p2, pr = to_grayscale(img1), to_grayscale(img2), to_grayscale(ref)
    return metric(p2, pr) - metric(p1, pr)


@dataclass
class MetricDef:
    name: str
    fn: Callable[[np.ndarray, np.ndarray], float]  # (test_plane, ref_plane)
    higher_is_better: bool
    needs_pristine: bool = False


def metric_registry(pristine: PristineModel | None = None) -> dict[str, MetricDef]:
    """Named (test, ref) -> score callables; NIQE-based entries need a model."""
    defs = {
        "mse": MetricDef("mse", lambda t, r: mse(t, r), False),
        "psnr": MetricDef("psnr", lambda t, r: psnr(t, r), True),
        "ssim": MetricDef("ssim", lambda t, r: ssim(t, r), True),
        "msssim": MetricDef("msssim", lambda t, r: ms_ssim(t, r), True),
    }
    if pristine is not None:
        defs["niqe"] = MetricDef(
            "niqe", lambda t, r: niqe_lite(t, pristine), False, True
        )
        defs["q2stepqa"] = MetricDef(
            "q2stepqa", lambda t, r: two_step_qa(r, t, pristine), True, True
        )
    return defs


def compute_all(
    ref: RasterImage, test: RasterImage, pristine: PristineModel | None = None
) -> list[MetricValue]:
    """Every applicable metric for one (reference, test) pair."""
    pr, pt = to_grayscale(ref), to_grayscale(test)
    out = []
    for mdef in metric_registry(pristine).values():
        try:
            value = mdef.fn(pt, pr)
        except DimensionMismatchError:
            continue  # image too small for this metric
        out.append(MetricValue(mdef.name, value, mdef.higher_is_better))
    return out
