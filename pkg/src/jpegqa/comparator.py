"""Pairwise preference comparator: shared CNN branches, bottleneck,
1x1-conv comparator head, plus training and the rate-distortion tuner.

The network maps two equally sized images to the predicted fraction of
raters preferring the SECOND one; 0.5 means indistinguishable quality.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .codec import compress
from .image import RasterImage, crop_or_pad
from .rng import SplitMix64, derive_seed


@dataclass
class ComparatorConfig:
    backbone_blocks: int = 4
    backbone_base_channels: int = 16
    bottleneck_maps: int = 2
    comparator_hidden_maps: int = 256
    input_size: int = 400
    seed: int = 0

    def __post_init__(self):
        for name in ("backbone_blocks", "backbone_base_channels", "bottleneck_maps",
                     "comparator_hidden_maps", "input_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainConfig:
    epochs: int = 15
    steps_per_epoch: int = 150
    batch_size: int = 64
    lr: float = 0.001


class ComparatorModel:
    """Both branches reference the same backbone/bottleneck Parameter objects."""

    def __init__(self, config: ComparatorConfig, params: dict[str, nn.Parameter]):
        self.config = config
        self.params = params

    def parameters(self) -> list[nn.Parameter]:
        return list(self.params.values())

    def branch_features(self, x: nn.Tensor) -> nn.Tensor:
        """Shared backbone (3x3 stride-2 conv + ReLU blocks) then 1x1 bottleneck."""
        h = x
        for i in range(self.config.backbone_blocks):
            h = nn.conv2d(h, self.params[f"backbone.{i}.w"],
                          self.params[f"backbone.{i}.b"], stride=2, padding="same")
            h = nn.relu(h)
        return nn.conv2d(h, self.params["bottleneck.w"], self.params["bottleneck.b"])

    def compare(self, xa: nn.Tensor, xb: nn.Tensor) -> nn.Tensor:
        """Batched preference for the second input; returns (N, 1) in (0, 1).

        Both branches run as one stacked batch through the shared backbone;
        pair_concat then restores the per-pair channel concatenation with
        the first argument's maps first.
        """
        f = self.branch_features(nn.stack_batch(xa, xb))
        h = nn.pair_concat(f)
        h = nn.relu(nn.conv2d(h, self.params["comparator.0.w"], self.params["comparator.0.b"]))
        h = nn.conv2d(h, self.params["comparator.1.w"], self.params["comparator.1.b"])
        h = nn.global_avg_pool(h)
        h = nn.affine(h, self.params["head.w"], self.params["head.b"])
        return nn.sigmoid(h)


_RELU_GAIN = float(np.sqrt(2.0))


def build(config: ComparatorConfig) -> ComparatorModel:
    """Seeded-deterministic construction; equal seeds give identical weights.

    ReLU-followed convolutions use He gain so activation variance survives
    the depth; linear layers use plain fan-in scaling.
    """
    params: dict[str, nn.Parameter] = {}

    def add(name: str, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> None:
        rng = SplitMix64(derive_seed(config.seed, "init", name))
        params[name] = nn.Parameter(nn.uniform_fan_in(shape, fan_in, rng, gain), name)

    def add_zeros(name: str, shape: tuple[int, ...]) -> None:
        params[name] = nn.Parameter(np.zeros(shape, dtype=np.float32), name)

    cin = 3
    for i in range(config.backbone_blocks):
        cout = config.backbone_base_channels * 2**i
        add(f"backbone.{i}.w", (3, 3, cin, cout), 9 * cin, _RELU_GAIN)
        add_zeros(f"backbone.{i}.b", (cout,))
        cin = cout
    add("bottleneck.w", (1, 1, cin, config.bottleneck_maps), cin)
    add_zeros("bottleneck.b", (config.bottleneck_maps,))
    cat = 2 * config.bottleneck_maps
    add("comparator.0.w", (1, 1, cat, config.comparator_hidden_maps), cat, _RELU_GAIN)
    add_zeros("comparator.0.b", (config.comparator_hidden_maps,))
    add("comparator.1.w", (1, 1, config.comparator_hidden_maps, 1),
        config.comparator_hidden_maps)
    add_zeros("comparator.1.b", (1,))
    add("head.w", (1, 1), 1)
    add_zeros("head.b", (1,))
    return ComparatorModel(config, params)


def to_input(img: RasterImage) -> np.ndarray:
    """uint8 raster -> centered float32 features in [-0.5, 0.5]."""
    data = img.data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    return data.astype(np.float32) / 255.0 - 0.5


def _check_input(model: ComparatorModel, img: RasterImage) -> None:
    size = model.config.input_size
    if img.height != size or img.width != size:
        raise ValueError(
            f"comparator input must be {size}x{size}, got {img.width}x{img.height}"
        )


def forward(model: ComparatorModel, img_a: RasterImage, img_b: RasterImage) -> float:
    """Predicted preference for img_b (the second argument)."""
    _check_input(model, img_a)
    _check_input(model, img_b)
    with nn.no_grad():
        xa = nn.Tensor(to_input(img_a)[None])
        xb = nn.Tensor(to_input(img_b)[None])
        p = model.compare(xa, xb)
    return float(p.data[0, 0])


def forward_symmetrized(model: ComparatorModel, img_a: RasterImage,
                        img_b: RasterImage) -> float:
    """Order-insensitive preference: (p(a,b) + 1 - p(b,a)) / 2.

    Arguments are canonicalized by raster bytes so that the swapped call
    returns the exact floating-point complement.
    """
    if img_a.data.tobytes() <= img_b.data.tobytes():
        p_ab = forward(model, img_a, img_b)
        p_ba = forward(model, img_b, img_a)
        return (p_ab + (1.0 - p_ba)) / 2.0
    return 1.0 - forward_symmetrized(model, img_b, img_a)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


def train(
    model: ComparatorModel,
    pairs: list,
    load_pair,
    hyper: TrainConfig,
    seed: int,
) -> TrainResult:
    """SGD over preference pairs with Adam; deterministic per seed.

    ``pairs`` is any indexable of records with a ``label`` attribute;
    ``load_pair(record)`` must return (RasterImage, RasterImage).  Each
    sampled pair is cropped/padded with a shared per-sample seed so the two
    images stay spatially aligned.  No weight decay or dropout anywhere.
    """
    if not pairs:
        raise ValueError("training requires a nonempty pair list")
    size = model.config.input_size
    opt = nn.Adam(model.parameters(), lr=hyper.lr)
    result = TrainResult()
    step_global = 0
    for epoch in range(hyper.epochs):
        losses = []
        for _ in range(hyper.steps_per_epoch):
            rng = SplitMix64(derive_seed(seed, "batch", step_global))
            idx = [rng.bounded(len(pairs)) for _ in range(hyper.batch_size)]
            xa = np.empty((len(idx), size, size, 3), dtype=np.float32)
            xb = np.empty_like(xa)
            labels = np.empty((len(idx), 1), dtype=np.float32)
            for j, i in enumerate(idx):
                rec = pairs[i]
                img_a, img_b = load_pair(rec)
                crop_seed = derive_seed(seed, "crop", step_global, j)
                xa[j] = to_input(crop_or_pad(img_a, size, crop_seed))
                xb[j] = to_input(crop_or_pad(img_b, size, crop_seed))
                labels[j, 0] = rec.label
            pred = model.compare(nn.Tensor(xa), nn.Tensor(xb))
            loss = nn.bce_soft(pred, labels)
            opt.zero_grad()
            nn.backward(loss)
            opt.step()
            losses.append(loss.item())
            step_global += 1
        result.epoch_losses.append(float(np.mean(losses)))
    result.steps = step_global
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(model: ComparatorModel, path: str | Path,
               provenance: dict | None = None) -> None:
    config = asdict(model.config)
    if provenance:
        config["provenance"] = provenance
    nn.save_checkpoint(path, {k: p.data for k, p in model.params.items()}, config)


def load_model(path: str | Path) -> ComparatorModel:
    params, config_dict = nn.load_checkpoint(path)
    config_dict = dict(config_dict)
    config_dict.pop("provenance", None)
    config = ComparatorConfig(**config_dict)
    model = build(config)
    for name, p in model.params.items():
        if name not in params:
            raise ValueError(f"{path}: missing parameter {name}")
        if params[name].shape != p.data.shape:
            raise ValueError(
                f"{path}: parameter {name} has shape {params[name].shape}, "
                f"expected {p.data.shape}"
            )
        p.data = params[name]
    return model


# ---------------------------------------------------------------------------
# Rate-distortion tuning
# ---------------------------------------------------------------------------

@dataclass
class RdTuneResult:
    q: int
    preference: float
    found: bool  # False means no probed Q met the tolerance
    probes: int


def rd_tune(model: ComparatorModel, ref: RasterImage, tol: float,
            q_hi: int = 99, crop_seed: int = 0) -> RdTuneResult:
    """Binary search for the lowest Q indistinguishable from the q_hi anchor.

    Probes g(q) = p_sym(compress(ref, q_hi), compress(ref, q)) on a fixed
    aligned crop over q in [10, q_hi - 1] and returns the smallest probed q
    with |g(q) - 0.5| <= tol, at most ceil(log2(90)) = 7 probes.  If no
    probed quality qualifies the anchor quality itself is returned with
    found=False (its self-preference is 0.5 by construction).
    """
    if not 0.0 < tol < 0.5:
        raise ValueError(f"tol must be in (0, 0.5), got {tol}")
    if not 11 <= q_hi <= 100:
        raise ValueError(f"q_hi must be in [11, 100], got {q_hi}")
    size = model.config.input_size
    anchor = crop_or_pad(compress(ref, q_hi), size, crop_seed)

    def g(q: int) -> float:
        probe = crop_or_pad(compress(ref, q), size, crop_seed)
        return forward_symmetrized(model, anchor, probe)

    lo, hi = 10, q_hi - 1
    best_q, best_pref = None, None
    probes = 0
    while lo <= hi:
        mid = (lo + hi) // 2
        pref = g(mid)
        probes += 1
        if abs(pref - 0.5) <= tol:
            best_q, best_pref = mid, pref
            hi = mid - 1
        else:
            lo = mid + 1
    if best_q is None:
        return RdTuneResult(q_hi, 0.5, False, probes)
    return RdTuneResult(best_q, best_pref, True, probes)
