"""Correlation of metric predictions against preference labels.

Classical metrics predict via the quality-delta convention
(metric(B, ref) - metric(A, ref)); the learned comparator predicts
p_sym - 0.5.  Both Pearson and Spearman are always reported, along with
the negated-prediction correlations to resolve orientation ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import DatasetManifest, ManifestError, PairRecord
from .image import RasterImage, crop_or_pad, load_image
from .metrics import MetricDef, metric_delta
from .rng import derive_seed


class CorrelationError(Exception):
    """Correlation undefined (constant or degenerate inputs)."""


class MissingScoreError(Exception):
    """An image in a pair has no single-stimulus score."""


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------

def _as_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.ndim != 1 or yv.ndim != 1 or xv.shape != yv.shape:
        raise CorrelationError("inputs must be equal-length vectors")
    if xv.size < 3:
        raise CorrelationError(f"need at least 3 samples, got {xv.size}")
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise CorrelationError("non-finite sample")
    if np.all(xv == xv[0]) or np.all(yv == yv[0]):
        raise CorrelationError("constant input has undefined correlation")
    return xv, yv


def pearson(x, y) -> float:
    """Sample Pearson correlation, clamped to [-1, 1]."""
    xv, yv = _as_vectors(x, y)
    xc = xv - xv.mean()
    yc = yv - yv.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return min(1.0, max(-1.0, r))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank span."""
    xv = np.asarray(x, dtype=np.float64)
    order = np.argsort(xv, kind="stable")
    sx = xv[order]
    ranks = np.empty(xv.size, dtype=np.float64)
    i = 0
    while i < xv.size:
        j = i
        while j + 1 < xv.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average-tied ranks."""
    xv, yv = _as_vectors(x, y)
    return pearson(average_ranks(xv), average_ranks(yv))


# ---------------------------------------------------------------------------
# Scored pairs and reports
# ---------------------------------------------------------------------------

@dataclass
class ScoredPair:
    record: PairRecord
    prediction: float
    label: float


@dataclass
class MetricCorrelation:
    name: str
    pearson: float
    spearman: float
    pearson_negated: float
    spearman_negated: float
    n_pairs: int


@dataclass
class CorrelationReport:
    dataset: str
    n_pairs: int
    entries: list[MetricCorrelation]


def correlate(name: str, scored: list[ScoredPair],
              center_labels: bool = True) -> MetricCorrelation:
    preds = [s.prediction for s in scored]
    labels = [s.label - 0.5 if center_labels else s.label for s in scored]
    try:
        pe = pearson(preds, labels)
        sp = spearman(preds, labels)
    except CorrelationError as exc:
        raise CorrelationError(f"{name}: {exc}") from None
    # negating every prediction negates both coefficients exactly
    return MetricCorrelation(name, pe, sp, -pe, -sp, len(scored))


def _labeled_records(manifest: DatasetManifest, split: str | None) -> list[PairRecord]:
    recs = [r for r in manifest.records if split is None or r.split == split]
    if not recs:
        raise ManifestError(f"no records in split {split!r}")
    for r in recs:
        if r.label is None:
            raise ManifestError(
                f"unlabeled pair ({r.ref_id}, {r.q_a}, {r.q_b}); run synth-labels first"
            )
    # fixed evaluation order regardless of manifest row order
    return sorted(recs, key=lambda r: (r.ref_id, r.q_a, r.q_b))


class _ImageCache:
    """Per-reference image cache; records arrive grouped by ref_id."""

    def __init__(self, root: Path):
        self.root = root
        self.ref_id: str | None = None
        self.images: dict[str, RasterImage] = {}

    def get(self, rec: PairRecord, rel: str) -> RasterImage:
        if rec.ref_id != self.ref_id:
            self.ref_id = rec.ref_id
            self.images.clear()
        if rel not in self.images:
            path = self.root / rel
            if not path.exists():
                raise ManifestError(f"missing image: {path}")
            self.images[rel] = load_image(path)
        return self.images[rel]


def score_metric_pairs(
    metric: MetricDef | Callable[[np.ndarray, np.ndarray], float],
    manifest: DatasetManifest,
    root: str | Path,
    split: str | None = "test",
) -> list[ScoredPair]:
    """Quality-delta predictions for every labeled pair in the split."""
    fn = metric.fn if isinstance(metric, MetricDef) else metric
    cache = _ImageCache(Path(root))
    scored = []
    for rec in _labeled_records(manifest, split):
        ref = cache.get(rec, rec.path_ref)
        img_a = cache.get(rec, rec.path_a)
        img_b = cache.get(rec, rec.path_b)
        pred = metric_delta(fn, img_a, img_b, ref)
        if not np.isfinite(pred):
            raise CorrelationError(
                f"non-finite prediction for pair ({rec.ref_id}, {rec.q_a}, {rec.q_b})"
            )
        scored.append(ScoredPair(rec, pred, rec.label))
    return scored


def score_model_pairs(
    model,
    manifest: DatasetManifest,
    root: str | Path,
    split: str | None = "test",
    crop_seed: int = 0,
) -> list[ScoredPair]:
    """Symmetrized comparator predictions, shifted so 0 = indistinguishable.

    Each pair is cropped/padded to the model input size with a seed derived
    from the pair identity, keeping A and B aligned and the evaluation
    independent of manifest ordering.
    """
    from .comparator import forward_symmetrized

    size = model.config.input_size
    cache = _ImageCache(Path(root))
    scored = []
    for rec in _labeled_records(manifest, split):
        seed = derive_seed(crop_seed, "eval-crop", rec.ref_id, rec.q_a, rec.q_b)
        img_a = crop_or_pad(cache.get(rec, rec.path_a), size, seed)
        img_b = crop_or_pad(cache.get(rec, rec.path_b), size, seed)
        pred = forward_symmetrized(model, img_a, img_b) - 0.5
        scored.append(ScoredPair(rec, pred, rec.label))
    return scored


def evaluate_manifest(
    manifest: DatasetManifest,
    root: str | Path,
    metrics: dict[str, MetricDef] | None = None,
    model=None,
    split: str | None = "test",
    tag: str = "",
    crop_seed: int = 0,
) -> CorrelationReport:
    """Correlation table over a labeled manifest split."""
    entries = []
    n_pairs = 0
    for name, mdef in (metrics or {}).items():
        scored = score_metric_pairs(mdef, manifest, root, split)
        entries.append(correlate(name, scored))
        n_pairs = len(scored)
    if model is not None:
        scored = score_model_pairs(model, manifest, root, split, crop_seed)
        entries.append(correlate("comparator", scored))
        n_pairs = len(scored)
    if not entries:
        raise ValueError("nothing to evaluate: no metrics and no model")
    return CorrelationReport(tag, n_pairs, entries)


def dmos_delta_eval(
    metric: MetricDef | Callable[[np.ndarray, np.ndarray], float],
    scores: dict[str, float],
    manifest: DatasetManifest,
    root: str | Path,
    split: str | None = None,
    name: str = "metric",
    tag: str = "dmos",
) -> CorrelationReport:
    """Score pairs against differences of single-stimulus opinion scores.

    ``scores`` maps manifest-relative image paths to mean opinion scores;
    the label proxy for a pair is scores[pathB] - scores[pathA].
    """
    fn = metric.fn if isinstance(metric, MetricDef) else metric
    cache = _ImageCache(Path(root))
    recs = [r for r in manifest.records if split is None or r.split == split]
    if not recs:
        raise ManifestError(f"no records in split {split!r}")
    recs.sort(key=lambda r: (r.ref_id, r.q_a, r.q_b))
    scored = []
    for rec in recs:
        for rel in (rec.path_a, rec.path_b):
            if rel not in scores:
                raise MissingScoreError(f"no opinion score for {rel}")
        ref = cache.get(rec, rec.path_ref)
        img_a = cache.get(rec, rec.path_a)
        img_b = cache.get(rec, rec.path_b)
        pred = metric_delta(fn, img_a, img_b, ref)
        scored.append(ScoredPair(rec, pred, scores[rec.path_b] - scores[rec.path_a]))
    entry = correlate(name, scored, center_labels=False)
    return CorrelationReport(tag, len(scored), [entry])


# ---------------------------------------------------------------------------
# Serialization and rendering
# ---------------------------------------------------------------------------

def report_to_dict(report: CorrelationReport) -> dict:
    return {
        "dataset": report.dataset,
        "pairs": report.n_pairs,
        "metrics": [
            {
                "name": e.name,
                "pearson": e.pearson,
                "spearman": e.spearman,
                "pearson_negated": e.pearson_negated,
                "spearman_negated": e.spearman_negated,
                "pairs": e.n_pairs,
            }
            for e in report.entries
        ],
    }


def report_from_dict(data: dict) -> CorrelationReport:
    entries = [
        MetricCorrelation(
            m["name"], m["pearson"], m["spearman"],
            m["pearson_negated"], m["spearman_negated"], m["pairs"],
        )
        for m in data["metrics"]
    ]
    return CorrelationReport(data.get("dataset", ""), data["pairs"], entries)


def render_markdown(report: CorrelationReport) -> str:
    """Comparison grid: one row per metric, correlation columns."""
    title = report.dataset or "evaluation"
    lines = [
        f"# Correlation report: {title}",
        "",
        f"{report.n_pairs} labeled pairs.",
        "",
        "| metric | pearson | spearman | pearson (neg) | spearman (neg) |",
        "| --- | ---: | ---: | ---: | ---: |",
    ]
    for e in report.entries:
        lines.append(
            f"| {e.name} | {e.pearson:+.4f} | {e.spearman:+.4f} "
            f"| {e.pearson_negated:+.4f} | {e.spearman_negated:+.4f} |"
        )
    lines.append("")
    return "\n".join(lines)
