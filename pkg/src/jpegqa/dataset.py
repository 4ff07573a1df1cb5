"""Pairwise compression-quality dataset construction.

Pair generation is symbolic: a manifest is planned from reference ids and
seeds alone, so paper-scale counts can be computed without touching pixels.
Materialization synthesizes the reference textures and their compressed
versions on disk; a simulated rater pool then fills in preference labels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

from .codec import compress
from .image import RasterImage, load_image, save_image, to_grayscale
from .metrics import ms_ssim
from .rng import SplitMix64, derive_seed
from .synth import synth_texture

GENERATOR_VERSION = "jpegqa-dataset/1"
DEFAULT_VOTES = 32
# Logistic temperature for the simulated raters, in MS-SSIM units.  Chosen
# so pairs a few quality steps apart land near 0.5 while large quality gaps
# saturate; see RaterOracle.
DEFAULT_TAU = 0.004

MANIFEST_FIELDS = ("ref_id", "qA", "qB", "label", "votes", "split",
                   "pathA", "pathB", "pathRef")
_SPLITS = ("train", "test")


class ManifestError(Exception):
    """Malformed, inconsistent, or unloadable manifest data."""


@dataclass
class PairRecord:
    ref_id: str
    q_a: int
    q_b: int
    label: float | None  # preference proportion for image B; None = unrated
    votes: int
    split: str
    path_a: str
    path_b: str
    path_ref: str
    category: str | None = None  # reserved; never emitted by the generator


@dataclass
class DatasetManifest:
    records: list[PairRecord]
    provenance: dict = field(default_factory=dict)


@dataclass
class DatasetStats:
    n_refs: int
    n_train_refs: int
    n_test_refs: int
    n_images: int  # compressed versions only, references not counted
    n_pairs: int
    n_train_pairs: int
    n_test_pairs: int
    n_ratings: int


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def default_ref_ids(count: int) -> list[str]:
    return [f"ref{i:05d}" for i in range(count)]


def _draw_qualities(rng: SplitMix64, count: int) -> list[int]:
    # uniform on [10, 100], resampling collisions within the reference
    qs: list[int] = []
    while len(qs) < count:
        q = 10 + rng.bounded(91)
        if q not in qs:
            qs.append(q)
    return qs


def generate_pairs(
    ref_ids: Sequence[str] | int,
    split_fraction: float = 0.96,
    seed: int = 0,
    image_size: int = 400,
    votes_per_pair: int = DEFAULT_VOTES,
) -> DatasetManifest:
    """Plan a pairwise dataset: 2 versions / 1 pair per train reference,
    4 versions / all 6 pairs per test reference.

    ``ref_ids`` may be an integer count; ids are then generated.  The split
    assigns the first round(split_fraction * n) references to train.  Labels
    stay unset until ``synth_labels``; ``votes`` records the planned rater
    count so rating totals are known before any image exists.
    """
    if isinstance(ref_ids, int):
        ref_ids = default_ref_ids(ref_ids)
    if not ref_ids:
        raise ValueError("ref_ids must be nonempty")
    if len(set(ref_ids)) != len(ref_ids):
        raise ValueError("ref_ids must be unique")
    if not 0.0 < split_fraction < 1.0:
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    # int(x + 0.5) rather than round(): round-half-even would send 96.5 to 96
    n_train = min(int(split_fraction * len(ref_ids) + 0.5), len(ref_ids))
    records: list[PairRecord] = []
    for pos, ref_id in enumerate(ref_ids):
        split = "train" if pos < n_train else "test"
        rng = SplitMix64(derive_seed(seed, "qualities", ref_id))
        qs = _draw_qualities(rng, 2 if split == "train" else 4)
        for qa, qb in combinations(qs, 2):
            records.append(PairRecord(
                ref_id=ref_id, q_a=qa, q_b=qb, label=None, votes=votes_per_pair,
                split=split, path_a=f"{ref_id}/q{qa}.ppm",
                path_b=f"{ref_id}/q{qb}.ppm", path_ref=f"{ref_id}/ref.ppm",
            ))
    provenance = {
        "generator": GENERATOR_VERSION,
        "seed": seed,
        "n_refs": len(ref_ids),
        "split_fraction": split_fraction,
        "image_size": image_size,
        "votes_per_pair": votes_per_pair,
    }
    return DatasetManifest(records, provenance)


def dataset_stats(manifest: DatasetManifest) -> DatasetStats:
    refs: dict[str, str] = {}
    images: set[tuple[str, int]] = set()
    n_train_pairs = n_test_pairs = n_ratings = 0
    for rec in manifest.records:
        refs[rec.ref_id] = rec.split
        images.add((rec.ref_id, rec.q_a))
        images.add((rec.ref_id, rec.q_b))
        if rec.split == "train":
            n_train_pairs += 1
        else:
            n_test_pairs += 1
        n_ratings += rec.votes
    n_train_refs = sum(1 for s in refs.values() if s == "train")
    return DatasetStats(
        n_refs=len(refs),
        n_train_refs=n_train_refs,
        n_test_refs=len(refs) - n_train_refs,
        n_images=len(images),
        n_pairs=len(manifest.records),
        n_train_pairs=n_train_pairs,
        n_test_pairs=n_test_pairs,
        n_ratings=n_ratings,
    )


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------

def reference_texture(manifest: DatasetManifest, ref_id: str) -> RasterImage:
    size = int(manifest.provenance["image_size"])
    seed = int(manifest.provenance["seed"])
    return synth_texture(size, size, derive_seed(seed, "texture", ref_id))


def materialize_images(manifest: DatasetManifest, root: str | Path) -> int:
    """Write every referenced PPM under ``root``; returns files written.

    Regeneration is byte-identical: textures, compression, and the PPM
    encoder are all deterministic functions of the manifest provenance.
    """
    root = Path(root)
    versions: dict[str, set[int]] = {}
    for rec in manifest.records:
        versions.setdefault(rec.ref_id, set()).update((rec.q_a, rec.q_b))
    written = 0
    for ref_id, qs in versions.items():
        ref = reference_texture(manifest, ref_id)
        ref_dir = root / ref_id
        ref_dir.mkdir(parents=True, exist_ok=True)
        save_image(ref, ref_dir / "ref.ppm")
        written += 1
        for q in sorted(qs):
            save_image(compress(ref, q), ref_dir / f"q{q}.ppm")
            written += 1
    return written


# ---------------------------------------------------------------------------
# Simulated raters
# ---------------------------------------------------------------------------

def _default_quality(test: RasterImage, ref: RasterImage) -> float:
    return ms_ssim(to_grayscale(test), to_grayscale(ref))


@dataclass
class RaterOracle:
    """Logistic forced-choice rater pool.

    Each rater prefers image B with probability sigmoid(d / temperature)
    where d = quality_fn(B, ref) - quality_fn(A, ref); unsure raters are
    modeled by the logistic noise itself.
    """
    quality_fn: Callable[[RasterImage, RasterImage], float] = _default_quality
    temperature: float = DEFAULT_TAU
    votes: int = DEFAULT_VOTES

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.votes < 1:
            raise ValueError("votes must be positive")


def rater_probability(d: float, temperature: float) -> float:
    """P(a rater prefers B) for quality delta d; exactly 0.5 at d = 0."""
    z = d / temperature
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def simulate_votes(p: float, votes: int, rng: SplitMix64) -> int:
    """Count of ``votes`` independent raters preferring B at probability p."""
    return sum(1 for _ in range(votes) if rng.uniform() < p)


def vote_seed(seed: int, rec: PairRecord) -> int:
    return derive_seed(seed, "votes", rec.ref_id, rec.q_a, rec.q_b)


def synth_labels(
    manifest: DatasetManifest,
    root: str | Path,
    oracle: RaterOracle | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Label every pair with the simulated rater pool; returns a new manifest.

    Requires materialized images.  Votes draw from per-pair seeded streams,
    so labeling is independent of record order and reruns bit-identically.
    """
    if oracle is None:
        oracle = RaterOracle()
    root = Path(root)
    loaded: dict[str, RasterImage] = {}

    def image_at(rel: str) -> RasterImage:
        if rel not in loaded:
            path = root / rel
            if not path.exists():
                raise ManifestError(f"missing image: {path}")
            loaded[rel] = load_image(path)
        return loaded[rel]

    scores: dict[str, float] = {}

    def quality(rel: str, ref_rel: str) -> float:
        if rel not in scores:
            scores[rel] = oracle.quality_fn(image_at(rel), image_at(ref_rel))
        return scores[rel]

    records = []
    for rec in manifest.records:
        d = quality(rec.path_b, rec.path_ref) - quality(rec.path_a, rec.path_ref)
        p = rater_probability(d, oracle.temperature)
        rng = SplitMix64(vote_seed(seed, rec))
        count = simulate_votes(p, oracle.votes, rng)
        records.append(replace(rec, label=count / oracle.votes, votes=oracle.votes))
        # drop pixel data once a reference's pairs are done to bound memory
        if len(loaded) > 64:
            loaded.clear()
    provenance = dict(manifest.provenance)
    provenance["oracle"] = {
        "quality_fn": getattr(oracle.quality_fn, "__name__", "custom"),
        "temperature": oracle.temperature,
        "votes": oracle.votes,
        "label_seed": seed,
    }
    return DatasetManifest(records, provenance)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _format_label(label: float | None) -> str:
    return "" if label is None else repr(label)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """CSV with the fixed 9-column header plus a .meta.json provenance sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for rec in manifest.records:
            writer.writerow([
                rec.ref_id, rec.q_a, rec.q_b, _format_label(rec.label),
                rec.votes, rec.split, rec.path_a, rec.path_b, rec.path_ref,
            ])
    meta = Path(str(path) + ".meta.json")
    meta.write_text(json.dumps(manifest.provenance, sort_keys=True, indent=2) + "\n")


def _parse_record(row: list[str], where: str) -> PairRecord:
    if len(row) not in (9, 10):
        raise ManifestError(f"{where}: expected 9 fields, got {len(row)}")
    ref_id, qa_s, qb_s, label_s, votes_s, split, path_a, path_b, path_ref = row[:9]
    try:
        qa, qb = int(qa_s), int(qb_s)
        votes = int(votes_s)
        label = None if label_s == "" else float(label_s)
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from None
    if not (10 <= qa <= 100 and 10 <= qb <= 100):
        raise ManifestError(f"{where}: quality factors must be in [10, 100]")
    if qa == qb:
        raise ManifestError(f"{where}: qA and qB must differ")
    if label is not None and not 0.0 <= label <= 1.0:
        raise ManifestError(f"{where}: label {label} outside [0, 1]")
    if votes < 0:
        raise ManifestError(f"{where}: negative votes")
    if split not in _SPLITS:
        raise ManifestError(f"{where}: unknown split {split!r}")
    category = row[9] or None if len(row) == 10 else None
    return PairRecord(ref_id, qa, qb, label, votes, split,
                      path_a, path_b, path_ref, category)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file") from None
        if tuple(header[:9]) != MANIFEST_FIELDS or header[9:] not in ([], ["category"]):
            raise ManifestError(f"{path}: bad header {header!r}")
        records = []
        seen: set[tuple[str, int, int]] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            rec = _parse_record(row, f"{path}:{line_no}")
            key = (rec.ref_id, rec.q_a, rec.q_b)
            if key in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate pair {key}")
            seen.add(key)
            records.append(rec)
    meta = Path(str(path) + ".meta.json")
    provenance = json.loads(meta.read_text()) if meta.exists() else {}
    return DatasetManifest(records, provenance)
