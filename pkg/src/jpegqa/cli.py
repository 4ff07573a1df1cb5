"""Command-line entry point.

Subcommands wire the library into reproducible workflows: JSON on stdout
for machine consumption, markdown via ``report --format md`` for humans.
All randomness flows from explicit ``--seed`` flags (default 0); nothing
reads the clock.  Imports of numpy-backed modules happen inside the
subcommand handlers so ``--threads`` can pin BLAS thread counts first.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

log = logging.getLogger("jpegqa")

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be positive")
    if "numpy" in sys.modules:
        log.warning("numpy already imported; --threads may have no effect")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _sanitize(obj):
    """Strict-JSON payloads: non-finite floats become string sentinels."""
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "inf" if obj > 0 else "-inf" if obj < 0 else "nan"
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _emit(payload: dict, out: str | None = None) -> None:
    text = json.dumps(_sanitize(payload), indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _images_root(args) -> Path:
    if getattr(args, "images", None):
        return Path(args.images)
    return Path(args.manifest).resolve().parent


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_compress(args) -> None:
    from .codec import compress_detailed
    from .image import load_image, save_image

    img = load_image(args.in_path)
    result = compress_detailed(img, args.q)
    save_image(result.image, args.out, comment=f"jpegqa compress q={args.q}")
    _emit({
        "in": args.in_path,
        "out": args.out,
        "q": args.q,
        "nonzero_coeffs": result.nonzero_coeffs,
    })


def cmd_metrics(args) -> None:
    from .image import load_image
    from .metrics import compute_all, load_pristine

    ref = load_image(args.ref)
    test = load_image(args.test)
    pristine = load_pristine(args.pristine) if args.pristine else None
    values = compute_all(ref, test, pristine)
    _emit({
        "ref": args.ref,
        "test": args.test,
        "pristine": args.pristine,
        "metrics": {v.name: v.value for v in values},
    })


def cmd_gen_dataset(args) -> None:
    from dataclasses import asdict

    from .dataset import (dataset_stats, generate_pairs, materialize_images,
                          reference_texture, save_manifest)
    from .image import to_grayscale
    from .metrics import NIQE_PATCH, fit_pristine, save_pristine

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = generate_pairs(args.refs, args.split_frac, args.seed,
                              args.size, args.votes)
    manifest.provenance["cli"] = {
        "refs": args.refs, "size": args.size, "split_frac": args.split_frac,
        "votes": args.votes, "seed": args.seed, "skip_images": args.skip_images,
    }
    written = 0
    pristine_path = None
    if not args.skip_images:
        written = materialize_images(manifest, out)
        if args.size >= NIQE_PATCH:
            ref_ids = list(dict.fromkeys(r.ref_id for r in manifest.records))[:8]
            corpus = [to_grayscale(reference_texture(manifest, rid))
                      for rid in ref_ids]
            pristine_path = out / "pristine.json"
            save_pristine(fit_pristine(corpus), pristine_path)
        else:
            log.warning("size %d below %d: skipping pristine model fit",
                        args.size, NIQE_PATCH)
    manifest_path = out / "manifest.csv"
    save_manifest(manifest, manifest_path)
    _emit({
        "manifest": str(manifest_path),
        "pristine": str(pristine_path) if pristine_path else None,
        "images_written": written,
        "stats": asdict(dataset_stats(manifest)),
    })


def cmd_synth_labels(args) -> None:
    from .dataset import (DEFAULT_TAU, RaterOracle, load_manifest,
                          save_manifest, synth_labels)

    manifest = load_manifest(args.manifest)
    tau = DEFAULT_TAU if args.tau is None else args.tau
    oracle = RaterOracle(temperature=tau, votes=args.votes)
    labeled = synth_labels(manifest, _images_root(args), oracle, args.seed)
    out = args.out or args.manifest
    save_manifest(labeled, out)
    _emit({"manifest": str(out), "pairs": len(labeled.records),
           "tau": tau, "votes": args.votes, "seed": args.seed})


def cmd_train(args) -> None:
    from .comparator import ComparatorConfig, TrainConfig, build, save_model, train
    from .dataset import ManifestError, load_manifest
    from .image import load_image

    manifest = load_manifest(args.manifest)
    root = _images_root(args)
    pairs = [r for r in manifest.records if r.split == "train"]
    unlabeled = sum(1 for r in pairs if r.label is None)
    if unlabeled:
        raise ManifestError(
            f"{unlabeled} train pairs are unlabeled; run synth-labels first"
        )
    cache: dict[str, object] = {}

    def load_pair(rec):
        for rel in (rec.path_a, rec.path_b):
            if rel not in cache:
                cache[rel] = load_image(root / rel)
        return cache[rec.path_a], cache[rec.path_b]

    config = ComparatorConfig(
        backbone_blocks=args.blocks,
        backbone_base_channels=args.base_channels,
        input_size=args.input_size,
        seed=args.seed,
    )
    model = build(config)
    hyper = TrainConfig(epochs=args.epochs, steps_per_epoch=args.steps,
                        batch_size=args.batch, lr=args.lr)
    log.info("training on %d pairs: %d epochs x %d steps, batch %d, lr %g",
             len(pairs), hyper.epochs, hyper.steps_per_epoch,
             hyper.batch_size, hyper.lr)
    result = train(model, pairs, load_pair, hyper, args.seed)
    provenance = {
        "manifest": str(args.manifest), "epochs": args.epochs,
        "steps_per_epoch": args.steps, "batch": args.batch, "lr": args.lr,
        "seed": args.seed,
    }
    save_model(model, args.out, provenance)
    _emit({"out": args.out, "steps": result.steps,
           "epoch_losses": result.epoch_losses})


def cmd_compare(args) -> None:
    from .comparator import forward, forward_symmetrized, load_model
    from .image import crop_or_pad, load_image

    model = load_model(args.model)
    load_image(args.ref)  # the learned comparator is reference-free
    size = model.config.input_size
    img_a = crop_or_pad(load_image(args.a), size, args.seed)
    img_b = crop_or_pad(load_image(args.b), size, args.seed)
    p = forward(model, img_a, img_b)
    p_sym = forward_symmetrized(model, img_a, img_b) if args.symmetrized else None
    _emit({"model": args.model, "ref": args.ref, "a": args.a, "b": args.b,
           "p": p, "p_sym": p_sym})


def cmd_rd_tune(args) -> None:
    from .comparator import load_model, rd_tune
    from .image import load_image

    model = load_model(args.model)
    ref = load_image(args.in_path)
    result = rd_tune(model, ref, args.tol, args.q_hi, args.seed)
    _emit({
        "q": result.q,
        "preference": result.preference,
        "flag": not result.found,  # true: no probed quality met the tolerance
        "probes": result.probes,
        "tol": args.tol,
        "q_hi": args.q_hi,
    })


def cmd_eval(args) -> None:
    from .comparator import load_model
    from .dataset import load_manifest
    from .evaluation import evaluate_manifest, report_to_dict
    from .metrics import load_pristine, metric_registry

    manifest = load_manifest(args.manifest)
    pristine = load_pristine(args.pristine) if args.pristine else None
    registry = metric_registry(pristine)
    names = [n for n in (args.metrics or "").split(",") if n]
    unknown = [n for n in names if n not in registry]
    if unknown:
        raise ValueError(
            f"unknown metrics {unknown}; available: {sorted(registry)}"
            + ("" if pristine else " (niqe/q2stepqa need --pristine)")
        )
    model = load_model(args.model) if args.model else None
    if not names and model is None:
        raise ValueError("nothing to evaluate: pass --metrics and/or --model")
    split = None if args.split == "all" else args.split
    report = evaluate_manifest(
        manifest, _images_root(args), {n: registry[n] for n in names},
        model, split, args.tag or Path(args.manifest).stem, args.seed,
    )
    payload = report_to_dict(report)
    payload["provenance"] = {
        "manifest": str(args.manifest), "metrics": names,
        "model": args.model, "pristine": args.pristine,
        "split": args.split, "seed": args.seed,
    }
    _emit(payload, args.out)


def cmd_report(args) -> None:
    from .evaluation import render_markdown, report_from_dict, report_to_dict

    data = json.loads(Path(args.in_path).read_text())
    report = report_from_dict(data)
    if args.format == "md":
        text = render_markdown(report)
    else:
        text = json.dumps(_sanitize(report_to_dict(report)),
                          indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jpegqa",
        description="Perceptual quality toolkit for simulated JPEG compression.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP thread count (default: library choice)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="JPEG-style degrade an image")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--q", type=int, required=True, help="quality factor 1..100")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("metrics", help="all quality metrics for one pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--pristine", default=None,
                   help="pristine model JSON enabling niqe/q2stepqa")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gen-dataset", help="plan and materialize a pair dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--refs", type=int, required=True, help="reference count")
    p.add_argument("--size", type=int, default=400, help="reference side length")
    p.add_argument("--split-frac", type=float, default=0.96)
    p.add_argument("--votes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-images", action="store_true",
                   help="write the manifest only (no textures, no pristine fit)")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("synth-labels", help="label pairs with simulated raters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", default=None,
                   help="image root (default: manifest directory)")
    p.add_argument("--out", default=None,
                   help="labeled manifest path (default: overwrite input)")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--votes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_labels)

    p = sub.add_parser("train", help="train the preference comparator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=400)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=16)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="preference of one image pair")
    p.add_argument("--model", required=True)
    p.add_argument("--ref", required=True,
                   help="reference image (checked readable; model is reference-free)")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--symmetrized", action="store_true",
                   help="also compute the order-insensitive p_sym")
    p.add_argument("--seed", type=int, default=0, help="crop seed")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rd-tune", help="lowest quality indistinguishable from q_hi")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--q-hi", type=int, default=99)
    p.add_argument("--seed", type=int, default=0, help="crop seed")
    p.set_defaults(func=cmd_rd_tune)

    p = sub.add_parser("eval", help="correlate metrics/model against labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--metrics", default="",
                   help="comma-separated metric names, e.g. psnr,msssim")
    p.add_argument("--model", default=None, help="comparator checkpoint")
    p.add_argument("--pristine", default=None)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--tag", default=None)
    p.add_argument("--seed", type=int, default=0, help="evaluation crop seed")
    p.add_argument("--out", default=None, help="write report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render an eval report")
    p.add_argument("--in", dest="in_path", required=True, help="report JSON")
    p.add_argument("--format", choices=("md", "json"), default="md")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_threads(args.threads)
        args.func(args)
    except Exception as exc:  # single-line machine-parsable error contract
        log.debug("unhandled error", exc_info=True)
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}
        ) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
