"""Command-line entry points.

Every subcommand prints a short human summary to stdout, writes machine
artifacts next to its outputs (including a resolved-config echo), and maps
domain errors to a single "error: ..." line on stderr with exit code 2.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audit import (
    DEFAULT_SWEEP_SIGMAS,
    Thresholds,
    build_index,
    classify,
    grid_search_thresholds,
    memorization_score,
    sensitivity_sweep,
)
from .bench import runtime_benchmark
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .errors import MemauditError, ValidationError
from .evaluate import LABELS, export_histograms, macro_f1, precision_recall_f1, silhouette
from .evaluate import ConfusionTable
from .images import Image, apply_augmentation, load_image, sample_augmentation, save_tensor
from .manifest import ManifestEntry, load_images, load_labels, load_manifest, save_pairs
from .metrics import GROUND_TRUTH_SSIM, SsimConfig, fsim
from .metrics import ssim as ssim_fn
from .phantoms import (
    ClassCounts,
    PairRecord,
    curate_test_set,
    load_pair_records,
    save_pair_records,
    synthesize_corpus,
)
from .register import registered_ssim
from .training import TrainConfig, train
from .util import resolve_workers, rng_for, sha256_file


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors, exit code 2
        self.exit(2, f"{self.prog}: error: {message}\n")


def _write_config(path: Path, command: str, args: argparse.Namespace) -> None:
    d = {"command": command}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        d[k] = str(v) if isinstance(v, Path) else v
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(d, indent=1, default=str) + "\n")


def _load_corpus(manifest_path: Path) -> tuple[list[ManifestEntry], dict[str, Image]]:
    entries = load_manifest(manifest_path)
    return entries, load_images(entries, manifest_path.parent)


# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    counts = ClassCounts(duplicate=args.dup, similar=args.sim, different=args.diff)
    paths = synthesize_corpus(args.out, args.n_real, counts, args.seed, size=args.size)
    print(f"wrote {args.n_real} real + {args.n_real * counts.total} synthetic "
          f"images to {paths.out_dir}")
    if not args.no_curate:
        real_entries = load_manifest(paths.real_manifest)
        synth_entries = load_manifest(paths.synth_manifest)
        images = load_images(real_entries + synth_entries, paths.out_dir)
        labels = load_labels(paths.labels)
        records = curate_test_set(
            real_entries, synth_entries, labels, images,
            k_top=args.k_top, k_rand=args.k_rand, seed=args.seed,
        )
        pair_path = paths.out_dir / "test_pairs.jsonl"
        save_pair_records(records, pair_path)
        print(f"curated {len(records)} test pairs -> {pair_path}")
    _write_config(Path(args.out) / "gen_data_config.json", "gen-data", args)
    return 0


def cmd_ssim(args) -> int:
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    cfg = SsimConfig(luminance_term_enabled=not args.no_luminance)
    if args.register:
        score, t = registered_ssim(a, b, cfg)
        print(f"{score:.6f}")
        print(f"rot_deg={t.rotation_deg:.2f} tx={t.tx:.2f} ty={t.ty:.2f}")
    else:
        print(f"{ssim_fn(a, b, cfg):.6f}")
    return 0


def cmd_fsim(args) -> int:
    a = load_image(args.image_a)
    b = load_image(args.image_b)
    print(f"{fsim(a, b):.6f}")
    return 0


def _split_by_subject(entries: list[ManifestEntry], val_fraction: float,
                      seed: int) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Subject-level split: a real image and all its children land together."""
    real_ids = [e.id for e in entries if e.role == "real"]
    if not real_ids:
        raise ValidationError("manifest has no real images to split")
    if not 0.0 < val_fraction < 1.0:
        raise ValidationError(f"val-fraction must be in (0, 1), got {val_fraction}")
    order = rng_for(seed, "subject-split").permutation(len(real_ids))
    n_val = max(1, int(round(val_fraction * len(real_ids))))
    if n_val >= len(real_ids):
        raise ValidationError(
            f"val-fraction {val_fraction} leaves no training subjects "
            f"({n_val} of {len(real_ids)} reals in validation)"
        )
    val_set = {real_ids[i] for i in order[:n_val]}

    def bucket(e: ManifestEntry) -> bool:
        owner = e.id if e.role == "real" else e.source_base_id
        return owner in val_set

    val = [e for e in entries if bucket(e)]
    tr = [e for e in entries if not bucket(e)]
    return tr, val


def cmd_train(args) -> int:
    if args.manifest is not None:
        entries = load_manifest(args.manifest)
        train_entries, val_entries = _split_by_subject(entries, args.val_fraction, args.seed)
        base = args.manifest.parent
        images = load_images(entries, base)
    else:
        if args.train_manifest is None or args.val_manifest is None:
            raise ValidationError(
                "provide either --manifest with --val-fraction, or both "
                "--train-manifest and --val-manifest"
            )
        train_entries = load_manifest(args.train_manifest)
        val_entries = load_manifest(args.val_manifest)
        images = {}
        images.update(load_images(train_entries, args.train_manifest.parent))
        images.update(load_images(val_entries, args.val_manifest.parent))

    train_cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        lr_schedule=args.lr_schedule, weight_decay=args.weight_decay,
        seed=args.seed, pool_factor=args.pool_factor, aug_prob=args.aug_prob,
        pairs_per_epoch=args.pairs_per_epoch, ssim_stratification_bins=args.bins,
        val_pairs=args.val_pairs,
    )
    encoder_cfg = EncoderConfig(embedding_dim=args.embedding_dim, input_size=args.input_size)
    workers = resolve_workers(args.workers)

    def on_epoch(epoch: int, mean_loss: float, val_mae: float) -> None:
        print(f"epoch {epoch + 1}/{train_cfg.epochs} "
              f"loss {mean_loss:.5f} val_mae {val_mae:.5f}", flush=True)

    started = time.perf_counter()
    result = train(train_entries, val_entries, train_cfg, encoder_cfg,
                   images=images, workers=workers, on_epoch=on_epoch)
    elapsed = time.perf_counter() - started

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.checkpoint, out)
    stem = out.parent / out.stem
    Path(f"{stem}.history.json").write_text(json.dumps({
        "epoch_loss": result.history.epoch_loss,
        "val_mae": result.history.val_mae,
        "best_epoch": result.history.best_epoch,
        "wall_time_s": elapsed,
    }, indent=1) + "\n")
    save_pairs(result.train_pairs, f"{stem}.train_pairs.jsonl")
    save_pairs(result.val_pairs, f"{stem}.val_pairs.jsonl")
    _write_config(Path(f"{stem}.train_config.json"), "train", args)
    best = result.history.best_epoch
    print(f"best epoch {best + 1} val_mae {result.history.val_mae[best]:.5f} "
          f"({elapsed:.1f} s) -> {out}")
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    encoder = ckpt.to_encoder()
    entries, images = _load_corpus(args.manifest)
    index, _ = build_index(entries, encoder, images=images)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(index.vectors, out)
    ids_path = out.parent / (out.stem + ".ids.json")
    ids_path.write_text(json.dumps(index.ids, indent=1) + "\n")
    _write_config(out.parent / (out.stem + ".embed_config.json"), "embed", args)
    print(f"embedded {len(index)} images -> {out}")
    return 0


def cmd_audit(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    encoder = ckpt.to_encoder()
    real_entries = load_manifest(args.real_manifest)
    synth_entries = load_manifest(args.synth_manifest)

    t0 = time.perf_counter()
    real_idx, skipped_r = build_index(real_entries, encoder,
                                      base_dir=args.real_manifest.parent,
                                      skip_unreadable=args.skip_unreadable)
    synth_idx, skipped_s = build_index(synth_entries, encoder,
                                       base_dir=args.synth_manifest.parent,
                                       skip_unreadable=args.skip_unreadable)
    embed_ms = (time.perf_counter() - t0) * 1000.0

    report = memorization_score(
        real_idx, synth_idx, Thresholds(alpha=args.alpha, beta=args.beta),
        encoder_sha256=sha256_file(args.checkpoint), embed_ms=embed_ms,
        skipped_ids=skipped_r + skipped_s,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    _write_config(out.parent / (out.stem + ".audit_config.json"), "audit", args)
    print(f"memorization: {report.memorization_pct:.2f}% "
          f"(n_real={report.n_real}, n_synth={report.n_synth}) -> {out}")
    return 0


def _eval_scores(records: list[PairRecord], images: dict[str, Image], encoder,
                 *, misalign: bool, baseline_ssim: bool, seed: int) -> list[float]:
    embed_cache: dict[str, np.ndarray] = {}

    def emb(iid: str) -> np.ndarray:
        if iid not in embed_cache:
            embed_cache[iid] = encoder.embed_image(images[iid]).astype(np.float64)
        return embed_cache[iid]

    scores: list[float] = []
    for k, rec in enumerate(records):
        a, b = images[rec.real_id], images[rec.synth_id]
        if misalign:
            rng = rng_for(seed, "misalign", k)
            a = apply_augmentation(a, sample_augmentation(rng))
            b = apply_augmentation(b, sample_augmentation(rng))
        if baseline_ssim:
            scores.append(ssim_fn(a, b, GROUND_TRUTH_SSIM))
        elif misalign:
            va = encoder.embed_image(a).astype(np.float64)
            vb = encoder.embed_image(b).astype(np.float64)
            scores.append(float(va @ vb))
        else:
            scores.append(float(emb(rec.real_id) @ emb(rec.synth_id)))
    return scores


def cmd_eval(args) -> int:
    records = load_pair_records(args.pairs)
    if not records:
        raise ValidationError(f"no pair records in {args.pairs}")
    entries, images = _load_corpus(args.manifest)
    needed = {r.real_id for r in records} | {r.synth_id for r in records}
    missing = sorted(needed - set(images))
    if missing:
        raise ValidationError(f"manifest is missing pair images: {missing[:5]}")

    encoder = None
    if not args.baseline_ssim:
        if args.checkpoint is None:
            raise ValidationError("--checkpoint is required unless --baseline-ssim is set")
        encoder = load_checkpoint(args.checkpoint).to_encoder()
    scores = _eval_scores(records, images, encoder, misalign=args.misalign,
                          baseline_ssim=args.baseline_ssim, seed=args.seed)

    t = Thresholds(alpha=args.alpha, beta=args.beta)
    labels = [r.label for r in records]
    predicted = [classify(s, t) for s in scores]
    for rec, s, p in zip(records, scores, predicted):
        rec.score = float(s)
        rec.predicted = p

    table = ConfusionTable.from_pairs(labels, predicted)
    metrics = precision_recall_f1(table)
    try:
        sil = silhouette(scores, labels)
    except ValidationError:
        sil = None

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps({
        **metrics.to_dict(),
        "silhouette": sil,
        "confusion": {"labels": list(LABELS), "counts": table.counts.tolist()},
        "n_pairs": len(records),
    }, indent=1) + "\n")
    hist = export_histograms(scores, labels, bins=args.hist_bins,
                             thresholds={"alpha": t.alpha, "beta": t.beta})
    hist.save(json_path=out_dir / "histograms.json", csv_path=out_dir / "histograms.csv")
    save_pair_records(records, out_dir / "predictions.jsonl")
    _write_config(out_dir / "eval_config.json", "eval", args)
    sil_text = "n/a" if sil is None else f"{sil:.4f}"
    print(f"macro F1 {metrics.macro_f1:.4f} silhouette {sil_text} "
          f"({len(records)} pairs) -> {out_dir}")
    return 0


def _scored_records(path) -> tuple[list[str], list[float]]:
    records = load_pair_records(path)
    if not records:
        raise ValidationError(f"no pair records in {path}")
    if any(r.score is None for r in records):
        raise ValidationError(
            f"{path} has records without scores; run the eval command first"
        )
    return [r.label for r in records], [float(r.score) for r in records]


def cmd_grid_search(args) -> int:
    labels, scores = _scored_records(args.scores)
    best, f1 = grid_search_thresholds(labels, scores, step=args.step)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({
        "alpha": best.alpha, "beta": best.beta, "macro_f1": f1, "step": args.step,
    }, indent=1) + "\n")
    print(f"best alpha={best.alpha:.2f} beta={best.beta:.2f} macro F1 {f1:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    labels, scores = _scored_records(args.scores)
    sigmas = tuple(float(s) for s in args.sigmas.split(",")) if args.sigmas \
        else DEFAULT_SWEEP_SIGMAS
    result = sensitivity_sweep(
        labels, scores, Thresholds(alpha=args.alpha, beta=args.beta),
        sigmas=sigmas, trials=args.trials, seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(
        json.dumps(result.to_json_dict(), indent=1) + "\n")
    (out_dir / "sweep.csv").write_text(result.to_csv())
    _write_config(out_dir / "sweep_config.json", "sweep-thresholds", args)
    worst = min(c.mean_f1 for c in result.cells)
    print(f"swept {len(result.cells)} cells, worst mean F1 {worst:.4f} -> {out_dir}")
    return 0


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    encoder = ckpt.to_encoder()
    real_entries, real_images = _load_corpus(args.real_manifest)
    synth_entries, synth_images = _load_corpus(args.synth_manifest)
    result = runtime_benchmark(
        [real_images[e.id] for e in real_entries],
        [synth_images[e.id] for e in synth_entries],
        encoder, runs=args.runs, ssim_sample=args.sample_pairs, seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.save(out)
    _write_config(out.parent / (out.stem + ".bench_config.json"), "bench", args)
    print(f"speedup {result.speedup:.1f}x "
          f"(ssim {result.ssim_total_ms / 1000.0:.1f} s extrapolated, "
          f"embed+search {(result.embed_ms + result.search_ms) / 1000.0:.2f} s) -> {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="memaudit",
                description="Memorization auditing for image generators.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="synthesize a labelled phantom corpus",
                       parents=[], add_help=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-real", type=int, required=True)
    g.add_argument("--dup", type=int, default=3)
    g.add_argument("--sim", type=int, default=3)
    g.add_argument("--diff", type=int, default=4)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k-top", type=int, default=3)
    g.add_argument("--k-rand", type=int, default=3)
    g.add_argument("--no-curate", action="store_true",
                   help="skip building the curated test-pair file")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("ssim", help="structural similarity between two images")
    s.add_argument("image_a", type=Path)
    s.add_argument("image_b", type=Path)
    s.add_argument("--register", action="store_true",
                   help="rigidly align the second image first")
    s.add_argument("--no-luminance", action="store_true",
                   help="score with the contrast and structure terms only")
    s.set_defaults(func=cmd_ssim)

    f = sub.add_parser("fsim", help="feature similarity between two images")
    f.add_argument("image_a", type=Path)
    f.add_argument("image_b", type=Path)
    f.set_defaults(func=cmd_fsim)

    t = sub.add_parser("train", help="train the embedding encoder")
    t.add_argument("--manifest", type=Path,
                   help="combined manifest, split by --val-fraction")
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--train-manifest", type=Path)
    t.add_argument("--val-manifest", type=Path)
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-schedule", choices=["constant", "cosine"], default="cosine")
    t.add_argument("--weight-decay", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--embedding-dim", type=int, default=64)
    t.add_argument("--input-size", type=int, default=64)
    t.add_argument("--pairs-per-epoch", type=int, default=4096)
    t.add_argument("--pool-factor", type=float, default=2.0)
    t.add_argument("--aug-prob", type=float, default=0.5)
    t.add_argument("--bins", type=int, default=5)
    t.add_argument("--val-pairs", type=int, default=256)
    t.add_argument("--workers", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed a manifest into vectors")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_embed)

    a = sub.add_parser("audit", help="score memorization of a synthetic set")
    a.add_argument("--checkpoint", type=Path, required=True)
    a.add_argument("--real-manifest", type=Path, required=True)
    a.add_argument("--synth-manifest", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--alpha", type=float, default=0.6)
    a.add_argument("--beta", type=float, default=0.85)
    a.add_argument("--skip-unreadable", action="store_true")
    a.set_defaults(func=cmd_audit)

    v = sub.add_parser("eval", help="classify curated pairs and report metrics")
    v.add_argument("--pairs", type=Path, required=True)
    v.add_argument("--manifest", type=Path, required=True,
                   help="manifest covering both sides of every pair")
    v.add_argument("--checkpoint", type=Path)
    v.add_argument("--out-dir", type=Path, required=True)
    v.add_argument("--alpha", type=float, default=0.6)
    v.add_argument("--beta", type=float, default=0.85)
    v.add_argument("--misalign", action="store_true",
                   help="randomly perturb both images of each pair first")
    v.add_argument("--baseline-ssim", action="store_true",
                   help="score with unregistered SSIM instead of embeddings")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--hist-bins", type=int, default=50)
    v.set_defaults(func=cmd_eval)

    q = sub.add_parser("grid-search", help="fit thresholds on scored pairs")
    q.add_argument("--scores", type=Path, required=True,
                   help="predictions.jsonl from the eval command")
    q.add_argument("--out", type=Path, required=True)
    q.add_argument("--step", type=float, default=0.05)
    q.set_defaults(func=cmd_grid_search)

    w = sub.add_parser("sweep-thresholds",
                       help="macro-F1 robustness to threshold noise")
    w.add_argument("--scores", type=Path, required=True)
    w.add_argument("--out-dir", type=Path, required=True)
    w.add_argument("--alpha", type=float, default=0.6)
    w.add_argument("--beta", type=float, default=0.85)
    w.add_argument("--sigmas", type=str, default=None,
                   help="comma-separated noise levels")
    w.add_argument("--trials", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="embedding-vs-SSIM runtime comparison")
    b.add_argument("--checkpoint", type=Path, required=True)
    b.add_argument("--real-manifest", type=Path, required=True)
    b.add_argument("--synth-manifest", type=Path, required=True)
    b.add_argument("--out", type=Path, required=True)
    b.add_argument("--runs", type=int, default=3)
    b.add_argument("--sample-pairs", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (MemauditError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
