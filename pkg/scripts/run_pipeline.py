#!/usr/bin/env python3
"""Run the full audit pipeline end to end in one working directory.

Chains the CLI subcommands: synthesize a corpus, train the encoder, embed
both manifests, audit the synthetic set, evaluate on the curated pairs,
fit thresholds on the scores, sweep their noise sensitivity, and benchmark
embedding search against pairwise SSIM. Every artifact lands under --work.

Example:
    python3 scripts/run_pipeline.py --work runs/demo --n-real 40 --epochs 10
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from memaudit.cli import main as cli  # noqa: E402


def run(argv: list[str]) -> None:
    print(f"$ memaudit {' '.join(argv)}", flush=True)
    t0 = time.perf_counter()
    code = cli(argv)
    if code != 0:
        sys.exit(code)
    print(f"  [{time.perf_counter() - t0:.1f} s]", flush=True)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True,
                    help="directory that receives every artifact")
    ap.add_argument("--n-real", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--pairs-per-epoch", type=int, default=1024)
    ap.add_argument("--embedding-dim", type=int, default=64)
    ap.add_argument("--alpha", type=float, default=0.6)
    ap.add_argument("--beta", type=float, default=0.85)
    ap.add_argument("--skip-train", action="store_true",
                    help="reuse an existing checkpoint under --work")
    args = ap.parse_args()

    work = args.work
    corpus = work / "corpus"
    ckpt = work / "encoder.ckpt"
    seed = str(args.seed)

    if not (corpus / "manifest.json").exists():
        run(["gen-data", "--out", str(corpus), "--n-real", str(args.n_real),
             "--size", str(args.size), "--seed", seed])

    if not (args.skip_train and ckpt.exists()):
        run(["train", "--manifest", str(corpus / "manifest.json"),
             "--out", str(ckpt), "--epochs", str(args.epochs),
             "--pairs-per-epoch", str(args.pairs_per_epoch),
             "--embedding-dim", str(args.embedding_dim),
             "--input-size", str(args.size), "--seed", seed])

    run(["embed", "--checkpoint", str(ckpt),
         "--manifest", str(corpus / "manifest.json"),
         "--out", str(work / "vectors.dst")])

    run(["audit", "--checkpoint", str(ckpt),
         "--real-manifest", str(corpus / "real.json"),
         "--synth-manifest", str(corpus / "synth.json"),
         "--out", str(work / "audit_report.json"),
         "--alpha", str(args.alpha), "--beta", str(args.beta)])

    pairs = str(corpus / "test_pairs.jsonl")
    manifest = str(corpus / "manifest.json")
    run(["eval", "--pairs", pairs, "--manifest", manifest,
         "--checkpoint", str(ckpt), "--out-dir", str(work / "eval"),
         "--alpha", str(args.alpha), "--beta", str(args.beta), "--seed", seed])
    run(["eval", "--pairs", pairs, "--manifest", manifest,
         "--checkpoint", str(ckpt), "--misalign",
         "--out-dir", str(work / "eval_misaligned"),
         "--alpha", str(args.alpha), "--beta", str(args.beta), "--seed", seed])
    run(["eval", "--pairs", pairs, "--manifest", manifest, "--baseline-ssim",
         "--out-dir", str(work / "eval_ssim_baseline"),
         "--alpha", str(args.alpha), "--beta", str(args.beta), "--seed", seed])

    scores = str(work / "eval" / "predictions.jsonl")
    run(["grid-search", "--scores", scores,
         "--out", str(work / "thresholds.json")])
    run(["sweep-thresholds", "--scores", scores,
         "--out-dir", str(work / "sweep"),
         "--alpha", str(args.alpha), "--beta", str(args.beta), "--seed", seed])

    run(["bench", "--checkpoint", str(ckpt),
         "--real-manifest", str(corpus / "real.json"),
         "--synth-manifest", str(corpus / "synth.json"),
         "--out", str(work / "bench.json"), "--seed", seed])

    print(f"done; artifacts under {work}")


if __name__ == "__main__":
    main()
