"""Memorization audit: embedding index, blocked cosine search, score
classification, threshold grid search, and threshold-noise sensitivity.

Classification semantics on a score s with thresholds (alpha, beta):
s < alpha -> "different"; alpha <= s < beta -> "similar"; s >= beta ->
"duplicate". Boundary values go to the higher class. The memorization
percentage is the share of real images whose best synthetic match is a
duplicate.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import Encoder
from .errors import MemauditError, ValidationError
from .evaluate import LABELS, macro_f1
from .images import Image
from .manifest import ManifestEntry, load_images

DEFAULT_ALPHA = 0.6
DEFAULT_BETA = 0.85
AUDIT_REPORT_VERSION = 1


@dataclass(frozen=True)
class Thresholds:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not (0.0 <= self.alpha < self.beta <= 1.0):
            raise ValidationError(
                f"thresholds must satisfy 0 <= alpha < beta <= 1, got ({self.alpha}, {self.beta})"
            )


def classify(score: float, t: Thresholds) -> str:
    if math.isnan(score):
        raise ValidationError("classify: score is NaN")
    if score < t.alpha:
        return "different"
    if score < t.beta:
        return "similar"
    return "duplicate"


@dataclass
class EmbeddingIndex:
    ids: list[str]
    vectors: np.ndarray  # (n, d) float32, unit rows

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise ValidationError(f"index vectors must be 2-D, got shape {v.shape}")
        if len(self.ids) != v.shape[0]:
            raise ValidationError(f"{len(self.ids)} ids but {v.shape[0]} vectors")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("index ids must be unique")
        if v.shape[0]:
            norms = np.linalg.norm(v.astype(np.float64), axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > 1e-5:
                raise ValidationError(f"index rows must be unit norm (worst deviation {worst:g})")
        self.vectors = v

    def __len__(self) -> int:
        return len(self.ids)


def build_index(entries: list[ManifestEntry], encoder: Encoder, *,
                images: dict[str, Image] | None = None, base_dir=None,
                skip_unreadable: bool = False) -> tuple[EmbeddingIndex, list[str]]:
    """Embed every manifest entry in order. Returns (index, skipped_ids).

    Rows equal one-by-one embed_image outputs exactly. An unreadable image
    aborts unless skip_unreadable, in which case its id is recorded.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    for e in entries:
        try:
            if images is not None and e.id in images:
                img = images[e.id]
            else:
                img = load_images([e], base_dir)[e.id]
        except (OSError, MemauditError) as exc:
            if skip_unreadable:
                skipped.append(e.id)
                continue
            raise MemauditError(f"failed to load image {e.id!r}: {exc}") from exc
        ids.append(e.id)
        rows.append(encoder.embed_image(img))
    dim = encoder.config.embedding_dim
    vectors = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return EmbeddingIndex(ids=ids, vectors=vectors), skipped


def pairwise_scores(real: EmbeddingIndex, synth: EmbeddingIndex, block_size: int = 256):
    """Yield (row_start, block) score matrices in real-major order.

    Unit-norm rows make the blocked product an exact cosine (up to float32
    reduction order, within 1e-5 of scalar dot products).
    """
    if block_size < 1:
        raise ValidationError(f"block_size must be >= 1, got {block_size}")
    if real.vectors.shape[1] != synth.vectors.shape[1]:
        raise ValidationError(
            f"embedding dims differ: {real.vectors.shape[1]} vs {synth.vectors.shape[1]}"
        )
    st = synth.vectors.T
    for start in range(0, len(real), block_size):
        block = real.vectors[start : start + block_size] @ st
        yield start, block


def score_matrix(real: EmbeddingIndex, synth: EmbeddingIndex, block_size: int = 256) -> np.ndarray:
    blocks = [b for _, b in pairwise_scores(real, synth, block_size)]
    if not blocks:
        return np.zeros((0, len(synth)), dtype=np.float32)
    return np.concatenate(blocks, axis=0)


@dataclass(frozen=True)
class MatchRecord:
    real_id: str
    synth_id: str
    score: float
    label: str


@dataclass
class AuditReport:
    thresholds: Thresholds
    encoder_sha256: str
    n_real: int
    n_synth: int
    memorization_pct: float
    matches: list[MatchRecord]
    timings_ms: dict[str, float]
    skipped_ids: list[str] = field(default_factory=list)
    version: int = AUDIT_REPORT_VERSION

    def to_json_dict(self) -> dict:
        return {
            "version": self.version,
            "thresholds": {"alpha": self.thresholds.alpha, "beta": self.thresholds.beta},
            "encoder_sha256": self.encoder_sha256,
            "n_real": self.n_real,
            "n_synth": self.n_synth,
            "memorization_pct": self.memorization_pct,
            "matches": [
                {"real_id": m.real_id, "synth_id": m.synth_id,
                 "score": m.score, "label": m.label}
                for m in self.matches
            ],
            "timings_ms": dict(self.timings_ms),
            "skipped_ids": list(self.skipped_ids),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1) + "\n")


def memorization_score(real: EmbeddingIndex, synth: EmbeddingIndex,
                       thresholds: Thresholds | None = None, *,
                       encoder_sha256: str = "", block_size: int = 256,
                       embed_ms: float = 0.0,
                       skipped_ids: list[str] | None = None) -> AuditReport:
    """Audit every real image against all synthetics via blocked search.

    Each real image's best (max-score) match is classified; the memorization
    percentage counts reals whose best match is a duplicate. `embed_ms` slots
    the caller's index-build time into the report's timing block.
    """
    t = thresholds or Thresholds()
    if len(real) == 0 or len(synth) == 0:
        raise ValidationError("audit needs nonempty real and synthetic indexes")

    search_start = time.perf_counter()
    best_idx = np.empty(len(real), dtype=np.int64)
    best_score = np.empty(len(real), dtype=np.float64)
    for start, block in pairwise_scores(real, synth, block_size):
        arg = block.argmax(axis=1)
        best_idx[start : start + block.shape[0]] = arg
        best_score[start : start + block.shape[0]] = block[
            np.arange(block.shape[0]), arg
        ]
    search_ms = (time.perf_counter() - search_start) * 1000.0

    classify_start = time.perf_counter()
    matches = []
    dup_count = 0
    for i, rid in enumerate(real.ids):
        label = classify(float(best_score[i]), t)
        if label == "duplicate":
            dup_count += 1
        matches.append(MatchRecord(
            real_id=rid, synth_id=synth.ids[int(best_idx[i])],
            score=float(best_score[i]), label=label,
        ))
    classify_ms = (time.perf_counter() - classify_start) * 1000.0

    return AuditReport(
        thresholds=t,
        encoder_sha256=encoder_sha256,
        n_real=len(real),
        n_synth=len(synth),
        memorization_pct=100.0 * dup_count / len(real),
        matches=matches,
        timings_ms={"embed": embed_ms, "search": search_ms, "classify": classify_ms},
        skipped_ids=list(skipped_ids or []),
    )


# ---------------------------------------------------------------------------
# Threshold selection and robustness

def _classify_all(scores: np.ndarray, alpha: float, beta: float) -> list[str]:
    out = np.where(scores < alpha, 0, np.where(scores < beta, 1, 2))
    return [LABELS[i] for i in out]


def grid_search_thresholds(true_labels, scores, step: float = 0.05) -> tuple[Thresholds, float]:
    """Exhaustive search over the [0, 1]^2 grid (alpha < beta) maximizing
    macro F1; ties break toward larger beta, then larger alpha."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or len(true_labels) != s.size:
        raise ValidationError("grid search needs matching, nonempty labels and scores")
    if not 0 < step <= 0.5:
        raise ValidationError(f"grid step must be in (0, 0.5], got {step}")
    n = int(round(1.0 / step))
    grid = [i * step for i in range(n + 1)]
    best: tuple[float, float, float] | None = None  # (f1, beta, alpha)
    for ai, alpha in enumerate(grid):
        for beta in grid[ai + 1 :]:
            f1 = macro_f1(true_labels, _classify_all(s, alpha, beta))
            key = (f1, beta, alpha)
            if best is None or key > best:
                best = key
    f1, beta, alpha = best
    return Thresholds(alpha=alpha, beta=beta), f1


@dataclass
class SweepCell:
    sigma_alpha: float
    sigma_beta: float
    mean_f1: float
    std_f1: float


@dataclass
class SweepResult:
    base: Thresholds
    trials: int
    seed: int
    cells: list[SweepCell]

    def to_csv(self) -> str:
        lines = ["sigma_alpha,sigma_beta,mean_f1,std_f1"]
        for c in self.cells:
            lines.append(
                f"{c.sigma_alpha:.6g},{c.sigma_beta:.6g},{c.mean_f1:.6f},{c.std_f1:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "base": {"alpha": self.base.alpha, "beta": self.base.beta},
            "trials": self.trials,
            "seed": self.seed,
            "cells": [
                {"sigma_alpha": c.sigma_alpha, "sigma_beta": c.sigma_beta,
                 "mean_f1": c.mean_f1, "std_f1": c.std_f1}
                for c in self.cells
            ],
        }

    def cell(self, sigma_alpha: float, sigma_beta: float) -> SweepCell:
        for c in self.cells:
            if c.sigma_alpha == sigma_alpha and c.sigma_beta == sigma_beta:
                return c
        raise ValidationError(f"no sweep cell for sigmas ({sigma_alpha}, {sigma_beta})")


DEFAULT_SWEEP_SIGMAS = (0.03, 0.06, 0.09, 0.12, 0.15)


def sensitivity_sweep(true_labels, scores, base: Thresholds | None = None,
                      sigmas=DEFAULT_SWEEP_SIGMAS, trials: int = 100,
                      seed: int = 0) -> SweepResult:
    """Macro-F1 under Gaussian noise on both thresholds.

    Per cell (sigma_alpha, sigma_beta), `trials` draws perturb the base
    thresholds, clamp to [0, 1], and redraw whenever alpha >= beta; the cell
    records mean and std of macro F1. sigma = 0 reproduces the unperturbed F1
    exactly.
    """
    base = base or Thresholds()
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or len(true_labels) != s.size:
        raise ValidationError("sensitivity sweep needs matching, nonempty labels and scores")
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    for sig in sigmas:
        if sig < 0:
            raise ValidationError(f"sigma must be >= 0, got {sig}")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    cells = []
    for sa in sigmas:
        for sb in sigmas:
            f1s = np.empty(trials)
            for t in range(trials):
                for _attempt in range(1000):
                    alpha = min(max(base.alpha + rng.normal(0.0, sa) if sa else base.alpha, 0.0), 1.0)
                    beta = min(max(base.beta + rng.normal(0.0, sb) if sb else base.beta, 0.0), 1.0)
                    if alpha < beta:
                        break
                else:
                    raise ValidationError(
                        f"could not draw valid thresholds at sigmas ({sa}, {sb})"
                    )
                f1s[t] = macro_f1(true_labels, _classify_all(s, alpha, beta))
            cells.append(SweepCell(sa, sb, float(f1s.mean()), float(f1s.std())))
    return SweepResult(base=base, trials=trials, seed=seed, cells=cells)
