"""Wall-clock comparison of the audit's three phases against pairwise
registered SSIM.

Registered SSIM over every (real, synth) pair is measured on a seeded random
sample of pairs and extrapolated to the full pair count (running all pairs
would take hours at desk scale); embedding and blocked cosine search run in
full. Each phase warms up once untimed, then reports the median of `runs`.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audit import EmbeddingIndex, pairwise_scores
from .encoder import Encoder
from .errors import ValidationError
from .images import Image
from .register import registered_ssim


@dataclass
class BenchmarkResult:
    n_real: int
    n_synth: int
    ssim_total_ms: float        # extrapolated to all pairs
    ssim_sample_pairs: int
    ssim_sample_ms: float       # measured on the sample (median)
    embed_ms: float
    search_ms: float
    speedup: float
    runs: int
    hardware: str

    def to_json_dict(self) -> dict:
        return {
            "n_real": self.n_real, "n_synth": self.n_synth,
            "ssim_total_ms": self.ssim_total_ms,
            "ssim_sample_pairs": self.ssim_sample_pairs,
            "ssim_sample_ms": self.ssim_sample_ms,
            "embed_ms": self.embed_ms, "search_ms": self.search_ms,
            "speedup": self.speedup, "runs": self.runs, "hardware": self.hardware,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1) + "\n")


def _median_time(fn, runs: int) -> float:
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def runtime_benchmark(real_images: list[Image], synth_images: list[Image],
                      encoder: Encoder, *, runs: int = 3, ssim_sample: int = 64,
                      seed: int = 0, block_size: int = 256) -> BenchmarkResult:
    if not real_images or not synth_images:
        raise ValidationError("benchmark needs nonempty image lists")
    if runs < 1 or ssim_sample < 1:
        raise ValidationError("runs and ssim_sample must be >= 1")

    n_real, n_synth = len(real_images), len(synth_images)
    total_pairs = n_real * n_synth
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    sample_n = min(ssim_sample, total_pairs)
    flat = rng.choice(total_pairs, size=sample_n, replace=False)
    sample = [(int(k) // n_synth, int(k) % n_synth) for k in flat]

    # Phase a: registered SSIM on the sample, extrapolated.
    registered_ssim(real_images[sample[0][0]], synth_images[sample[0][1]])  # warm
    def ssim_phase():
        for i, j in sample:
            registered_ssim(real_images[i], synth_images[j])
    ssim_sample_ms = _median_time(ssim_phase, runs)
    ssim_total_ms = ssim_sample_ms * (total_pairs / sample_n)

    # Phase b: embed everything, one image per forward pass.
    encoder.embed_image(real_images[0])  # warm
    state = {}
    def embed_phase():
        state["real"] = np.stack([encoder.embed_image(im) for im in real_images])
        state["synth"] = np.stack([encoder.embed_image(im) for im in synth_images])
    embed_ms = _median_time(embed_phase, runs)

    real_idx = EmbeddingIndex(ids=[f"r{i}" for i in range(n_real)], vectors=state["real"])
    synth_idx = EmbeddingIndex(ids=[f"s{i}" for i in range(n_synth)], vectors=state["synth"])

    # Phase c: blocked cosine search over all pairs with per-row max.
    def search_phase():
        for start, block in pairwise_scores(real_idx, synth_idx, block_size):
            block.argmax(axis=1)
    search_phase()  # warm
    search_ms = _median_time(search_phase, runs)

    fast_ms = embed_ms + search_ms
    return BenchmarkResult(
        n_real=n_real, n_synth=n_synth,
        ssim_total_ms=ssim_total_ms,
        ssim_sample_pairs=sample_n,
        ssim_sample_ms=ssim_sample_ms,
        embed_ms=embed_ms,
        search_ms=search_ms,
        speedup=ssim_total_ms / fast_ms if fast_ms > 0 else float("inf"),
        runs=runs,
        hardware=f"{platform.machine()} {platform.processor()} ({platform.system()})".strip(),
    )
