"""Seed derivation, canonical JSON, hashing, and worker-pool helpers."""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import multiprocessing
import os
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError

WORKERS_ENV = "MEMAUDIT_WORKERS"


def rng_for(master_seed: int, *stream: int | str) -> np.random.Generator:
    """Derive an independent, reproducible generator for a named stream.

    String components are hashed so streams like ("aug", epoch) and
    ("order", epoch) never collide.
    """
    key = []
    for part in stream:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            key.append(int.from_bytes(digest[:4], "little"))
        else:
            key.append(int(part) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def canonical_json(obj: Any) -> str:
    """Key-sorted, whitespace-free JSON; stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_workers(workers: int | None) -> int:
    """CLI flag wins, then MEMAUDIT_WORKERS, then the machine's core count."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            try:
                workers = int(env)
            except ValueError as exc:
                raise ValidationError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise ValidationError(f"worker count must be >= 1, got {workers}")
    return workers


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Map preserving input order; forks a process pool when workers > 1.

    `fn` and the items must be picklable. Results are identical to the
    sequential path regardless of worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, len(items) // (workers * 4))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
