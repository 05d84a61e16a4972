import json
import os

import numpy as np
import pytest

from memaudit.errors import ValidationError
from memaudit.util import (
    WORKERS_ENV,
    canonical_json,
    parallel_map,
    resolve_workers,
    rng_for,
    sha256_file,
)


def test_rng_for_is_deterministic():
    a = rng_for(7, "stream", 3).random(4)
    b = rng_for(7, "stream", 3).random(4)
    assert np.array_equal(a, b)


def test_rng_for_streams_are_independent():
    a = rng_for(7, "alpha").random(4)
    b = rng_for(7, "beta").random(4)
    c = rng_for(8, "alpha").random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_for_distinguishes_arity():
    # ("a", 1) and ("a1",) must not collide
    a = rng_for(0, "a", 1).random(4)
    b = rng_for(0, "a1").random(4)
    assert not np.array_equal(a, b)


def test_canonical_json_sorted_and_tight():
    s = canonical_json({"b": 1, "a": [1, 2]})
    assert s == '{"a":[1,2],"b":1}'
    assert json.loads(s) == {"a": [1, 2], "b": 1}


def test_sha256_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")
    # sha256 of b"abc", a fixed public value
    assert sha256_file(p) == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )


def test_resolve_workers_flag_wins(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(5) == 5


def test_resolve_workers_env_fallback(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert resolve_workers(None) == 3


def test_resolve_workers_default(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(None) == (os.cpu_count() or 1)


def test_resolve_workers_rejects_bad(monkeypatch):
    with pytest.raises(ValidationError):
        resolve_workers(0)
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ValidationError):
        resolve_workers(None)


def _sq(x):
    return x * x


def test_parallel_map_preserves_order():
    items = list(range(23))
    assert parallel_map(_sq, items, workers=1) == [x * x for x in items]
    assert parallel_map(_sq, items, workers=3) == [x * x for x in items]
