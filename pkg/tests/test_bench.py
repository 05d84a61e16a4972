import json

import numpy as np
import pytest

from memaudit.bench import BenchmarkResult, runtime_benchmark
from memaudit.encoder import Encoder, EncoderConfig
from memaudit.errors import ValidationError
from memaudit.images import Image
from memaudit.phantoms import PhantomSpec, generate_phantom


@pytest.fixture(scope="module")
def bench_result():
    reals = [generate_phantom(PhantomSpec.random(i, size=32)) for i in range(3)]
    synths = [generate_phantom(PhantomSpec.random(100 + i, size=32)) for i in range(5)]
    enc = Encoder.init_random(
        EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16), seed=0
    )
    return runtime_benchmark(reals, synths, enc, runs=1, ssim_sample=4)


def test_benchmark_counts_and_sample(bench_result):
    r = bench_result
    assert r.n_real == 3 and r.n_synth == 5
    assert r.ssim_sample_pairs == 4  # capped below total pairs


def test_benchmark_extrapolation_math(bench_result):
    r = bench_result
    assert r.ssim_total_ms == pytest.approx(
        r.ssim_sample_ms * (15 / 4), rel=1e-12
    )


def test_benchmark_speedup_formula(bench_result):
    r = bench_result
    assert r.speedup == pytest.approx(
        r.ssim_total_ms / (r.embed_ms + r.search_ms), rel=1e-12
    )
    assert r.speedup > 0


def test_benchmark_json_schema(bench_result, tmp_path):
    p = tmp_path / "bench.json"
    bench_result.save(p)
    d = json.loads(p.read_text())
    assert set(d) == {
        "n_real", "n_synth", "ssim_total_ms", "ssim_sample_pairs",
        "ssim_sample_ms", "embed_ms", "search_ms", "speedup", "runs",
        "hardware",
    }
    assert d["runs"] == 1
    assert all(d[k] > 0 for k in ("ssim_total_ms", "embed_ms", "search_ms"))


def test_benchmark_sample_capped_at_total():
    reals = [generate_phantom(PhantomSpec.random(7, size=32))]
    synths = [generate_phantom(PhantomSpec.random(8, size=32))]
    enc = Encoder.init_random(
        EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16), seed=0
    )
    r = runtime_benchmark(reals, synths, enc, runs=1, ssim_sample=50)
    assert r.ssim_sample_pairs == 1
    assert r.ssim_total_ms == pytest.approx(r.ssim_sample_ms)


def test_benchmark_validation():
    enc = Encoder.init_random(
        EncoderConfig(input_size=32, channels=(4, 8), embedding_dim=16), seed=0
    )
    img = Image(np.full((32, 32), 0.5, dtype=np.float32))
    with pytest.raises(ValidationError):
        runtime_benchmark([], [img], enc)
    with pytest.raises(ValidationError):
        runtime_benchmark([img], [img], enc, runs=0)
