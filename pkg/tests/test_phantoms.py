import json

import numpy as np
import pytest

from memaudit.errors import ValidationError
from memaudit.manifest import load_labels, load_manifest
from memaudit.metrics import GROUND_TRUTH_SSIM, ssim
from memaudit.phantoms import (
    ClassCounts,
    PhantomSpec,
    StructureSpec,
    curate_test_set,
    generate_phantom,
    jitter_structures,
    load_pair_records,
    perturb_duplicate,
    save_pair_records,
    synthesize_corpus,
    PairRecord,
)
from memaudit.util import rng_for


# ---------------------------------------------------------------- specs


def test_random_spec_deterministic():
    a = PhantomSpec.random(42)
    b = PhantomSpec.random(42)
    assert a == b
    assert a != PhantomSpec.random(43)


def test_generate_deterministic_bit_exact():
    spec = PhantomSpec.random(7)
    x = generate_phantom(spec)
    y = generate_phantom(spec)
    assert np.array_equal(x.pixels, y.pixels)
    assert x.pixels.dtype == np.float32
    assert 0.0 <= x.pixels.min() and x.pixels.max() <= 1.0


def test_spec_validation_rejects_out_of_canvas():
    spec = PhantomSpec.random(3, size=64)
    bad = StructureSpec(cy=2.0, cx=2.0, ay=30.0, ax=30.0, angle_deg=0.0,
                        intensity=0.5)
    with pytest.raises(ValidationError):
        PhantomSpec(size=64, structures=spec.structures + (bad,),
                    background=spec.background)


def test_spec_validation_rejects_bad_intensity():
    spec = PhantomSpec.random(3)
    s0 = spec.structures[0]
    bad = StructureSpec(cy=s0.cy, cx=s0.cx, ay=s0.ay, ax=s0.ax,
                        angle_deg=0.0, intensity=1.5)
    with pytest.raises(ValidationError):
        PhantomSpec(size=spec.size, structures=(bad,) + spec.structures[1:],
                    background=spec.background)


def test_structure_count_range():
    for seed in range(10):
        spec = PhantomSpec.random(seed)
        assert 4 <= len(spec.structures) <= 9


def test_jitter_preserves_count_and_stays_valid():
    spec = PhantomSpec.random(11)
    jit = jitter_structures(spec, rng_for(0, "jit"))
    assert len(jit.structures) == len(spec.structures)
    jit.validate()
    assert jit.structures != spec.structures


def test_perturb_duplicate_stays_similar():
    img = generate_phantom(PhantomSpec.random(5))
    dup = perturb_duplicate(img, rng_for(0, "dup"))
    assert dup.pixels.shape == img.pixels.shape
    assert not np.array_equal(dup.pixels, img.pixels)
    # recognizably related even before registration; small rigid offsets
    # depress raw windowed SSIM well below the registered score
    assert ssim(img, dup, GROUND_TRUTH_SSIM) > 0.25


# ---------------------------------------------------------------- corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    paths = synthesize_corpus(out, 5, ClassCounts(2, 1, 2), seed=9, size=32)
    return paths


def test_corpus_counts_and_roles(corpus):
    entries = load_manifest(corpus.combined_manifest)
    reals = [e for e in entries if e.role == "real"]
    synths = [e for e in entries if e.role == "synthetic"]
    assert len(reals) == 5
    assert len(synths) == 5 * 5
    for s in synths:
        assert s.source_base_id in {r.id for r in reals}


def test_corpus_child_id_scheme(corpus):
    entries = load_manifest(corpus.combined_manifest)
    ids = {e.id for e in entries}
    assert "r0000" in ids
    assert "r0000-d0" in ids and "r0000-d1" in ids
    assert "r0000-s0" in ids
    assert "r0000-x0" in ids and "r0000-x1" in ids


def test_corpus_labels_cover_children(corpus):
    labels = load_labels(corpus.labels)
    entries = load_manifest(corpus.combined_manifest)
    synths = [e for e in entries if e.role == "synthetic"]
    assert len(labels) == len(synths)
    for s in synths:
        lab = labels[(s.source_base_id, s.id)]
        if "-d" in s.id:
            assert lab == "duplicate"
        elif "-s" in s.id:
            assert lab == "similar"
        else:
            assert lab == "different"


def test_corpus_deterministic(tmp_path):
    a = synthesize_corpus(tmp_path / "a", 2, ClassCounts(1, 1, 1), seed=3, size=32)
    b = synthesize_corpus(tmp_path / "b", 2, ClassCounts(1, 1, 1), seed=3, size=32)
    from memaudit.manifest import load_images

    ia = load_images(load_manifest(a.combined_manifest), a.out_dir)
    ib = load_images(load_manifest(b.combined_manifest), b.out_dir)
    assert set(ia) == set(ib)
    for k in ia:
        assert np.array_equal(ia[k].pixels, ib[k].pixels)


def test_corpus_gen_config_written(corpus):
    cfg = json.loads((corpus.out_dir / "gen_config.json").read_text())
    assert cfg["n_real"] == 5
    assert cfg["seed"] == 9
    assert cfg["counts"] == {"duplicate": 2, "similar": 1, "different": 2}


def test_class_counts_validation():
    with pytest.raises(ValidationError):
        ClassCounts(-1, 0, 0)
    with pytest.raises(ValidationError):
        ClassCounts(0, 0, 0)
    assert ClassCounts(2, 1, 3).total == 6


# ---------------------------------------------------------------- curation


def _toy_curation_inputs(rng, n_children=8):
    from memaudit.images import Image
    from memaudit.manifest import ManifestEntry

    real = ManifestEntry(id="r0", path="r0.dst", role="real")
    base = generate_phantom(PhantomSpec.random(1, size=32))
    images = {"r0": base}
    synth_entries = []
    labels = {}
    for j in range(n_children):
        sid = f"r0-c{j}"
        synth_entries.append(ManifestEntry(id=sid, path=f"{sid}.dst",
                                           role="synthetic", source_base_id="r0"))
        images[sid] = perturb_duplicate(base, rng_for(j, "cur"))
        labels[("r0", sid)] = "duplicate" if j % 2 == 0 else "similar"
    return [real], synth_entries, labels, images


def test_curation_deterministic(rng):
    reals, synths, labels, images = _toy_curation_inputs(rng)
    a = curate_test_set(reals, synths, labels, images, k_top=2, k_rand=2, seed=5)
    b = curate_test_set(reals, synths, labels, images, k_top=2, k_rand=2, seed=5)
    assert [(r.real_id, r.synth_id) for r in a] == [
        (r.real_id, r.synth_id) for r in b
    ]
    assert len(a) == 4
    assert all(r.label in ("duplicate", "similar") for r in a)
    assert all(r.fsim is not None for r in a)


def test_curation_marks_top_picks(rng):
    reals, synths, labels, images = _toy_curation_inputs(rng)
    recs = curate_test_set(reals, synths, labels, images, k_top=3, k_rand=1, seed=0)
    top = [r for r in recs if r.picked == "top"]
    rand = [r for r in recs if r.picked == "random"]
    assert len(top) == 3 and len(rand) == 1
    top_scores = [r.fsim for r in top]
    assert min(top_scores) >= max(top_scores) - 1.0  # sane ordering
    assert all(r.fsim <= min(top_scores) for r in rand)


def test_curation_insufficient_candidates(rng):
    reals, synths, labels, images = _toy_curation_inputs(rng, n_children=3)
    with pytest.raises(ValidationError, match="candidates"):
        curate_test_set(reals, synths, labels, images, k_top=3, k_rand=3)


def test_curation_missing_label(rng):
    reals, synths, labels, images = _toy_curation_inputs(rng)
    del labels[("r0", "r0-c0")]
    with pytest.raises(ValidationError):
        curate_test_set(reals, synths, labels, images, k_top=2, k_rand=2)


def test_pair_records_round_trip(tmp_path):
    recs = [
        PairRecord(real_id="r0", synth_id="r0-c0", label="duplicate",
                   fsim=0.81, picked="top", ssim=0.93, score=0.9,
                   predicted="duplicate"),
        PairRecord(real_id="r0", synth_id="r0-c1", label="similar",
                   fsim=0.5, picked="random"),
    ]
    p = tmp_path / "pairs.jsonl"
    save_pair_records(recs, p)
    assert load_pair_records(p) == recs
