import numpy as np
import pytest

from memaudit.errors import FormatError, ValidationError
from memaudit.images import Image, RigidTransform, save_image
from memaudit.manifest import (
    ManifestEntry,
    PairSsim,
    load_images,
    load_labels,
    load_manifest,
    load_pairs,
    save_labels,
    save_manifest,
    save_pairs,
)


def entries3():
    return [
        ManifestEntry(id="r0", path="real/r0.dst", role="real"),
        ManifestEntry(id="r0-d0", path="synth/r0-d0.dst", role="synthetic",
                      source_base_id="r0"),
        ManifestEntry(id="r1", path="real/r1.dst", role="real"),
    ]


def test_entry_rejects_unknown_role():
    with pytest.raises(ValidationError):
        ManifestEntry(id="x", path="x.dst", role="fake")


def test_manifest_round_trip(tmp_path):
    p = tmp_path / "manifest.json"
    save_manifest(entries3(), p)
    assert load_manifest(p) == entries3()


def test_manifest_duplicate_id(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text('[{"id": "a", "path": "a.dst", "role": "real"},'
                 ' {"id": "a", "path": "b.dst", "role": "real"}]')
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(p)


def test_manifest_bad_json_reports_offset(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text('[{"id": "a"')
    with pytest.raises(FormatError) as exc:
        load_manifest(p)
    assert exc.value.offset is not None


def test_manifest_missing_field(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text('[{"id": "a", "role": "real"}]')
    with pytest.raises(FormatError, match="index 0"):
        load_manifest(p)


def test_manifest_non_array(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text('{"id": "a"}')
    with pytest.raises(FormatError):
        load_manifest(p)


def test_load_images_resolves_relative_paths(tmp_path, rng):
    (tmp_path / "real").mkdir()
    px = rng.random((16, 16), dtype=np.float32)
    save_image(Image(px), tmp_path / "real" / "r0.dst")
    entries = [ManifestEntry(id="r0", path="real/r0.dst", role="real")]
    images = load_images(entries, tmp_path)
    assert np.array_equal(images["r0"].pixels, px)


def test_pairs_round_trip(tmp_path):
    p = tmp_path / "pairs.jsonl"
    pairs = [
        PairSsim("r0", "r0-d0", 0.93, RigidTransform(1.5, -2.0, 0.25)),
        PairSsim("r1", "r0-d0", 0.31, RigidTransform(0.0, 0.0, 0.0)),
    ]
    save_pairs(pairs, p)
    assert load_pairs(p) == pairs


def test_pairs_blank_lines_skipped(tmp_path):
    p = tmp_path / "pairs.jsonl"
    save_pairs([PairSsim("a", "b", 0.5, RigidTransform(0, 0, 0))], p)
    p.write_text(p.read_text() + "\n\n")
    assert len(load_pairs(p)) == 1


def test_pairs_bad_line_names_lineno(tmp_path):
    p = tmp_path / "pairs.jsonl"
    p.write_text('{"real_id": "a", "synth_id": "b", "ssim": 0.5, "rot_deg": 0, "tx": 0, "ty": 0}\n'
                 '{"real_id": "a"}\n')
    with pytest.raises(FormatError, match="line 2"):
        load_pairs(p)


def test_labels_round_trip(tmp_path):
    p = tmp_path / "labels.jsonl"
    labels = {("r0", "r0-d0"): "duplicate", ("r0", "r0-x0"): "different"}
    save_labels(labels, p)
    assert load_labels(p) == labels


def test_labels_whitelist(tmp_path):
    p = tmp_path / "labels.jsonl"
    p.write_text('{"real_id": "a", "synth_id": "b", "label": "copy"}\n')
    with pytest.raises(ValidationError, match="bad label"):
        load_labels(p)


def test_labels_bad_json(tmp_path):
    p = tmp_path / "labels.jsonl"
    p.write_text("not json\n")
    with pytest.raises(FormatError, match="line 1"):
        load_labels(p)
