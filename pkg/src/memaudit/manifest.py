"""Corpus bookkeeping files: manifests, pair caches, and label files.

A manifest is a JSON array of {id, path, role, source_base_id} with role in
{"real", "synthetic"}; source_base_id links a synthetic image to the real
image it was derived from (null for reals and for independent synthetics'
convenience it still records the real it was generated for). Pair caches and
label files are JSON-lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, ValidationError
from .images import Image, RigidTransform, load_image

ROLES = ("real", "synthetic")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    role: str
    source_base_id: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"manifest entry {self.id!r}: bad role {self.role!r}")


def save_manifest(entries: list[ManifestEntry], path) -> None:
    rows = [
        {"id": e.id, "path": e.path, "role": e.role, "source_base_id": e.source_base_id}
        for e in entries
    ]
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def load_manifest(path) -> list[ManifestEntry]:
    try:
        rows = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path}: {exc}", offset=exc.pos) from exc
    if not isinstance(rows, list):
        raise FormatError(f"manifest {path}: expected a JSON array")
    entries = []
    seen = set()
    for i, row in enumerate(rows):
        try:
            entry = ManifestEntry(
                id=row["id"], path=row["path"], role=row["role"],
                source_base_id=row.get("source_base_id"),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"manifest {path}: bad entry at index {i}: {exc}") from exc
        if entry.id in seen:
            raise ValidationError(f"manifest {path}: duplicate id {entry.id!r}")
        seen.add(entry.id)
        entries.append(entry)
    return entries


def load_images(entries: list[ManifestEntry], base_dir=None) -> dict[str, Image]:
    """Load every entry's image, resolving relative paths against base_dir."""
    out = {}
    for e in entries:
        p = Path(e.path)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        out[e.id] = load_image(p)
    return out


@dataclass(frozen=True)
class PairSsim:
    real_id: str
    synth_id: str
    ssim: float
    transform: RigidTransform


def save_pairs(pairs: list[PairSsim], path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "real_id": p.real_id, "synth_id": p.synth_id, "ssim": p.ssim,
                "rot_deg": p.transform.rotation_deg,
                "tx": p.transform.tx, "ty": p.transform.ty,
            }) + "\n")


def load_pairs(path) -> list[PairSsim]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(PairSsim(
                    real_id=row["real_id"], synth_id=row["synth_id"],
                    ssim=float(row["ssim"]),
                    transform=RigidTransform(
                        float(row["rot_deg"]), float(row["tx"]), float(row["ty"])
                    ),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"pair cache {path}: line {lineno}: {exc}") from exc
    return out


def save_labels(labels: dict[tuple[str, str], str], path) -> None:
    with open(path, "w") as fh:
        for (real_id, synth_id), label in labels.items():
            fh.write(json.dumps({
                "real_id": real_id, "synth_id": synth_id, "label": label,
            }) + "\n")


def load_labels(path) -> dict[tuple[str, str], str]:
    out: dict[tuple[str, str], str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                key = (row["real_id"], row["synth_id"])
                label = row["label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"label file {path}: line {lineno}: {exc}") from exc
            if label not in ("different", "similar", "duplicate"):
                raise ValidationError(f"label file {path}: line {lineno}: bad label {label!r}")
            out[key] = label
    return out
