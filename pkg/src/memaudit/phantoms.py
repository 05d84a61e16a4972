"""Synthetic structured phantoms and corpus synthesis.

A phantom is a smooth low-frequency background plus a faint stochastic
texture field and 4-9 anti-aliased elliptical structures. Corpora pair each
"real" phantom with derived synthetics in three ground-truth classes:

- duplicate: same phantom under nuisances only (smooth intensity-bias field,
  global brightness shift, rigid move <= 4 deg / 3 px, additive noise with
  sigma in [0, 0.02]);
- similar: structure parameters jittered (axes +/-10 %, centers +/- 3 px) on
  the same background, then the duplicate-level nuisances;
- different: an independently sampled phantom.

Everything is a pure function of the seed: identical seeds give bit-identical
images.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError, ValidationError
from .images import Image, RigidTransform, apply_rigid, save_image
from .manifest import ManifestEntry, save_labels, save_manifest
from .metrics import FsimConfig, fsim_features, fsim_from_features
from .util import rng_for

MIN_STRUCTURES = 4
MAX_STRUCTURES = 9
INTENSITY_RANGE = (0.1, 0.9)

DUP_NOISE_SIGMA_MAX = 0.02
DUP_ROT_MAX_DEG = 4.0
DUP_SHIFT_MAX_PX = 3.0
DUP_BIAS_AMP_MAX = 0.05
DUP_BRIGHTNESS_MAX = 0.04
SIM_AXIS_JITTER = 0.10
SIM_CENTER_JITTER_PX = 3.0


@dataclass(frozen=True)
class StructureSpec:
    cy: float
    cx: float
    ay: float  # semi-axis along y before rotation
    ax: float
    angle_deg: float
    intensity: float


@dataclass(frozen=True)
class BackgroundSpec:
    base: float
    waves: tuple[tuple[float, float, float, float], ...]  # (amp, ky, kx, phase)
    texture_seed: int
    texture_amp: float
    texture_sigma: float


@dataclass(frozen=True)
class PhantomSpec:
    size: int
    structures: tuple[StructureSpec, ...]
    background: BackgroundSpec

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.size < 16:
            raise ValidationError(f"phantom size must be >= 16, got {self.size}")
        for i, st in enumerate(self.structures):
            if not (INTENSITY_RANGE[0] <= st.intensity <= INTENSITY_RANGE[1]):
                raise ValidationError(
                    f"structure {i}: intensity {st.intensity:g} outside {INTENSITY_RANGE}"
                )
            if st.ax <= 0 or st.ay <= 0:
                raise ValidationError(f"structure {i}: non-positive axes")
            reach = max(st.ax, st.ay) + 1.0
            if (st.cx - reach < 0 or st.cx + reach > self.size - 1
                    or st.cy - reach < 0 or st.cy + reach > self.size - 1):
                raise ValidationError(
                    f"structure {i} at ({st.cx:g}, {st.cy:g}) reaches outside the canvas"
                )

    @classmethod
    def random(cls, seed: int, size: int = 64, n_structures: int | None = None) -> "PhantomSpec":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        if n_structures is None:
            n_structures = int(rng.integers(MIN_STRUCTURES, MAX_STRUCTURES + 1))
        if not MIN_STRUCTURES <= n_structures <= MAX_STRUCTURES:
            raise ValidationError(
                f"structure count {n_structures} outside [{MIN_STRUCTURES}, {MAX_STRUCTURES}]"
            )
        structures = []
        for _ in range(n_structures):
            ax = float(rng.uniform(0.07, 0.20) * size)
            ay = float(rng.uniform(0.07, 0.20) * size)
            reach = max(ax, ay) + 2.0
            cx = float(rng.uniform(reach, size - 1 - reach))
            cy = float(rng.uniform(reach, size - 1 - reach))
            structures.append(StructureSpec(
                cy=cy, cx=cx, ay=ay, ax=ax,
                angle_deg=float(rng.uniform(0.0, 180.0)),
                intensity=float(rng.uniform(0.15, 0.85)),
            ))
        waves = tuple(
            (float(rng.uniform(0.01, 0.04)), float(rng.uniform(-1.5, 1.5)),
             float(rng.uniform(-1.5, 1.5)), float(rng.uniform(0.0, 2.0 * math.pi)))
            for _ in range(3)
        )
        background = BackgroundSpec(
            base=float(rng.uniform(0.08, 0.16)),
            waves=waves,
            texture_seed=int(rng.integers(2**31)),
            texture_amp=float(rng.uniform(0.030, 0.045)),
            texture_sigma=1.2,
        )
        spec = cls(size=size, structures=tuple(structures), background=background)
        spec.validate()
        return spec


def _texture(bg: BackgroundSpec, size: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(bg.texture_seed)))
    noise = rng.standard_normal((size, size))
    smooth = ndimage.gaussian_filter(noise, bg.texture_sigma, mode="reflect")
    sd = smooth.std()
    if sd > 0:
        smooth /= sd
    return bg.texture_amp * smooth


def generate_phantom(spec: PhantomSpec) -> Image:
    spec.validate()
    n = spec.size
    ys, xs = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64),
                         indexing="ij")
    bg = spec.background
    canvas = np.full((n, n), bg.base, dtype=np.float64)
    for amp, ky, kx, phase in bg.waves:
        canvas += amp * np.cos(2.0 * math.pi * (ky * ys / n + kx * xs / n) + phase)
    canvas += _texture(bg, n)

    for st in spec.structures:
        th = math.radians(st.angle_deg)
        c, s = math.cos(th), math.sin(th)
        dx = xs - st.cx
        dy = ys - st.cy
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        q = np.sqrt((xr / st.ax) ** 2 + (yr / st.ay) ** 2)
        # ~1 px anti-aliasing band around the ellipse boundary
        alpha = np.clip((1.0 - q) * min(st.ax, st.ay) + 0.5, 0.0, 1.0)
        canvas = canvas * (1.0 - alpha) + st.intensity * alpha

    return Image(np.clip(canvas, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# Perturbation classes

def perturb_duplicate(img: Image, rng: np.random.Generator) -> Image:
    """Nuisances that leave the underlying anatomy intact."""
    n_y, n_x = img.pixels.shape
    ys, xs = np.meshgrid(np.arange(n_y, dtype=np.float64), np.arange(n_x, dtype=np.float64),
                         indexing="ij")
    amp = float(rng.uniform(0.0, DUP_BIAS_AMP_MAX))
    u = float(rng.uniform(-1.0, 1.0))
    v = float(rng.uniform(-1.0, 1.0))
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    field = 1.0 + amp * np.cos(2.0 * math.pi * (u * ys / n_y + v * xs / n_x) + phase)
    shift = float(rng.uniform(-DUP_BRIGHTNESS_MAX, DUP_BRIGHTNESS_MAX))
    out = img.pixels.astype(np.float64) * field + shift

    t = RigidTransform(
        rotation_deg=float(rng.uniform(-DUP_ROT_MAX_DEG, DUP_ROT_MAX_DEG)),
        tx=float(rng.uniform(-DUP_SHIFT_MAX_PX, DUP_SHIFT_MAX_PX)),
        ty=float(rng.uniform(-DUP_SHIFT_MAX_PX, DUP_SHIFT_MAX_PX)),
    )
    moved = apply_rigid(Image(np.clip(out, 0.0, 1.0).astype(np.float32)), t)

    sigma = float(rng.uniform(0.0, DUP_NOISE_SIGMA_MAX))
    noisy = moved.pixels.astype(np.float64) + rng.normal(0.0, sigma, size=moved.pixels.shape)
    return Image(np.clip(noisy, 0.0, 1.0).astype(np.float32))


def jitter_structures(spec: PhantomSpec, rng: np.random.Generator) -> PhantomSpec:
    """Axes +/-10 %, centers +/-3 px; redraw any jitter that would poke a
    structure outside the canvas, falling back to the original structure."""
    jittered = []
    for st in spec.structures:
        for _ in range(20):
            cand = replace(
                st,
                ax=st.ax * float(rng.uniform(1.0 - SIM_AXIS_JITTER, 1.0 + SIM_AXIS_JITTER)),
                ay=st.ay * float(rng.uniform(1.0 - SIM_AXIS_JITTER, 1.0 + SIM_AXIS_JITTER)),
                cx=st.cx + float(rng.uniform(-SIM_CENTER_JITTER_PX, SIM_CENTER_JITTER_PX)),
                cy=st.cy + float(rng.uniform(-SIM_CENTER_JITTER_PX, SIM_CENTER_JITTER_PX)),
            )
            reach = max(cand.ax, cand.ay) + 1.0
            if (reach <= cand.cx <= spec.size - 1 - reach
                    and reach <= cand.cy <= spec.size - 1 - reach):
                jittered.append(cand)
                break
        else:
            jittered.append(st)
    return replace(spec, structures=tuple(jittered))


# ---------------------------------------------------------------------------
# Corpus synthesis

@dataclass(frozen=True)
class ClassCounts:
    duplicate: int = 0
    similar: int = 0
    different: int = 0

    def __post_init__(self):
        if min(self.duplicate, self.similar, self.different) < 0:
            raise ValidationError("class counts must be >= 0")
        if self.total < 1:
            raise ValidationError("at least one synthetic child per real is required")

    @property
    def total(self) -> int:
        return self.duplicate + self.similar + self.different


@dataclass
class CorpusPaths:
    out_dir: Path
    real_manifest: Path
    synth_manifest: Path
    combined_manifest: Path
    labels: Path


def synthesize_corpus(out_dir, n_real: int, counts: ClassCounts, seed: int,
                      size: int = 64) -> CorpusPaths:
    """Render a full corpus to disk with manifests and a label file."""
    if n_real < 1:
        raise ValidationError(f"n_real must be >= 1, got {n_real}")
    if counts.total < 1:
        raise ValidationError("need at least one synthetic child per real image")
    out = Path(out_dir)
    (out / "real").mkdir(parents=True, exist_ok=True)
    (out / "synth").mkdir(parents=True, exist_ok=True)

    real_entries: list[ManifestEntry] = []
    synth_entries: list[ManifestEntry] = []
    labels: dict[tuple[str, str], str] = {}

    for i in range(n_real):
        rid = f"r{i:04d}"
        spec = PhantomSpec.random(int(rng_for(seed, "real", i).integers(2**31)), size=size)
        real_img = generate_phantom(spec)
        rel = f"real/{rid}.dst"
        save_image(real_img, out / rel)
        real_entries.append(ManifestEntry(id=rid, path=rel, role="real"))

        children: list[tuple[str, str, Image]] = []
        for j in range(counts.duplicate):
            rng = rng_for(seed, "dup", i, j)
            children.append((f"{rid}-d{j}", "duplicate", perturb_duplicate(real_img, rng)))
        for j in range(counts.similar):
            rng = rng_for(seed, "sim", i, j)
            sim_img = generate_phantom(jitter_structures(spec, rng))
            children.append((f"{rid}-s{j}", "similar", perturb_duplicate(sim_img, rng)))
        for j in range(counts.different):
            rng = rng_for(seed, "dif", i, j)
            other = PhantomSpec.random(int(rng.integers(2**31)), size=size)
            children.append((f"{rid}-x{j}", "different", generate_phantom(other)))

        for sid, label, img in children:
            rel = f"synth/{sid}.dst"
            save_image(img, out / rel)
            synth_entries.append(
                ManifestEntry(id=sid, path=rel, role="synthetic", source_base_id=rid)
            )
            labels[(rid, sid)] = label

    paths = CorpusPaths(
        out_dir=out,
        real_manifest=out / "real.json",
        synth_manifest=out / "synth.json",
        combined_manifest=out / "manifest.json",
        labels=out / "labels.jsonl",
    )
    save_manifest(real_entries, paths.real_manifest)
    save_manifest(synth_entries, paths.synth_manifest)
    save_manifest(real_entries + synth_entries, paths.combined_manifest)
    save_labels(labels, paths.labels)
    (out / "gen_config.json").write_text(json.dumps({
        "n_real": n_real, "size": size, "seed": seed,
        "counts": {"duplicate": counts.duplicate, "similar": counts.similar,
                   "different": counts.different},
    }, indent=1) + "\n")
    return paths


# ---------------------------------------------------------------------------
# FSIM-curated test pairs

@dataclass
class PairRecord:
    real_id: str
    synth_id: str
    label: str
    fsim: float | None = None
    picked: str | None = None  # "top" or "random"
    ssim: float | None = None
    score: float | None = None
    predicted: str | None = None


def save_pair_records(records: list[PairRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "real_id": r.real_id, "synth_id": r.synth_id, "label": r.label,
                "fsim": r.fsim, "picked": r.picked, "ssim": r.ssim,
                "score": r.score, "predicted": r.predicted,
            }) + "\n")


def load_pair_records(path) -> list[PairRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                out.append(PairRecord(
                    real_id=row["real_id"], synth_id=row["synth_id"], label=row["label"],
                    fsim=row.get("fsim"), picked=row.get("picked"), ssim=row.get("ssim"),
                    score=row.get("score"), predicted=row.get("predicted"),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"pair records {path}: line {lineno}: {exc}") from exc
    return out


def curate_test_set(real_entries: list[ManifestEntry], synth_entries: list[ManifestEntry],
                    labels: dict[tuple[str, str], str], images: dict[str, Image],
                    k_top: int = 3, k_rand: int = 3, seed: int = 0,
                    fsim_cfg: FsimConfig | None = None) -> list[PairRecord]:
    """Per real image: its k_top highest-FSIM children plus k_rand random
    others, FSIM ties broken by synthetic id ascending."""
    if k_top < 0 or k_rand < 0 or k_top + k_rand < 1:
        raise ValidationError("k_top/k_rand must be >= 0 and select at least one pair")
    cfg = fsim_cfg or FsimConfig()
    by_source: dict[str, list[ManifestEntry]] = {}
    for s in synth_entries:
        by_source.setdefault(s.source_base_id, []).append(s)

    feature_cache: dict[str, object] = {}

    def feats(iid: str):
        if iid not in feature_cache:
            feature_cache[iid] = fsim_features(images[iid], cfg)
        return feature_cache[iid]

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    records: list[PairRecord] = []
    for real in real_entries:
        cands = sorted(by_source.get(real.id, []), key=lambda e: e.id)
        if len(cands) < k_top + k_rand:
            raise ValidationError(
                f"real image {real.id!r} has {len(cands)} candidates, needs >= {k_top + k_rand}"
            )
        scored = [
            (fsim_from_features(feats(real.id), feats(c.id), cfg), c.id) for c in cands
        ]
        ranked = sorted(scored, key=lambda t: (-t[0], t[1]))
        top = ranked[:k_top]
        rest = ranked[k_top:]
        pick = rng.choice(len(rest), size=k_rand, replace=False) if k_rand else []
        chosen = [(f, sid, "top") for f, sid in top] + [
            (rest[int(i)][0], rest[int(i)][1], "random") for i in sorted(pick)
        ]
        for fs, sid, picked in chosen:
            key = (real.id, sid)
            if key not in labels:
                raise ValidationError(f"no ground-truth label for pair {key}")
            records.append(PairRecord(
                real_id=real.id, synth_id=sid, label=labels[key],
                fsim=float(fs), picked=picked,
            ))
    return records
