"""Small convolutional encoder producing unit-norm embeddings, plus its
binary checkpoint format.

Architecture: conv3x3 -> relu -> maxpool2x2, repeated per channel entry, then
coarse regional average pooling (a head_pool_regions^2 grid over the final
feature map), a dense head, and L2 normalization. Regional rather than global
pooling keeps large-scale layout in the embedding, which carries most of the
signal separating structurally different images, while a coarse grid stays
tolerant to the small rigid misalignments training augments over. Input
images are min-max normalized to [0, 1], proportionally rescaled so the
short side hits the configured size, and center-cropped.

Inference embedding is strictly one image per forward pass: index building
and validation promise bit-equality with single embed() calls, and BLAS
reduction order would break that if batch shape varied. Training batches go
through forward() directly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigMismatchError, FormatError, StateError, ValidationError
from .images import Image, center_crop, resize_bilinear
from .util import canonical_json

CKPT_MAGIC = b"DSCK"
CKPT_VERSION = 1
_OPT_M = "opt.m."
_OPT_V = "opt.v."


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 64
    channels: tuple[int, ...] = (16, 32, 64)
    embedding_dim: int = 64
    # head pools features over a coarse grid rather than globally, so the
    # embedding keeps large-scale layout while tolerating small misalignment
    head_pool_regions: int = 2
    frozen_block_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.embedding_dim < 8:
            raise ValidationError(f"embedding_dim must be >= 8, got {self.embedding_dim}")
        if len(self.channels) < 2:
            raise ValidationError(f"need >= 2 conv blocks, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise ValidationError(f"channel counts must be >= 1, got {self.channels}")
        if not 0 <= self.frozen_block_count <= len(self.channels):
            raise ValidationError(
                f"frozen_block_count {self.frozen_block_count} outside [0, {len(self.channels)}]"
            )
        if self.input_size % (2 ** len(self.channels)) != 0:
            raise ValidationError(
                f"input_size {self.input_size} not divisible by 2^{len(self.channels)}"
            )
        final_side = self.input_size // (2 ** len(self.channels))
        if self.head_pool_regions < 1 or final_side % self.head_pool_regions:
            raise ValidationError(
                f"head_pool_regions {self.head_pool_regions} does not tile the "
                f"final {final_side}x{final_side} feature map"
            )

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "channels": list(self.channels),
            "embedding_dim": self.embedding_dim,
            "head_pool_regions": self.head_pool_regions,
            "frozen_block_count": self.frozen_block_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {"input_size", "channels", "embedding_dim", "head_pool_regions",
                 "frozen_block_count"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown EncoderConfig keys: {sorted(unknown)}")
        return cls(
            input_size=int(d.get("input_size", 64)),
            channels=tuple(d.get("channels", (16, 32, 64))),
            embedding_dim=int(d.get("embedding_dim", 64)),
            head_pool_regions=int(d.get("head_pool_regions", 2)),
            frozen_block_count=int(d.get("frozen_block_count", 0)),
        )


def prepare_input(img: Image, size: int) -> np.ndarray:
    """Min-max normalize, proportionally rescale the short side, center-crop."""
    p = img.pixels
    lo, hi = float(p.min()), float(p.max())
    if hi > lo:
        norm = (p.astype(np.float64) - lo) / (hi - lo)
    else:
        norm = np.zeros_like(p, dtype=np.float64)
    im = Image(norm.astype(np.float32))
    h, w = im.pixels.shape
    if (h, w) != (size, size):
        scale = size / min(h, w)
        im = resize_bilinear(im, max(size, int(round(h * scale))), max(size, int(round(w * scale))))
        im = center_crop(im, size, size)
    return im.pixels


class Encoder:
    """Parameter container plus the forward graph."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params

    @classmethod
    def init_random(cls, config: EncoderConfig, seed: int) -> "Encoder":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        params: dict[str, Tensor] = {}
        cin = 1
        for i, cout in enumerate(config.channels):
            fan_in = cin * 9
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, 3, 3))
            params[f"conv{i}.w"] = Tensor(w.astype(np.float32), requires_grad=True)
            params[f"conv{i}.b"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
            cin = cout
        feat = cin * config.head_pool_regions**2
        w = rng.normal(0.0, np.sqrt(1.0 / feat), size=(feat, config.embedding_dim))
        params["head.w"] = Tensor(w.astype(np.float32), requires_grad=True)
        params["head.b"] = Tensor(np.zeros(config.embedding_dim, dtype=np.float32), requires_grad=True)
        return cls(config, params)

    def _require_params(self) -> dict[str, Tensor]:
        if self.params is None:
            raise StateError("encoder parameters not initialized")
        return self.params

    def forward(self, x: Tensor) -> Tensor:
        """(N, 1, S, S) -> (N, embedding_dim), rows unit-norm."""
        p = self._require_params()
        out = x
        for i in range(len(self.config.channels)):
            out = ad.conv2d(out, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=1, padding=1)
            out = ad.relu(out)
            out = ad.max_pool2d(out)
        out = ad.region_avg_pool(out, self.config.head_pool_regions)
        out = ad.dense(out, p["head.w"], p["head.b"])
        return ad.l2_normalize(out)

    def trainable_params(self) -> dict[str, Tensor]:
        p = self._require_params()
        frozen = {
            f"conv{i}.{s}" for i in range(self.config.frozen_block_count) for s in ("w", "b")
        }
        return {k: v for k, v in p.items() if k not in frozen}

    def embed_image(self, img: Image) -> np.ndarray:
        """Embedding of one image; float32 (embedding_dim,), unit norm."""
        x = prepare_input(img, self.config.input_size)
        t = Tensor(x[None, None, :, :].astype(np.float32))
        return self.forward(t).data[0].copy()

    def embed_images(self, imgs) -> np.ndarray:
        if not imgs:
            return np.zeros((0, self.config.embedding_dim), dtype=np.float32)
        return np.stack([self.embed_image(im) for im in imgs])


# ---------------------------------------------------------------------------
# Checkpoint format (DSCK): magic, u32 version, u32 blob length + canonical
# JSON config blob, then per-tensor records (u32 name length, name bytes,
# u32 ndim, ndim x u64 dims, float32 LE payload). Optimizer moments ride
# along as records with reserved "opt.m."/"opt.v." name prefixes.

@dataclass
class Checkpoint:
    encoder_config: EncoderConfig
    params: dict[str, np.ndarray]
    optimizer_state: dict | None = None
    epoch: int = 0
    val_mae_history: list[float] = field(default_factory=list)
    version: int = CKPT_VERSION

    def to_encoder(self) -> Encoder:
        tensors = {
            k: Tensor(v.astype(np.float32), requires_grad=True)
            for k, v in self.params.items()
        }
        return Encoder(self.encoder_config, tensors)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blob_dict = {
        "encoder_config": ckpt.encoder_config.to_dict(),
        "epoch": int(ckpt.epoch),
        "val_mae_history": [float(v) for v in ckpt.val_mae_history],
        "optimizer_step": (
            int(ckpt.optimizer_state["step"]) if ckpt.optimizer_state else None
        ),
    }
    blob = canonical_json(blob_dict).encode("utf-8")

    records: list[tuple[str, np.ndarray]] = list(ckpt.params.items())
    if ckpt.optimizer_state:
        for name, arr in ckpt.optimizer_state["m"].items():
            records.append((_OPT_M + name, arr))
        for name, arr in ckpt.optimizer_state["v"].items():
            records.append((_OPT_V + name, arr))

    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, arr in records:
            a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.astype("<f4", copy=False).tobytes())


def load_checkpoint(path, expected_config: EncoderConfig | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(n: int, pos: int, what: str):
        if len(blob) < pos + n:
            raise FormatError(
                f"truncated checkpoint: {what} needs {pos + n} bytes, file has {len(blob)}",
                offset=len(blob),
            )

    need(4, 0, "magic")
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    need(8, 4, "header")
    version, blob_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    need(blob_len, 12, "config blob")
    try:
        meta = json.loads(blob[12 : 12 + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad config blob: {exc}", offset=12) from exc
    config = EncoderConfig.from_dict(meta["encoder_config"])

    pos = 12 + blob_len
    tensors: dict[str, np.ndarray] = {}
    while pos < len(blob):
        need(4, pos, "record name length")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        need(name_len, pos, "record name")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        need(4, pos, "record ndim")
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if ndim > 8:
            raise FormatError(f"implausible ndim {ndim} in record {name!r}", offset=pos - 4)
        need(8 * ndim, pos, "record dims")
        dims = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        count = 1
        for d in dims:
            count *= d
        need(4 * count, pos, f"record {name!r} payload")
        tensors[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            .astype(np.float32)
            .reshape(dims)
        )
        pos += 4 * count

    params = {k: v for k, v in tensors.items() if not k.startswith((_OPT_M, _OPT_V))}
    opt_state = None
    if meta.get("optimizer_step") is not None:
        opt_state = {
            "m": {k[len(_OPT_M):]: v for k, v in tensors.items() if k.startswith(_OPT_M)},
            "v": {k[len(_OPT_V):]: v for k, v in tensors.items() if k.startswith(_OPT_V)},
            "step": int(meta["optimizer_step"]),
        }

    if expected_config is not None and config != expected_config:
        diffs = {}
        for key, exp in expected_config.to_dict().items():
            got = config.to_dict()[key]
            if exp != got:
                diffs[key] = (exp, got)
        raise ConfigMismatchError(diffs)

    return Checkpoint(
        encoder_config=config,
        params=params,
        optimizer_state=opt_state,
        epoch=int(meta.get("epoch", 0)),
        val_mae_history=[float(v) for v in meta.get("val_mae_history", [])],
        version=version,
    )
