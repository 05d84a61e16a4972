"""Encoder training: stratified pair sets with registered-SSIM ground truth,
the two-view regression loss, validation MAE, and the epoch loop.

Ground truth s_ab is computed once per pair on the unaugmented images;
augmentations only perturb the encoder's two input views. Training is
deterministic for a fixed seed: every random stream (pair sampling, batch
order, augmentations, init) is derived from the master seed, and worker
processes only parallelize the order-preserving s_ab precompute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, Tape, Tensor
from .encoder import Checkpoint, Encoder, EncoderConfig, prepare_input
from .errors import StateError, ValidationError
from .images import (
    CONTRAST_RANGE,
    ROTATE_LIMIT_DEG,
    Image,
    RigidTransform,
    apply_augmentation,
    sample_augmentation,
)
from .manifest import ManifestEntry, PairSsim, load_images
from .register import registered_ssim
from .util import parallel_map, rng_for


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    lr_min_factor: float = 0.05
    weight_decay: float = 1e-3
    seed: int = 0
    pairs_per_epoch: int = 4096
    # candidate pool size as a multiple of pairs_per_epoch; the pool is what
    # gets registered-SSIM scored, so this is the main precompute cost knob
    pool_factor: float = 2.0
    ssim_stratification_bins: int = 5
    val_pairs: int = 256
    # each training view is augmented with this probability, else fed clean;
    # clean views anchor the regression while augmented ones buy invariance
    aug_prob: float = 0.5
    rotate_limit_deg: float = ROTATE_LIMIT_DEG
    contrast_low: float = CONTRAST_RANGE[0]
    contrast_high: float = CONTRAST_RANGE[1]

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValidationError("lr and weight_decay must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError("lr_schedule must be 'constant' or 'cosine'")
        if not 0 <= self.lr_min_factor <= 1:
            raise ValidationError("lr_min_factor must lie in [0, 1]")
        if self.pairs_per_epoch < 1 or self.val_pairs < 1:
            raise ValidationError("pairs_per_epoch and val_pairs must be >= 1")
        if self.pool_factor < 1.0:
            raise ValidationError("pool_factor must be >= 1")
        if not 0.0 <= self.aug_prob <= 1.0:
            raise ValidationError("aug_prob must lie in [0, 1]")
        if self.ssim_stratification_bins < 1:
            raise ValidationError("ssim_stratification_bins must be >= 1")
        if not 0 <= self.rotate_limit_deg <= ROTATE_LIMIT_DEG:
            raise ValidationError(f"rotate_limit_deg outside [0, {ROTATE_LIMIT_DEG}]")
        if (self.contrast_low < CONTRAST_RANGE[0] or self.contrast_high > CONTRAST_RANGE[1]
                or self.contrast_low > self.contrast_high):
            raise ValidationError(f"contrast range outside {CONTRAST_RANGE}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "lr_schedule": self.lr_schedule, "lr_min_factor": self.lr_min_factor,
            "weight_decay": self.weight_decay, "seed": self.seed,
            "pairs_per_epoch": self.pairs_per_epoch,
            "pool_factor": self.pool_factor,
            "ssim_stratification_bins": self.ssim_stratification_bins,
            "val_pairs": self.val_pairs,
            "aug_prob": self.aug_prob,
            "rotate_limit_deg": self.rotate_limit_deg,
            "contrast_low": self.contrast_low, "contrast_high": self.contrast_high,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**{k: d[k] for k in d})


# Pool images are handed to forked workers through module state to avoid
# pickling the whole corpus per task.
_WORKER_IMAGES: dict[str, Image] = {}


def _pair_worker(ids: tuple[str, str]):
    real = _WORKER_IMAGES[ids[0]]
    synth = _WORKER_IMAGES[ids[1]]
    score, t = registered_ssim(real, synth)
    return score, t.rotation_deg, t.tx, t.ty


def compute_pair_ssims(images: dict[str, Image], id_pairs: list[tuple[str, str]],
                       workers: int = 1) -> list[PairSsim]:
    """Registered brightness-normalized SSIM for each (real_id, synth_id)."""
    global _WORKER_IMAGES
    _WORKER_IMAGES = images
    try:
        rows = parallel_map(_pair_worker, id_pairs, workers)
    finally:
        _WORKER_IMAGES = {}
    return [
        PairSsim(rid, sid, float(score), RigidTransform(rot, tx, ty))
        for (rid, sid), (score, rot, tx, ty) in zip(id_pairs, rows)
    ]


def build_pair_set(entries: list[ManifestEntry], images: dict[str, Image],
                   rng: np.random.Generator, size: int, bins: int,
                   pool_factor: float = 2.0, workers: int = 1) -> list[PairSsim]:
    """Sample `size` pairs whose ground-truth SSIM histogram over `bins`
    equal-width bins in [0, 1] is as uniform as the candidate pool allows.

    The pool mixes every same-source (real, own child) pair with random cross
    pairs; s_ab is computed for the whole pool, then bins are drained
    round-robin starting from bin 0.
    """
    reals = [e for e in entries if e.role == "real"]
    synths = [e for e in entries if e.role == "synthetic"]
    if not reals or not synths:
        raise ValidationError("pair sampling needs at least one real and one synthetic image")
    real_ids = {e.id for e in reals}

    pool: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for s in synths:
        if s.source_base_id in real_ids:
            pair = (s.source_base_id, s.id)
            pool.append(pair)
            seen.add(pair)
    target = max(size, int(math.ceil(size * pool_factor)))
    tries = 0
    max_tries = 50 * target + 100
    while len(pool) < target and tries < max_tries:
        tries += 1
        r = reals[int(rng.integers(len(reals)))]
        s = synths[int(rng.integers(len(synths)))]
        pair = (r.id, s.id)
        if s.source_base_id == r.id or pair in seen:
            continue
        pool.append(pair)
        seen.add(pair)

    scored = compute_pair_ssims(images, pool, workers=workers)

    buckets: list[list[PairSsim]] = [[] for _ in range(bins)]
    for p in scored:
        s = min(max(p.ssim, 0.0), 1.0)
        b = min(bins - 1, int(s * bins))
        buckets[b].append(p)
    for b in buckets:
        rng.shuffle(b)

    chosen: list[PairSsim] = []
    while len(chosen) < size and any(buckets):
        for b in buckets:
            if b and len(chosen) < size:
                chosen.append(b.pop())
        if not any(buckets):
            break
    return chosen


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a zero-based epoch under the configured schedule.

    Cosine anneals from lr to lr * lr_min_factor over the run; a single-epoch
    run stays at the initial lr.
    """
    if cfg.lr_schedule == "constant" or cfg.epochs == 1:
        return cfg.lr
    frac = epoch / (cfg.epochs - 1)
    lo = cfg.lr * cfg.lr_min_factor
    return lo + (cfg.lr - lo) * 0.5 * (1.0 + math.cos(math.pi * frac))


def loss_batch(encoder: Encoder, view_a: Tensor, view_b: Tensor, targets: Tensor) -> Tensor:
    """Mean squared difference between embedding cosine and target SSIM."""
    emb_a = encoder.forward(view_a)
    emb_b = encoder.forward(view_b)
    cos = ad.cosine_similarity(emb_a, emb_b)
    return ad.mse_scalar(cos, targets)


def validate_mae(pairs: list[PairSsim], images: dict[str, Image], encoder: Encoder) -> float:
    """Mean |cosine - s_ab| over pairs, no augmentation."""
    if not pairs:
        raise ValidationError("validate_mae: empty pair list")
    cache: dict[str, np.ndarray] = {}

    def emb(iid: str) -> np.ndarray:
        if iid not in cache:
            cache[iid] = encoder.embed_image(images[iid])
        return cache[iid]

    total = 0.0
    for p in pairs:
        cos = float(np.dot(emb(p.real_id).astype(np.float64), emb(p.synth_id).astype(np.float64)))
        total += abs(cos - p.ssim)
    return total / len(pairs)


@dataclass
class TrainHistory:
    batch_losses: list[list[float]] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = -1


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: TrainHistory
    train_pairs: list[PairSsim]
    val_pairs: list[PairSsim]


def _batch_views(pairs: list[PairSsim], images: dict[str, Image], cfg: TrainConfig,
                 aug_rng: np.random.Generator, input_size: int):
    n = len(pairs)
    a = np.empty((n, 1, input_size, input_size), dtype=np.float32)
    b = np.empty((n, 1, input_size, input_size), dtype=np.float32)
    t = np.empty(n, dtype=np.float32)
    for i, p in enumerate(pairs):
        for buf, iid in ((a, p.real_id), (b, p.synth_id)):
            if aug_rng.random() < cfg.aug_prob:
                spec = sample_augmentation(
                    aug_rng, rotate_limit_deg=cfg.rotate_limit_deg,
                    contrast_range=(cfg.contrast_low, cfg.contrast_high),
                )
                view = apply_augmentation(images[iid], spec)
            else:
                view = images[iid]
            buf[i, 0] = prepare_input(view, input_size)
        t[i] = p.ssim
    return a, b, t


def train(train_entries: list[ManifestEntry], val_entries: list[ManifestEntry],
          train_cfg: TrainConfig, encoder_cfg: EncoderConfig, *,
          images: dict[str, Image] | None = None, base_dir=None,
          workers: int = 1, on_epoch=None) -> TrainResult:
    """Full training run; returns the best-validation-MAE checkpoint.

    `on_epoch(epoch, mean_loss, val_mae)` is called after each epoch when
    provided. Results are bit-identical for a fixed seed regardless of
    `workers` (parallelism only touches the order-preserving s_ab precompute).
    """
    if images is None:
        images = {}
        images.update(load_images(train_entries, base_dir))
        images.update(load_images(val_entries, base_dir))

    seed = train_cfg.seed
    train_pairs = build_pair_set(
        train_entries, images, rng_for(seed, "train-pairs"),
        size=train_cfg.pairs_per_epoch, bins=train_cfg.ssim_stratification_bins,
        pool_factor=train_cfg.pool_factor, workers=workers,
    )
    val_pairs = build_pair_set(
        val_entries, images, rng_for(seed, "val-pairs"),
        size=train_cfg.val_pairs, bins=train_cfg.ssim_stratification_bins,
        workers=workers,
    )
    if not train_pairs or not val_pairs:
        raise ValidationError("empty training or validation pair set")

    encoder = Encoder.init_random(encoder_cfg, int(rng_for(seed, "init").integers(2**31)))
    opt = AdamW(encoder.trainable_params(), lr=train_cfg.lr,
                weight_decay=train_cfg.weight_decay)

    history = TrainHistory()
    best_mae = float("inf")
    best_params: dict[str, np.ndarray] = {}
    best_opt: dict | None = None
    best_epoch = -1

    for epoch in range(train_cfg.epochs):
        opt.lr = lr_at_epoch(train_cfg, epoch)
        order = rng_for(seed, "order", epoch).permutation(len(train_pairs))
        aug_rng = rng_for(seed, "aug", epoch)
        losses: list[float] = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_pairs[i] for i in order[start : start + train_cfg.batch_size]]
            va, vb, tgt = _batch_views(batch, images, train_cfg, aug_rng,
                                       encoder_cfg.input_size)
            for p in encoder.trainable_params().values():
                p.zero_grad()
            with Tape() as tape:
                loss = loss_batch(encoder, Tensor(va), Tensor(vb), Tensor(tgt))
            value = float(loss.data)
            if math.isnan(value):
                raise StateError(
                    f"NaN loss at epoch {epoch}, batch {start // train_cfg.batch_size}"
                )
            tape.backward(loss)
            opt.step()
            losses.append(value)

        mae = validate_mae(val_pairs, images, encoder)
        history.batch_losses.append(losses)
        history.epoch_loss.append(float(np.mean(losses)))
        history.val_mae.append(mae)
        if mae < best_mae:
            best_mae = mae
            best_epoch = epoch
            best_params = {k: v.data.copy() for k, v in encoder.params.items()}
            st = opt.state_arrays()
            best_opt = {
                "m": {k: v.copy() for k, v in st["m"].items()},
                "v": {k: v.copy() for k, v in st["v"].items()},
                "step": st["step"],
            }
        if on_epoch is not None:
            on_epoch(epoch, history.epoch_loss[-1], mae)

    history.best_epoch = best_epoch
    ckpt = Checkpoint(
        encoder_config=encoder_cfg,
        params=best_params,
        optimizer_state=best_opt,
        epoch=best_epoch,
        val_mae_history=list(history.val_mae),
    )
    return TrainResult(ckpt, history, train_pairs, val_pairs)
