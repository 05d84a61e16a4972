"""Rigid registration by coarse-to-fine search over an SSIM objective.

The search maximizes brightness-normalized SSIM (contrast * structure, no
luminance term) of fixed vs. warped moving image. The coarse stage scans
rotation in {-10..10} deg step 2 and integer translations in {-8..8} px step
2; refinement halves the step down to 0.25 deg / 0.25 px around the best
candidate. Ties always resolve toward smaller-magnitude parameters, so
structureless inputs return the identity transform.

The objective is evaluated over a fixed interior band of window positions
(inset by half-window + the translation search bound) so every candidate is
scored on the same region; this also lets the coarse stage reuse windowed
statistics of each rotated image across all integer shifts.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import product

import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .images import Image, RigidTransform, apply_rigid
from .metrics import GROUND_TRUTH_SSIM, SsimConfig, gaussian_window, ssim

COARSE_ROT_DEG = 10.0
COARSE_ROT_STEP = 2.0
COARSE_SHIFT_PX = 8
COARSE_SHIFT_STEP = 2
FINE_MIN_STEP = 0.25
ROT_BOUND = 12.0
SHIFT_BOUND = 10.0


def _mag_key(rot: float, dx: float, dy: float):
    # Total order preferring small-magnitude parameters; deterministic.
    return (abs(rot), dx * dx + dy * dy, abs(dx), abs(dy), rot, dx, dy)


class _Objective:
    """Windowed-SSIM score over a fixed interior region of window centers."""

    def __init__(self, fixed: np.ndarray, cfg: SsimConfig, margin: int):
        self.win = cfg.window_size
        self.r = (self.win - 1) // 2
        self.c2 = (cfg.k2 * cfg.dynamic_range) ** 2
        self.w = gaussian_window(self.win, cfg.gaussian_sigma)
        self.margin = margin
        h, _w = fixed.shape
        lo = self.r + margin
        self.rows = slice(lo, fixed.shape[0] - lo)
        self.cols = slice(lo, fixed.shape[1] - lo)
        self.fixed = fixed
        self.mu_f = self._band_filter(fixed)
        self.var_f = self._band_filter(fixed * fixed) - self.mu_f**2

    def _filter(self, field: np.ndarray) -> np.ndarray:
        out = ndimage.correlate1d(field, self.w, axis=0, mode="constant")
        return ndimage.correlate1d(out, self.w, axis=1, mode="constant")

    def _band_filter(self, field: np.ndarray) -> np.ndarray:
        # Filter values on the band only; every window there has full support
        # inside the crop, so values match full-frame filtering bit for bit.
        r = self.r
        crop = field[self.rows.start - r : self.rows.stop + r,
                     self.cols.start - r : self.cols.stop + r]
        out = ndimage.correlate1d(crop, self.w, axis=0, mode="constant")
        out = ndimage.correlate1d(out[r:-r, :], self.w, axis=1, mode="constant")
        return out[:, r:-r]

    def stats(self, arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self._filter(arr), self._filter(arr * arr)

    def _index_mean(self, mu_m, var_m, eab) -> float:
        cov = eab - self.mu_f * mu_m
        cs = (2.0 * cov + self.c2) / (self.var_f + var_m + self.c2)
        return float(cs.mean())

    def score_array(self, moving: np.ndarray) -> float:
        mu_m = self._band_filter(moving)
        var_m = self._band_filter(moving * moving) - mu_m**2
        eab = self._band_filter(self.fixed * moving)
        return self._index_mean(mu_m, var_m, eab)

    def score_shifted(self, rot_arr: np.ndarray, mu_full: np.ndarray,
                      e2_full: np.ndarray, dx: int, dy: int) -> float:
        """Score an integer shift of an already-rotated image.

        Valid only while |dx|, |dy| <= margin: then every window in the band
        stays inside the shifted image's support and stats are plain slices.
        """
        rows = slice(self.rows.start - dy, self.rows.stop - dy)
        cols = slice(self.cols.start - dx, self.cols.stop - dx)
        mu_m = mu_full[rows, cols]
        var_m = e2_full[rows, cols] - mu_m**2
        h, w = rot_arr.shape
        shifted = np.zeros_like(rot_arr)
        shifted[max(dy, 0) : h + min(dy, 0), max(dx, 0) : w + min(dx, 0)] = rot_arr[
            max(-dy, 0) : h + min(-dy, 0), max(-dx, 0) : w + min(-dx, 0)
        ]
        eab = self._filter(self.fixed * shifted)[self.rows, self.cols]
        return self._index_mean(mu_m, var_m, eab)

    def scores_for_shifts(self, rot_arr: np.ndarray, mu_full: np.ndarray,
                          e2_full: np.ndarray, shifts) -> list[float]:
        """score_shifted for every shift at once, same values bit for bit.

        Cross terms go through one stacked band-restricted filter instead of
        one full-frame filter per shift. Shifted band support stays inside
        the frame whenever |shift| <= margin, so plain slices replace
        zero-embedding.
        """
        r = self.r
        sup_r = slice(self.rows.start - r, self.rows.stop + r)
        sup_c = slice(self.cols.start - r, self.cols.stop + r)
        fsup = self.fixed[sup_r, sup_c]
        stack = np.empty((len(shifts),) + fsup.shape, dtype=rot_arr.dtype)
        for k, (dx, dy) in enumerate(shifts):
            stack[k] = rot_arr[sup_r.start - dy : sup_r.stop - dy,
                               sup_c.start - dx : sup_c.stop - dx]
        stack *= fsup
        eab_all = ndimage.correlate1d(stack, self.w, axis=1, mode="constant")
        eab_all = ndimage.correlate1d(eab_all[:, r:-r, :], self.w, axis=2,
                                      mode="constant")[:, :, r:-r]
        out = []
        for k, (dx, dy) in enumerate(shifts):
            rows = slice(self.rows.start - dy, self.rows.stop - dy)
            cols = slice(self.cols.start - dx, self.cols.stop - dx)
            mu_m = mu_full[rows, cols]
            var_m = e2_full[rows, cols] - mu_m**2
            out.append(self._index_mean(mu_m, var_m, eab_all[k]))
        return out


@lru_cache(maxsize=8)
def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                       indexing="ij")


def _warp_array(arr: np.ndarray, rot_deg: float, tx: float, ty: float) -> np.ndarray:
    if rot_deg == 0.0 and tx == 0.0 and ty == 0.0:
        return arr
    h, w = arr.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(rot_deg)
    c, s = math.cos(th), math.sin(th)
    ys, xs = _grid(h, w)
    dx = xs - tx - cx
    dy = ys - ty - cy
    src_x = cx + c * dx + s * dy
    src_y = cy - s * dx + c * dy
    return ndimage.map_coordinates(arr, [src_y, src_x], order=1, mode="constant", cval=0.0)


def _pick_margin(h: int, w: int) -> int:
    side = min(h, w)
    if side >= 48:
        return 10
    if side >= 34:
        return 8
    return 0


def register_rigid(fixed: Image, moving: Image, cfg: SsimConfig | None = None) -> RigidTransform:
    """Best rigid transform t maximizing SSIM(fixed, apply_rigid(moving, t))."""
    if fixed.pixels.shape != moving.pixels.shape:
        raise ShapeError(
            f"register_rigid: image shapes differ, {fixed.pixels.shape} vs {moving.pixels.shape}"
        )
    base = cfg or GROUND_TRUTH_SSIM
    obj_cfg = SsimConfig(
        window_size=base.window_size,
        gaussian_sigma=base.gaussian_sigma,
        k1=base.k1,
        k2=base.k2,
        dynamic_range=base.dynamic_range,
        luminance_term_enabled=False,
    )
    fa = fixed.pixels.astype(np.float64)
    ma = moving.pixels.astype(np.float64)
    margin = _pick_margin(*fa.shape)
    obj = _Objective(fa, obj_cfg, margin)
    fast = margin >= COARSE_SHIFT_PX

    # every candidate must stay applicable by apply_rigid on this image size
    h, w = fa.shape
    shift_cap = min(SHIFT_BOUND, w / 4.0, h / 4.0)

    rotations = sorted(
        np.arange(-COARSE_ROT_DEG, COARSE_ROT_DEG + 1e-9, COARSE_ROT_STEP),
        key=lambda r: (abs(r), r),
    )
    shifts = sorted(
        (
            d
            for d in product(
                range(-COARSE_SHIFT_PX, COARSE_SHIFT_PX + 1, COARSE_SHIFT_STEP),
                repeat=2,
            )
            if abs(d[0]) <= shift_cap and abs(d[1]) <= shift_cap
        ),
        key=lambda d: (d[0] ** 2 + d[1] ** 2, abs(d[0]), abs(d[1]), d[0], d[1]),
    )

    best_score = -np.inf
    best = (0.0, 0.0, 0.0)
    for rot in rotations:
        rot = float(rot)
        rot_arr = _warp_array(ma, rot, 0.0, 0.0)
        if fast:
            mu_full, e2_full = obj.stats(rot_arr)
            scores = obj.scores_for_shifts(rot_arr, mu_full, e2_full, shifts)
        else:
            scores = [
                obj.score_array(_warp_array(ma, rot, float(dx), float(dy)))
                for dx, dy in shifts
            ]
        for (dx, dy), score in zip(shifts, scores):
            if score > best_score:
                best_score = score
                best = (rot, float(dx), float(dy))

    # Local refinement with halved steps; evaluate the full 3x3x3 neighborhood
    # and move while strictly improving. Neighborhoods of consecutive moves
    # overlap, so repeated candidates are served from a score cache.
    seen_scores: dict[tuple[float, float, float], float] = {}

    def eval_at(rot: float, tx: float, ty: float) -> float:
        key = (rot, tx, ty)
        if key not in seen_scores:
            seen_scores[key] = obj.score_array(_warp_array(ma, rot, tx, ty))
        return seen_scores[key]

    step = COARSE_ROT_STEP / 2.0
    while step >= FINE_MIN_STEP - 1e-12:
        moved = True
        iters = 0
        while moved and iters < 12:
            moved = False
            iters += 1
            cands = []
            for di, dj, dk in product((-1, 0, 1), repeat=3):
                if di == dj == dk == 0:
                    continue
                rot = best[0] + di * step
                tx = best[1] + dj * step
                ty = best[2] + dk * step
                if abs(rot) > ROT_BOUND or abs(tx) > shift_cap or abs(ty) > shift_cap:
                    continue
                cands.append((rot, tx, ty))
            cands.sort(key=lambda c: _mag_key(*c))
            for rot, tx, ty in cands:
                score = eval_at(rot, tx, ty)
                if score > best_score:
                    best_score = score
                    best = (rot, tx, ty)
                    moved = True
        step /= 2.0

    return RigidTransform(*best)


def registered_ssim(
    real: Image, synth: Image, cfg: SsimConfig | None = None
) -> tuple[float, RigidTransform]:
    """Align synth to real, then score; defaults to the ground-truth config."""
    cfg = cfg or GROUND_TRUTH_SSIM
    t = register_rigid(real, synth, cfg)
    warped = apply_rigid(synth, t)
    return ssim(real, warped, cfg), t
