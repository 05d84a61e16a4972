"""Windowed SSIM and FSIM between same-sized grayscale images.

SSIM statistics use a normalized Gaussian window and only window positions
fully inside both images (no padding). `luminance_term_enabled=False` drops
the luminance factor and scores contrast * structure only, which makes the
index invariant to additive brightness shifts.

FSIM combines phase congruency (computed from a log-Gabor filter bank built
here) with gradient-magnitude similarity. Inputs are scaled by 255 internally
so the published stabilization constants T1/T2 apply unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError
from .images import Image


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    luminance_term_enabled: bool = True

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValidationError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.gaussian_sigma <= 0:
            raise ValidationError(f"gaussian_sigma must be > 0, got {self.gaussian_sigma}")
        if self.k1 <= 0 or self.k2 <= 0 or self.dynamic_range <= 0:
            raise ValidationError("k1, k2 and dynamic_range must be > 0")


#: Ground-truth flavor used throughout the pipeline: brightness-normalized.
GROUND_TRUTH_SSIM = SsimConfig(luminance_term_enabled=False)


@lru_cache(maxsize=16)
def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """1-D Gaussian taps, normalized to sum 1 (float64)."""
    half = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return w / w.sum()


def _check_pair(a: Image, b: Image, op: str) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = a.pixels, b.pixels
    if pa.shape != pb.shape:
        raise ShapeError(f"{op}: image shapes differ, {pa.shape} vs {pb.shape}")
    return pa.astype(np.float64), pb.astype(np.float64)


def _windowed(field: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted window means at every interior position."""
    r = (len(w) - 1) // 2
    full = ndimage.correlate1d(field, w, axis=0, mode="constant")
    full = ndimage.correlate1d(full, w, axis=1, mode="constant")
    return full[r : field.shape[0] - r, r : field.shape[1] - r]


def ssim_map(a: Image, b: Image, cfg: SsimConfig | None = None) -> np.ndarray:
    """Per-window SSIM values over all fully interior window positions."""
    cfg = cfg or SsimConfig()
    pa, pb = _check_pair(a, b, "ssim")
    if min(pa.shape) < cfg.window_size:
        raise ValidationError(
            f"ssim: image {pa.shape} smaller than window {cfg.window_size}"
        )
    w = gaussian_window(cfg.window_size, cfg.gaussian_sigma)
    mu_a = _windowed(pa, w)
    mu_b = _windowed(pb, w)
    ea2 = _windowed(pa * pa, w)
    eb2 = _windowed(pb * pb, w)
    eab = _windowed(pa * pb, w)
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    if not cfg.luminance_term_enabled:
        return cs
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return lum * cs


def ssim(a: Image, b: Image, cfg: SsimConfig | None = None) -> float:
    return float(np.mean(ssim_map(a, b, cfg)))


# ---------------------------------------------------------------------------
# FSIM

@dataclass(frozen=True)
class FsimConfig:
    scales: int = 4
    orientations: int = 4
    min_wavelength: float = 6.0
    scale_factor: float = 2.0
    sigma_on_f: float = 0.55
    d_theta_on_sigma: float = 1.2
    noise_k: float = 2.0
    t_pc: float = 0.85      # phase-congruency stabilization (for [0,255] data)
    t_grad: float = 160.0   # gradient stabilization (for [0,255] data)
    intensity_scale: float = 255.0

    def __post_init__(self):
        if self.scales < 2 or self.orientations < 2:
            raise ValidationError("FSIM needs >= 2 scales and >= 2 orientations")
        if self.min_wavelength < 2 or self.scale_factor <= 1:
            raise ValidationError("bad log-Gabor bank geometry")
        if self.sigma_on_f <= 0 or self.sigma_on_f >= 1:
            raise ValidationError(f"sigma_on_f must be in (0, 1), got {self.sigma_on_f}")
        if self.d_theta_on_sigma <= 0:
            raise ValidationError("d_theta_on_sigma must be > 0")
        if self.t_pc <= 0 or self.t_grad <= 0 or self.intensity_scale <= 0:
            raise ValidationError("stabilization constants must be > 0")


@dataclass(frozen=True)
class FsimFeatures:
    """Per-image maps FSIM compares: phase congruency and gradient magnitude."""

    pc: np.ndarray
    grad: np.ndarray


@lru_cache(maxsize=8)
def _log_gabor_bank(rows: int, cols: int, scales: int, orientations: int,
                    min_wavelength: float, scale_factor: float,
                    sigma_on_f: float, d_theta_on_sigma: float):
    """Frequency-domain filters [scale][orientation], plus per-filter energy
    sums and spatial-domain squared filters needed for noise estimation."""
    ys = np.arange(rows) - rows // 2
    xs = np.arange(cols) - cols // 2
    y, x = np.meshgrid(ys / rows, xs / cols, indexing="ij")
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0

    # Low-pass to kill the highest frequencies the bank would otherwise alias.
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** (2 * 15))

    log_gabors = []
    for s in range(scales):
        wavelength = min_wavelength * scale_factor**s
        f0 = 1.0 / wavelength
        lg = np.exp(-(np.log(radius / f0) ** 2) / (2.0 * math.log(sigma_on_f) ** 2))
        lg = lg * lowpass
        lg[0, 0] = 0.0
        log_gabors.append(lg)

    theta_sigma = math.pi / orientations / d_theta_on_sigma
    spreads = []
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    for o in range(orientations):
        angl = o * math.pi / orientations
        ds = sin_t * math.cos(angl) - cos_t * math.sin(angl)
        dc = cos_t * math.cos(angl) + sin_t * math.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spreads.append(np.exp(-(dtheta**2) / (2.0 * theta_sigma**2)))

    filters = [[lg * sp for sp in spreads] for lg in log_gabors]
    # Spatial-domain filters, scaled so their squared sums estimate noise
    # energy the same way the frequency-domain sums do.
    ifft_filters = [
        [np.real(np.fft.ifft2(f)) * math.sqrt(rows * cols) for f in row]
        for row in filters
    ]
    return filters, ifft_filters


def _phase_congruency(arr: np.ndarray, cfg: FsimConfig) -> np.ndarray:
    rows, cols = arr.shape
    filters, ifft_filters = _log_gabor_bank(
        rows, cols, cfg.scales, cfg.orientations,
        cfg.min_wavelength, cfg.scale_factor, cfg.sigma_on_f, cfg.d_theta_on_sigma,
    )
    fimg = np.fft.fft2(arr)
    epsilon = 1e-4

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(cfg.orientations):
        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        eo_parts = []
        for s in range(cfg.scales):
            eo = np.fft.ifft2(fimg * filters[s][o])
            e, od = np.real(eo), np.imag(eo)
            an = np.abs(eo)
            eo_parts.append((e, od, an))
            sum_e += e
            sum_o += od
            sum_an += an
        x_energy = np.sqrt(sum_e**2 + sum_o**2) + epsilon
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for e, od, _ in eo_parts:
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        # Rayleigh-model noise threshold estimated from the smallest scale.
        an0 = eo_parts[0][2]
        median_e2n = float(np.median(an0**2))
        mean_e2n = -median_e2n / math.log(0.5)
        em_n = float(np.sum(filters[0][o] ** 2))
        noise_power = mean_e2n / em_n

        est_sum_an2 = np.zeros((rows, cols))
        for s in range(cfg.scales):
            est_sum_an2 += ifft_filters[s][o] ** 2
        est_sum_aiaj = np.zeros((rows, cols))
        for si in range(cfg.scales):
            for sj in range(si + 1, cfg.scales):
                est_sum_aiaj += ifft_filters[si][o] * ifft_filters[sj][o]
        est_noise_energy2 = (
            2.0 * noise_power * float(np.sum(est_sum_an2))
            + 4.0 * noise_power * float(np.sum(est_sum_aiaj))
        )
        tau = math.sqrt(max(est_noise_energy2, 0.0) / 2.0)
        est_noise_energy = tau * math.sqrt(math.pi / 2.0)
        est_noise_sigma = math.sqrt(max((2.0 - math.pi / 2.0) * tau**2, 0.0))
        t = (est_noise_energy + cfg.noise_k * est_noise_sigma) / 1.7

        energy_all += np.maximum(energy - t, 0.0)
        an_all += sum_an

    return energy_all / (an_all + 1e-12)


_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
_SCHARR_Y = _SCHARR_X.T


def _downsample_factor(h: int, w: int) -> int:
    return max(1, int(round(min(h, w) / 256.0)))


def _prepare(arr: np.ndarray, cfg: FsimConfig) -> np.ndarray:
    a = arr.astype(np.float64) * cfg.intensity_scale
    f = _downsample_factor(*a.shape)
    if f > 1:
        h = (a.shape[0] // f) * f
        w = (a.shape[1] // f) * f
        a = a[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))
    return a


def fsim_features(img: Image, cfg: FsimConfig | None = None) -> FsimFeatures:
    cfg = cfg or FsimConfig()
    a = _prepare(img.pixels, cfg)
    pc = _phase_congruency(a, cfg)
    gx = ndimage.correlate(a, _SCHARR_X, mode="constant")
    gy = ndimage.correlate(a, _SCHARR_Y, mode="constant")
    return FsimFeatures(pc=pc, grad=np.sqrt(gx * gx + gy * gy))


def fsim_from_features(fa: FsimFeatures, fb: FsimFeatures, cfg: FsimConfig | None = None) -> float:
    cfg = cfg or FsimConfig()
    if fa.pc.shape != fb.pc.shape:
        raise ShapeError(f"fsim: feature shapes differ, {fa.pc.shape} vs {fb.pc.shape}")
    s_pc = (2.0 * fa.pc * fb.pc + cfg.t_pc) / (fa.pc**2 + fb.pc**2 + cfg.t_pc)
    s_g = (2.0 * fa.grad * fb.grad + cfg.t_grad) / (fa.grad**2 + fb.grad**2 + cfg.t_grad)
    pcm = np.maximum(fa.pc, fb.pc)
    denom = float(np.sum(pcm))
    if denom < 1e-12:
        # Featureless pair: every local similarity is defined, the weighting
        # is vacuous, so fall back to the unweighted mean.
        return float(np.mean(s_pc * s_g))
    return float(np.sum(s_pc * s_g * pcm) / denom)


def fsim(a: Image, b: Image, cfg: FsimConfig | None = None) -> float:
    cfg = cfg or FsimConfig()
    _check_pair(a, b, "fsim")
    return fsim_from_features(fsim_features(a, cfg), fsim_features(b, cfg), cfg)
