import numpy as np
import pytest

from memaudit.images import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=32, w=None) -> Image:
    w = h if w is None else w
    return Image(rng.random((h, w), dtype=np.float32))


def naive_ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0,
               luminance: bool = True) -> float:
    """Independent per-window reference: explicit loops, no separable filter."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    r = (window - 1) // 2
    ax = np.arange(window) - r
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    w2 = np.outer(g1, g1)
    w2 = w2 / w2.sum()
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(r, h - r):
        for j in range(r, w - r):
            pa = a[i - r : i + r + 1, j - r : j + r + 1]
            pb = b[i - r : i + r + 1, j - r : j + r + 1]
            mu_a = (w2 * pa).sum()
            mu_b = (w2 * pb).sum()
            var_a = (w2 * pa * pa).sum() - mu_a**2
            var_b = (w2 * pb * pb).sum() - mu_b**2
            cov = (w2 * pa * pb).sum() - mu_a * mu_b
            cs = (2.0 * cov + c2) / (var_a + var_b + c2)
            if luminance:
                lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
                vals.append(lum * cs)
            else:
                vals.append(cs)
    return float(np.mean(vals))
