"""Central finite-difference checking for the autodiff ops.

Two regimes: the production dtype (float32, h = 1e-3, tolerance 1e-3 with a
unit floor on the denominator, since float32 central differences carry ~1e-4
absolute noise) and a float64 shadow (h = 1e-5, tolerance 1e-6) that is the
strict correctness check. Both build the same graph; only the buffer dtype
changes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f: Callable[[Sequence[Tensor]], Tensor],
                     tensors: Sequence[Tensor], index: int, h: float,
                     entries: Sequence[int] | None = None) -> np.ndarray:
    """Elementwise central differences of scalar f w.r.t. tensors[index].

    `entries` restricts the probe to those flat indices; unprobed positions
    stay zero in the returned array.
    """
    base = tensors[index].data
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    probe = range(flat.size) if entries is None else entries
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(tensors).data)
        flat[i] = orig - h
        lo = float(f(tensors).data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad.reshape(base.shape)


def check_gradients(f: Callable[[Sequence[Tensor]], Tensor],
                    tensors: Sequence[Tensor],
                    h: float | None = None,
                    tol: float | None = None,
                    floor: float | None = None,
                    sample: int | None = None,
                    seed: int = 0) -> float:
    """Compare analytic and numeric grads for every requires_grad tensor.

    Returns the worst relative error seen; raises AssertionError above tol.
    Defaults depend on dtype: float32 -> (1e-3, 1e-3, floor 1.0),
    float64 -> (1e-5, 1e-6, floor 1e-6). `sample` caps the probed entries
    per tensor (seeded without-replacement draw); None probes all of them.
    """
    dtype = tensors[0].data.dtype
    if dtype == np.float64:
        h = 1e-5 if h is None else h
        tol = 1e-6 if tol is None else tol
        floor = 1e-6 if floor is None else floor
    else:
        h = 1e-3 if h is None else h
        tol = 1e-3 if tol is None else tol
        floor = 1.0 if floor is None else floor

    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = f(tensors)
    tape.backward(loss)

    pick = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    worst = 0.0
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        entries = None
        if sample is not None and t.data.size > sample:
            entries = sorted(
                int(k) for k in pick.choice(t.data.size, size=sample, replace=False)
            )
        numeric = numeric_gradient(f, tensors, i, h, entries)
        a = np.asarray(analytic, dtype=np.float64).reshape(-1)
        n = numeric.reshape(-1)
        if entries is not None:
            a = a[entries]
            n = n[entries]
        err = relative_error(a, n, floor)
        worst = max(worst, err)
        if err > tol:
            raise AssertionError(
                f"gradient check failed for input {i}: relative error {err:.3e} > {tol:g}"
            )
    return worst
