"""Minimal dense-tensor reverse-mode autodiff, sufficient for the encoder.

Tensors wrap numpy buffers (float32 by default; float64 exists so the
gradient-check harness can run a high-precision shadow of the same graph).
Operations record onto an explicit tape when one is active and any input
requires gradients; with no active tape, every op is a pure function, which
is what inference paths rely on.

Shape rules are strict: elementwise ops demand identical shapes, matmul is
2-D only, and the only broadcasting anywhere is bias addition inside conv2d
and dense. Mismatches raise ShapeError naming the op and both shapes.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, StateError, ValidationError

_TLS = threading.local()

L2_EPS = 1e-12  # added under the square root in every norm


def _active_tape() -> "Tape | None":
    return getattr(_TLS, "tape", None)


class Tensor:
    """Dense row-major buffer plus gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValidationError(f"tensor dtype must be float32 or float64, got {dtype}")
        self.data = np.array(arr, dtype=dtype, copy=True)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _TapeEntry:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations; single-use, single-threaded."""

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._consumed = False
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _TLS.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _TLS.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self._entries)

    def _record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
                backward: Callable[[np.ndarray], tuple]) -> None:
        self._entries.append(_TapeEntry(name, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and push gradients through in reverse."""
        if self._consumed:
            raise StateError("tape already consumed by a previous backward pass")
        if loss.shape != ():
            raise ValidationError(f"backward: loss must be scalar, got shape {loss.shape}")
        if not self._entries:
            raise StateError("backward on an empty tape")
        self._consumed = True
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for entry in reversed(self._entries):
            out_grad = entry.output.grad
            if out_grad is None:
                continue
            grads = entry.backward(out_grad)
            for tensor, grad in zip(entry.inputs, grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad


def _check_dtypes(name: str, *tensors: Tensor):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValidationError(f"{name}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def _make(name: str, inputs: Sequence[Tensor], data: np.ndarray,
          backward: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._record(name, inputs, out, backward)
    return out


# ---------------------------------------------------------------------------
# Elementwise and linear ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    return _make("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", (x,), np.where(mask, x.data, x.data.dtype.type(0)),
                 lambda g: (g * mask,))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with x (N, K), w (K, M), b (M,)."""
    _check_dtypes("dense", x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: incompatible shapes {x.shape} and {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def backward(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _make("dense", (x, w, b), out, backward)


# ---------------------------------------------------------------------------
# Convolution and pooling (NCHW)

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    # Kernel-major layout (C*kh*kw, N*Ho*Wo): the gather copies whole
    # (N, Ho, Wo) planes per kernel tap, which is far cheaper than gathering
    # C*kh*kw elements per output position.
    n, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]           # (N, C, Ho, Wo, kh, kw)
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, x (N, Cin, H, W) with kernel (Cout, Cin, kh, kw)."""
    tensors = (x, w) if b is None else (x, w, b)
    _check_dtypes("conv2d", *tensors)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wd_ = x.shape
    cout, cin_k, kh, kw = w.shape
    if cin != cin_k:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_k}")
    if stride < 1 or padding < 0:
        raise ValidationError(f"conv2d: bad stride {stride} or padding {padding}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than padded input {xp.shape[2:]}")
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = wmat @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))
    padded_shape = xp.shape

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        dw = (g2 @ cols.T).reshape(w.shape)
        dwin = (wmat.T @ g2).reshape(cin, kh, kw, n, ho, wo)
        ph, pw = padded_shape[2], padded_shape[3]
        dxp_cn = np.zeros((cin, n, ph, pw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp_cn[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += dwin[
                    :, i, j
                ]
        dxp = np.ascontiguousarray(dxp_cn.transpose(1, 0, 2, 3))
        if padding:
            dx = dxp[:, :, padding:-padding, padding:-padding]
        else:
            dx = dxp
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=1)

    return _make("conv2d", tensors, out, backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route gradient to the first max
    in row-major window order."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: spatial dims must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    q = x.data.reshape(n, c, ho, 2, wo, 2)
    corners = (q[:, :, :, 0, :, 0], q[:, :, :, 0, :, 1],
               q[:, :, :, 1, :, 0], q[:, :, :, 1, :, 1])
    out = np.maximum(np.maximum(corners[0], corners[1]),
                     np.maximum(corners[2], corners[3]))

    def backward(g):
        dq = np.zeros((n, c, ho, 2, wo, 2), dtype=g.dtype)
        claimed = np.zeros(out.shape, dtype=bool)
        for k, corner in enumerate(corners):
            hit = (corner == out) & ~claimed
            claimed |= hit
            dq[:, :, :, k // 2, :, k % 2] = g * hit
        return (dq.reshape(n, c, h, w),)

    return _make("max_pool2d", (x,), out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        scale = g.dtype.type(1.0 / (h * w))
        return (np.broadcast_to((g * scale)[:, :, None, None], (n, c, h, w)).copy(),)

    return _make("global_avg_pool", (x,), out, backward)


def region_avg_pool(x: Tensor, regions: int) -> Tensor:
    """Average over a regions x regions grid of equal cells, flattened to
    (n, c * regions^2). regions=1 matches global_avg_pool up to the reshape."""
    if x.data.ndim != 4:
        raise ShapeError(f"region_avg_pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if regions < 1 or h % regions or w % regions:
        raise ShapeError(
            f"region_avg_pool: {regions}x{regions} grid does not tile {h}x{w}"
        )
    ch, cw = h // regions, w // regions
    cells = x.data.reshape(n, c, regions, ch, regions, cw)
    out = cells.mean(axis=(3, 5)).reshape(n, c * regions * regions)

    def backward(g):
        scale = g.dtype.type(1.0 / (ch * cw))
        gc = (g * scale).reshape(n, c, regions, 1, regions, 1)
        return (np.broadcast_to(gc, (n, c, regions, ch, regions, cw))
                .reshape(n, c, h, w).copy(),)

    return _make("region_avg_pool", (x,), out, backward)


# ---------------------------------------------------------------------------
# Normalization, similarity, loss

def l2_normalize(x: Tensor) -> Tensor:
    """Unit-normalize along the last axis; eps inside the sqrt guards zeros."""
    if x.data.ndim < 1:
        raise ShapeError(f"l2_normalize: need at least 1-D, got shape {x.shape}")
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True) + xd.dtype.type(L2_EPS))
    out = xd / norm

    def backward(g):
        dot = np.sum(g * xd, axis=-1, keepdims=True)
        return (g / norm - xd * dot / norm**3,)

    return _make("l2_normalize", (x,), out.astype(xd.dtype, copy=False), backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine along the last axis; (N, D) inputs give (N,) output."""
    _check_dtypes("cosine_similarity", a, b)
    if a.shape != b.shape or a.data.ndim < 1:
        raise ShapeError(f"cosine_similarity: shapes differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    eps = ad.dtype.type(L2_EPS)
    na = np.sqrt(np.sum(ad * ad, axis=-1) + eps)
    nb = np.sqrt(np.sum(bd * bd, axis=-1) + eps)
    dot = np.sum(ad * bd, axis=-1)
    cos = dot / (na * nb)

    def backward(g):
        ge = g[..., None]
        ce = cos[..., None]
        nae = na[..., None]
        nbe = nb[..., None]
        da = ge * (bd / (nae * nbe) - ce * ad / (nae * nae))
        db = ge * (ad / (nae * nbe) - ce * bd / (nbe * nbe))
        return da, db

    return _make("cosine_similarity", (a, b), cos.astype(ad.dtype, copy=False), backward)


def mse_scalar(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences, as a scalar tensor."""
    _check_dtypes("mse_scalar", pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_scalar: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size if diff.size else 1
    out = np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype)

    def backward(g):
        scale = g * pred.data.dtype.type(2.0 / n)
        return scale * diff, -scale * diff

    return _make("mse_scalar", (pred, target), out, backward)


# ---------------------------------------------------------------------------
# Optimizer

class AdamW:
    """Adam with decoupled weight decay over named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-3):
        if lr < 0 or weight_decay < 0:
            raise ValidationError("lr and weight_decay must be >= 0")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValidationError("betas must lie in [0, 1)")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """One update from the gradients currently stored on the parameters.

        A parameter with grad None is treated as zero-gradient (weight decay
        still applies). NaNs abort before any parameter is touched.
        """
        for name, p in self.params.items():
            if p.grad is not None and np.isnan(p.grad).any():
                raise ValidationError(f"adamw: NaN gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            dt = p.data.dtype
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= dt.type(self.beta1)
            m += dt.type(1.0 - self.beta1) * g
            v *= dt.type(self.beta2)
            v += dt.type(1.0 - self.beta2) * (g * g)
            m_hat = m / dt.type(bc1)
            v_hat = v / dt.type(bc2)
            if self.weight_decay:
                p.data -= dt.type(self.lr * self.weight_decay) * p.data
            p.data -= dt.type(self.lr) * m_hat / (np.sqrt(v_hat) + dt.type(self.eps))

    def state_arrays(self) -> dict:
        return {"m": self.m, "v": self.v, "step": self.step_count}

    def load_state(self, state: dict) -> None:
        for name in self.params:
            if name not in state["m"] or name not in state["v"]:
                raise ValidationError(f"adamw: missing optimizer state for {name!r}")
            self.m[name] = np.array(state["m"][name], dtype=self.params[name].data.dtype)
            self.v[name] = np.array(state["v"][name], dtype=self.params[name].data.dtype)
        self.step_count = int(state["step"])
