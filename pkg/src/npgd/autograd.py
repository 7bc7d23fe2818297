"""Reverse-mode automatic differentiation over float32 numpy arrays.

Deliberately minimal: exactly the primitives a small convolutional
reconstruction network and its training loss need. Ops take an optional
``tape``; with ``tape=None`` they just compute values, which keeps
inference and diagnostics free of bookkeeping.

Gradients accumulate additively, so a parameter reused many times (shared
weights across unrolled iterations) receives the sum of all contributions.
Callers zero grads between steps.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ContractError, ParameterError, ShapeError


class Variable:
    """A value plus its (lazily allocated) gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float32)
        self.grad: Optional[np.ndarray] = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def __repr__(self):
        return f"Variable(shape={self.value.shape})"


Pull = Tuple[Variable, Callable[[np.ndarray], np.ndarray]]


class Tape:
    """Execution-ordered record of primitive ops.

    Each record pairs the op's output with (parent, vector-Jacobian
    product) closures. Appending in execution order makes the list
    topologically sorted, so one reverse sweep suffices.
    """

    def __init__(self):
        self._records: List[Tuple[Variable, List[Pull]]] = []

    def record(self, out: Variable, pulls: List[Pull]) -> None:
        self._records.append((out, pulls))

    def __len__(self) -> int:
        return len(self._records)


def backward(tape: Tape, root: Variable) -> None:
    """Accumulate d(root)/d(v) into v.grad for every variable on the tape.

    root must be scalar. Nodes not on any path to root contribute
    nothing (their grad stays as the caller left it).
    """
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    root.accumulate(np.ones_like(root.value))
    for out, pulls in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        for var, vjp in pulls:
            var.accumulate(vjp(g))


# ---------------------------------------------------------------------------
# elementwise ops


def _require_same_shape(a: Variable, b: Variable, what: str) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{what}: shape {a.value.shape} vs {b.value.shape}")


def add(a: Variable, b: Variable, tape: Optional[Tape] = None) -> Variable:
    _require_same_shape(a, b, "add")
    out = Variable(a.value + b.value)
    if tape is not None:
        tape.record(out, [(a, lambda g: g), (b, lambda g: g)])
    return out


def scale(a: Variable, s: float, tape: Optional[Tape] = None) -> Variable:
    s32 = np.float32(s)
    out = Variable(a.value * s32)
    if tape is not None:
        tape.record(out, [(a, lambda g: g * s32)])
    return out


def mul(a: Variable, b: Variable, tape: Optional[Tape] = None) -> Variable:
    _require_same_shape(a, b, "mul")
    out = Variable(a.value * b.value)
    if tape is not None:
        av, bv = a.value, b.value
        tape.record(out, [(a, lambda g: g * bv), (b, lambda g: g * av)])
    return out


def relu(x: Variable, tape: Optional[Tape] = None) -> Variable:
    """Gated activation with mask D(z) = 1 if z > 0 else 0 (D(0) = 0)."""
    v = x.value
    mask = v > 0
    out = Variable(np.where(mask, v, np.float32(0)))
    if tape is not None:
        tape.record(out, [(x, lambda g: np.where(mask, g, np.float32(0)))])
    return out


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, float32 in/out."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def swish(x: Variable, tape: Optional[Tape] = None) -> Variable:
    """Gated activation z * sigmoid(z); the mask D(z) = sigmoid(z)."""
    v = x.value
    d = sigmoid(v)
    out = Variable(v * d)
    if tape is not None:
        tape.record(out, [(x, lambda g: g * (d + v * d * (np.float32(1) - d)))])
    return out


def instance_norm(x: Variable, gamma: Variable, beta: Variable,
                  eps: float = 1e-5, tape: Optional[Tape] = None) -> Variable:
    """Per-channel normalization over the spatial axes with learned affine.

    x: (C, H, W); gamma, beta: (C,). Batch-size independent and
    deterministic at inference.
    """
    v = x.value
    if v.ndim != 3:
        raise ShapeError(f"instance_norm expects (C, H, W), got {v.shape}")
    c = v.shape[0]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError("instance_norm affine params must have shape (C,)")
    mean = v.mean(axis=(1, 2), keepdims=True)
    var = v.var(axis=(1, 2), keepdims=True)
    inv_std = (1.0 / np.sqrt(var + np.float32(eps))).astype(np.float32)
    xhat = (v - mean) * inv_std
    out = Variable(gamma.value[:, None, None] * xhat + beta.value[:, None, None])
    if tape is not None:
        n = v.shape[1] * v.shape[2]

        def vjp_x(g):
            dxhat = g * gamma.value[:, None, None]
            sum_d = dxhat.sum(axis=(1, 2), keepdims=True)
            sum_dx = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
            return (inv_std / n) * (n * dxhat - sum_d - xhat * sum_dx)

        tape.record(out, [
            (x, vjp_x),
            (gamma, lambda g: (g * xhat).sum(axis=(1, 2))),
            (beta, lambda g: g.sum(axis=(1, 2))),
        ])
    return out


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xp: padded (C, Hp, Wp) -> (C*k*k, ho*wo)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        xp.shape[0] * k * k, ho * wo)


def _col2im(cols: np.ndarray, c: int, hp: int, wp: int, k: int,
            stride: int, ho: int, wo: int) -> np.ndarray:
    out = np.zeros((c, hp, wp), np.float32)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out


def conv2d(x: Variable, kernel: Variable, bias: Variable,
           stride: int = 1, padding: Optional[int] = None,
           tape: Optional[Tape] = None) -> Variable:
    """2-D cross-correlation with per-channel bias.

    x: (C_in, H, W); kernel: (C_out, C_in, k, k); bias: (C_out,).
    padding=None means "same" (requires stride 1 with p = (k-1)/2).
    """
    kv = kernel.value
    if kv.ndim != 4 or kv.shape[2] != kv.shape[3]:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {kv.shape}")
    c_out, c_in, k, _ = kv.shape
    if k % 2 == 0:
        raise ParameterError(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    v = x.value
    if v.ndim != 3:
        raise ShapeError(f"conv2d input must be (C, H, W), got {v.shape}")
    if v.shape[0] != c_in:
        raise ShapeError(f"input has {v.shape[0]} channels, kernel expects {c_in}")
    if bias.value.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.value.shape}")
    p = (k - 1) // 2 if padding is None else padding
    _, h, w = v.shape
    hp, wp = h + 2 * p, w + 2 * p
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {v.shape}")
    xp = np.pad(v, ((0, 0), (p, p), (p, p))) if p else v
    cols = _im2col(xp, k, stride, ho, wo)
    w2 = kv.reshape(c_out, -1)
    out = Variable((w2 @ cols + bias.value[:, None]).reshape(c_out, ho, wo))
    if tape is not None:
        def vjp_x(g):
            gm = g.reshape(c_out, -1)
            dxp = _col2im(w2.T @ gm, c_in, hp, wp, k, stride, ho, wo)
            return dxp[:, p:p + h, p:p + w] if p else dxp

        def vjp_kernel(g):
            return (g.reshape(c_out, -1) @ cols.T).reshape(kv.shape)

        tape.record(out, [
            (x, vjp_x),
            (kernel, vjp_kernel),
            (bias, lambda g: g.sum(axis=(1, 2))),
        ])
    return out


# ---------------------------------------------------------------------------
# reductions / losses


def _scalar(value_f64: float) -> Variable:
    return Variable(np.float32(value_f64))


def sum_squares(a: Variable, tape: Optional[Tape] = None) -> Variable:
    v64 = a.value.astype(np.float64)
    out = _scalar(np.sum(v64 * v64))
    if tape is not None:
        av = a.value
        tape.record(out, [(a, lambda g: np.float32(2) * av * g)])
    return out


def mse_loss(a: Variable, target: np.ndarray, tape: Optional[Tape] = None) -> Variable:
    """Sum of squared differences ||a - target||^2 (no averaging)."""
    target = np.asarray(target, np.float32)
    if a.value.shape != target.shape:
        raise ShapeError(f"mse_loss: shape {a.value.shape} vs {target.shape}")
    d = a.value - target
    out = _scalar(np.sum(d.astype(np.float64) ** 2))
    if tape is not None:
        tape.record(out, [(a, lambda g: np.float32(2) * d * g)])
    return out


def smooth_l1_loss(a: Variable, target: np.ndarray, eps: float = 1e-8,
                   tape: Optional[Tape] = None) -> Variable:
    """Sum of sqrt(d^2 + eps): differentiable stand-in for the l1 cost."""
    target = np.asarray(target, np.float32)
    if a.value.shape != target.shape:
        raise ShapeError(f"smooth_l1_loss: shape {a.value.shape} vs {target.shape}")
    d = a.value - target
    root = np.sqrt(d * d + np.float32(eps))
    out = _scalar(np.sum(root.astype(np.float64)))
    if tape is not None:
        tape.record(out, [(a, lambda g: g * d / root)])
    return out
