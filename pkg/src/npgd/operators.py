"""Measurement operators and the data-consistency gradient step.

Both concrete operators satisfy <apply(x), y> == <x, adjoint(y)> exactly
(up to float roundoff) and have operator norm <= 1, so a unit step size
is always safe for the gradient step x + alpha * adjoint(y - apply(x)).
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .autograd import Tape, Variable
from .core import ComplexImage, fft2, ifft2, norm
from .errors import DimensionError, ShapeError
from .sampling import SamplingMask


class LinearOperator:
    """apply/adjoint pair on complex images."""

    in_shape: tuple
    out_shape: tuple

    def apply(self, x: ComplexImage) -> ComplexImage:
        raise NotImplementedError

    def adjoint(self, y: ComplexImage) -> ComplexImage:
        raise NotImplementedError

    # channel-plane conveniences used by the differentiable pipeline

    def adjoint_channels(self, y2: np.ndarray) -> np.ndarray:
        return self.adjoint(ComplexImage.from_channels(y2)).to_channels()

    def normal_channels(self, x2: np.ndarray) -> np.ndarray:
        """adjoint(apply(x)) on a (2, H, W) plane stack."""
        img = ComplexImage.from_channels(x2)
        return self.adjoint(self.apply(img)).to_channels()


class MaskedFourierOperator(LinearOperator):
    """y = mask * fft2(x); the adjoint is the zero-filled inverse FFT."""

    def __init__(self, mask: SamplingMask):
        self.mask = mask
        self._bits = mask.natural_bits()
        self.in_shape = (mask.height, mask.width)
        self.out_shape = (mask.height, mask.width)

    def _check(self, img: ComplexImage, what: str) -> None:
        if img.shape != (self.mask.height, self.mask.width):
            raise ShapeError(
                f"{what}: image {img.shape} vs mask {(self.mask.height, self.mask.width)}")

    def apply(self, x: ComplexImage) -> ComplexImage:
        self._check(x, "mf_apply")
        f = fft2(x)
        return ComplexImage(np.where(self._bits, f.re, np.float32(0)),
                            np.where(self._bits, f.im, np.float32(0)))

    def adjoint(self, y: ComplexImage) -> ComplexImage:
        self._check(y, "mf_adjoint")
        masked = ComplexImage(np.where(self._bits, y.re, np.float32(0)),
                              np.where(self._bits, y.im, np.float32(0)))
        return ifft2(masked)


class BoxDownsampleOperator(LinearOperator):
    """2x2 block averaging; the adjoint spreads y/4 back over each block."""

    factor = 2

    def __init__(self, height: int, width: int):
        if height % 2 or width % 2:
            raise DimensionError(f"box downsample needs even dims, got {height}x{width}")
        self.in_shape = (height, width)
        self.out_shape = (height // 2, width // 2)

    def apply(self, x: ComplexImage) -> ComplexImage:
        if x.shape != self.in_shape:
            raise ShapeError(f"box_apply: image {x.shape} vs {self.in_shape}")

        def down(p):
            return 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])

        return ComplexImage(down(x.re), down(x.im))

    def adjoint(self, y: ComplexImage) -> ComplexImage:
        if y.shape != self.out_shape:
            raise ShapeError(f"box_adjoint: image {y.shape} vs {self.out_shape}")

        def up(p):
            return np.repeat(np.repeat(p * np.float32(0.25), 2, axis=0), 2, axis=1)

        return ComplexImage(up(y.re), up(y.im))


def gradient_step(x: ComplexImage, y: ComplexImage, alpha: float,
                  op: LinearOperator) -> ComplexImage:
    """One data-consistency step: x + alpha * adjoint(y - apply(x))."""
    return x + alpha * op.adjoint(y - op.apply(x))


def gradient_step_channels(x_var: Variable, alpha: Union[float, Variable],
                           op: LinearOperator, ahy: np.ndarray,
                           tape: Optional[Tape] = None) -> Variable:
    """Differentiable gradient step on (2, H, W) planes.

    ahy is the precomputed adjoint(y) plane stack (constant per sample).
    Differentiates through x and, when alpha is a Variable, through the
    step size: the normal operator adjoint(apply(.)) is self-adjoint, so
    the pullback of x is g - alpha * normal(g).
    """
    alpha_var = alpha if isinstance(alpha, Variable) else None
    a = float(alpha_var.value) if alpha_var is not None else float(alpha)
    direction = ahy - op.normal_channels(x_var.value)
    out = Variable(x_var.value + np.float32(a) * direction)
    if tape is not None:
        pulls = [(x_var, lambda g: g - np.float32(a) * op.normal_channels(g))]
        if alpha_var is not None:
            pulls.append((alpha_var, lambda g: np.float32(
                np.sum(g.astype(np.float64) * direction.astype(np.float64)))))
        tape.record(out, pulls)
    return out


def data_residual_sq(x_var: Variable, op: LinearOperator, y: ComplexImage,
                     tape: Optional[Tape] = None) -> Variable:
    """Differentiable ||y - apply(x)||^2 for the per-iteration consistency cost."""
    resid = y - op.apply(ComplexImage.from_channels(x_var.value))
    val = norm(resid) ** 2
    out = Variable(np.float32(val))
    if tape is not None:
        pull = op.adjoint(resid).to_channels()
        tape.record(out, [(x_var, lambda g: np.float32(-2) * pull * g)])
    return out


def power_iteration(op: LinearOperator, iters: int = 50, seed: int = 0) -> float:
    """Estimate the operator norm ||op|| via power iteration on adjoint(apply(.))."""
    rng = np.random.default_rng(seed)
    h, w = op.in_shape
    v = ComplexImage(rng.standard_normal((h, w)).astype(np.float32),
                     rng.standard_normal((h, w)).astype(np.float32))
    lam = 0.0
    for _ in range(iters):
        nv = norm(v)
        if nv == 0:
            return 0.0
        v = v * (1.0 / nv)
        v = op.adjoint(op.apply(v))
        lam = norm(v)
    return float(np.sqrt(lam))
