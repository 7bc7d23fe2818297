"""Complex image container, unitary 2D FFT, and small vector helpers.

All image data is float32; norms and inner products accumulate in float64
so that diagnostics built on them do not lose digits to cancellation.
The FFT is unitary (1/sqrt(HW) both ways), which keeps every measurement
operator built from a binary sampling mask at operator norm <= 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ShapeError


def check_power_of_two(n: int, axis: str) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise DimensionError(f"size {n} along {axis} is not a power of two")


@dataclass
class ComplexImage:
    """H x W complex image stored as separate real/imaginary float32 planes."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float32)
        self.im = np.asarray(self.im, dtype=np.float32)
        if self.re.ndim != 2 or self.im.ndim != 2:
            raise ShapeError("ComplexImage planes must be 2-D")
        if self.re.shape != self.im.shape:
            raise ShapeError(
                f"re/im shapes differ: {self.re.shape} vs {self.im.shape}"
            )

    @property
    def height(self) -> int:
        return self.re.shape[0]

    @property
    def width(self) -> int:
        return self.re.shape[1]

    @property
    def shape(self) -> tuple:
        return self.re.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "ComplexImage":
        return cls(np.zeros((height, width), np.float32),
                   np.zeros((height, width), np.float32))

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexImage":
        return cls(z.real.astype(np.float32), z.imag.astype(np.float32))

    @classmethod
    def from_channels(cls, arr: np.ndarray) -> "ComplexImage":
        """Build from a (2, H, W) float array (channel 0 = re, 1 = im)."""
        if arr.ndim != 3 or arr.shape[0] != 2:
            raise ShapeError(f"expected (2, H, W), got {arr.shape}")
        return cls(arr[0], arr[1])

    def to_complex(self) -> np.ndarray:
        return self.re.astype(np.complex64) + 1j * self.im.astype(np.complex64)

    def to_channels(self) -> np.ndarray:
        return np.stack((self.re, self.im))

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.re.astype(np.float64) ** 2
                       + self.im.astype(np.float64) ** 2).astype(np.float32)

    def copy(self) -> "ComplexImage":
        return ComplexImage(self.re.copy(), self.im.copy())

    def __add__(self, other: "ComplexImage") -> "ComplexImage":
        return ComplexImage(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "ComplexImage") -> "ComplexImage":
        return ComplexImage(self.re - other.re, self.im - other.im)

    def __mul__(self, scalar: float) -> "ComplexImage":
        s = np.float32(scalar)
        return ComplexImage(self.re * s, self.im * s)

    __rmul__ = __mul__


def _as_flat64(a) -> np.ndarray:
    if isinstance(a, ComplexImage):
        return np.concatenate((a.re.ravel(), a.im.ravel())).astype(np.float64)
    return np.asarray(a).ravel().astype(np.float64)


def dot(a, b) -> float:
    """Euclidean inner product; a ComplexImage counts as a real vector of
    its stacked re/im entries."""
    fa, fb = _as_flat64(a), _as_flat64(b)
    if fa.shape != fb.shape:
        raise ShapeError(f"dot: length {fa.size} vs {fb.size}")
    return float(np.dot(fa, fb))


def norm(a) -> float:
    f = _as_flat64(a)
    return float(np.sqrt(np.dot(f, f)))


def axpy(alpha: float, a, b):
    """alpha * a + b, elementwise, for arrays or ComplexImages."""
    if isinstance(a, ComplexImage) and isinstance(b, ComplexImage):
        if a.shape != b.shape:
            raise ShapeError(f"axpy: shape {a.shape} vs {b.shape}")
        return a * alpha + b
    a = np.asarray(a, np.float32)
    b = np.asarray(b, np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"axpy: shape {a.shape} vs {b.shape}")
    return np.float32(alpha) * a + b


def fft2(img: ComplexImage) -> ComplexImage:
    """Unitary 2D DFT. Dimensions must be powers of two."""
    check_power_of_two(img.height, "height")
    check_power_of_two(img.width, "width")
    return ComplexImage.from_complex(np.fft.fft2(img.to_complex(), norm="ortho"))


def ifft2(img: ComplexImage) -> ComplexImage:
    """Inverse of :func:`fft2` (also unitary)."""
    check_power_of_two(img.height, "height")
    check_power_of_two(img.width, "width")
    return ComplexImage.from_complex(np.fft.ifft2(img.to_complex(), norm="ortho"))
