"""Planar complex tensors and the numerical kernels built on them.

A :class:`ComplexTensor` keeps its real and imaginary parts in two separate
float64 arrays.  Convolution is cross-correlation with "same" zero padding;
the 2-D FFT is centered and orthonormal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes disagree; ``axis`` names the offending axis."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


class ComplexTensor:
    """Immutable N-d complex array with planar (re, im) float64 storage."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = np.array(re, dtype=np.float64)
        if re.ndim == 0:
            re = re.reshape(1)
        im = np.zeros_like(re) if im is None else np.array(im, dtype=np.float64)
        if im.ndim == 0:
            im = np.full(re.shape, float(im))
        if im.shape != re.shape:
            raise ShapeError(f"re shape {re.shape} != im shape {im.shape}")
        if any(s < 1 for s in re.shape):
            raise ShapeError(f"all dimensions must be >= 1, got {re.shape}")
        re.flags.writeable = False
        im.flags.writeable = False
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    def __setattr__(self, name, value):
        raise AttributeError("ComplexTensor is immutable")

    @classmethod
    def from_complex(cls, z) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(np.real(z), np.imag(z))

    @classmethod
    def zeros(cls, shape) -> "ComplexTensor":
        return cls(np.zeros(shape))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def size(self) -> int:
        return self.re.size

    @property
    def ndim(self) -> int:
        return self.re.ndim

    def numpy(self) -> np.ndarray:
        """Interleaved complex128 copy."""
        return self.re + 1j * self.im

    def reshape(self, *shape) -> "ComplexTensor":
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def is_real(self) -> bool:
        return not np.any(self.im)

    def __eq__(self, other):
        if not isinstance(other, ComplexTensor):
            return NotImplemented
        return np.array_equal(self.re, other.re) and np.array_equal(self.im, other.im)

    __hash__ = None

    def __repr__(self):
        return f"ComplexTensor(shape={self.shape})"


@dataclass(frozen=True)
class ConvKernel:
    """Complex filter bank ``W = X + iY`` with complex bias, shapes [out, in, k, k]."""

    X: np.ndarray
    Y: np.ndarray
    bias: ComplexTensor

    def __post_init__(self):
        if self.X.shape != self.Y.shape or self.X.ndim != 4:
            raise ShapeError(f"X {self.X.shape} and Y {self.Y.shape} must be equal 4-d shapes")
        k = self.X.shape[-1]
        if self.X.shape[-2] != k or k % 2 == 0:
            raise ShapeError(f"kernel must be square with odd size, got {self.X.shape[-2:]}", axis="kernel")
        if self.bias.shape != (self.X.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.X.shape[0]},)", axis="out_ch")

    @property
    def out_ch(self) -> int:
        return self.X.shape[0]

    @property
    def in_ch(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.X.shape[-1]


def _check_same(*tensors: ComplexTensor) -> None:
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {t.shape}")


# --- convolution -----------------------------------------------------------

def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """[C, H, W] -> [C*k*k, H*W] patch matrix for a same-padded k x k correlation."""
    c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, h * w)


def _check_conv(shape, weights_shape, bias_shape=None):
    if len(shape) != 3:
        raise ShapeError(f"input must be [in_ch, H, W], got {shape}", axis="input")
    if len(weights_shape) != 4:
        raise ShapeError(f"weights must be [out_ch, in_ch, k, k], got {weights_shape}", axis="weights")
    out_ch, in_ch, kh, kw = weights_shape
    if in_ch != shape[0]:
        raise ShapeError(f"in_ch mismatch: input has {shape[0]}, weights expect {in_ch}", axis="in_ch")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {kh}x{kw}", axis="kernel")
    if bias_shape is not None and tuple(bias_shape) != (out_ch,):
        raise ShapeError(f"bias shape {tuple(bias_shape)} != ({out_ch},)", axis="out_ch")


def conv2d_real(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded 2-D cross-correlation of a real [in_ch, H, W] array."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _check_conv(x.shape, weights.shape, None if bias is None else np.shape(bias))
    out_ch, _, k, _ = weights.shape
    _, h, w = x.shape
    out = weights.reshape(out_ch, -1) @ im2col(x, k)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None]
    return out.reshape(out_ch, h, w)


def conv2d_complex(x: ComplexTensor, kernel: ConvKernel) -> ComplexTensor:
    """Complex convolution split into four real ones.

    Re(out) = X*a - Y*b,  Im(out) = Y*a + X*b, plus the complex bias.
    """
    _check_conv(x.shape, kernel.X.shape)
    out_ch, _, k, _ = kernel.X.shape
    _, h, w = x.shape
    ca, cb = im2col(x.re, k), im2col(x.im, k)
    X = kernel.X.reshape(out_ch, -1)
    Y = kernel.Y.reshape(out_ch, -1)
    re = X @ ca - Y @ cb + kernel.bias.re[:, None]
    im = Y @ ca + X @ cb + kernel.bias.im[:, None]
    return ComplexTensor(re.reshape(out_ch, h, w), im.reshape(out_ch, h, w))


# --- FFT -------------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fft2c_array(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Centered orthonormal 2-D DFT over the last two axes of a complex ndarray."""
    h, w = z.shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"FFT sizes must be powers of two, got {h}x{w}", axis="spatial")
    z = np.fft.ifftshift(z, axes=(-2, -1))
    z = (np.fft.ifft2 if inverse else np.fft.fft2)(z, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(z, axes=(-2, -1))


def fft2c(x: ComplexTensor, inverse: bool = False) -> ComplexTensor:
    if x.ndim < 2:
        raise ShapeError(f"fft2c needs at least 2 dims, got {x.shape}")
    return ComplexTensor.from_complex(fft2c_array(x.numpy(), inverse))


def ifft2c(x: ComplexTensor) -> ComplexTensor:
    return fft2c(x, inverse=True)


# --- elementwise -----------------------------------------------------------

def mul(x: ComplexTensor, y: ComplexTensor) -> ComplexTensor:
    _check_same(x, y)
    return ComplexTensor(x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re)


def conj(x: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(x.re, -x.im)


def magnitude(x: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(np.hypot(x.re, x.im))


def phase(x: ComplexTensor) -> ComplexTensor:
    # atan2 returns +pi for (-1, +0) and -pi for (-1, -0); fold to (-pi, pi]
    theta = np.arctan2(x.im, x.re)
    theta = np.where(theta == -np.pi, np.pi, theta)
    return ComplexTensor(theta)


def scale_add(alpha: complex, x: ComplexTensor, y: ComplexTensor) -> ComplexTensor:
    """alpha * x + y for a complex scalar alpha."""
    _check_same(x, y)
    ar, ai = float(np.real(alpha)), float(np.imag(alpha))
    return ComplexTensor(ar * x.re - ai * x.im + y.re, ar * x.im + ai * x.re + y.im)


_ELEMENTWISE = {
    "mul": mul,
    "conj": conj,
    "magnitude": magnitude,
    "phase": phase,
    "scale_add": scale_add,
}


def complex_elementwise(op: str, *args):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)
