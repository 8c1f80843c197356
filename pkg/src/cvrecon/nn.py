"""Complex activations, weight initialisation and parameter-parity sizing.

Each activation accepts either a :class:`ComplexTensor` (plain evaluation) or
a tape :class:`Var` (recorded with its real 2x2 Jacobian).  Kinks follow a
zero-subgradient convention; the cardioid uses ``0.5 * I`` at the origin.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .autodiff import Var
from .ctensor import ComplexTensor, ConvKernel, phase


class ActivationKind(str, enum.Enum):
    RELU_2CH = "relu"
    CRELU = "crelu"
    ZRELU = "zrelu"
    MODRELU = "modrelu"
    CARDIOID = "cardioid"

    @property
    def complex_only(self) -> bool:
        return self is not ActivationKind.RELU_2CH


# --- activations -----------------------------------------------------------

def _componentwise_relu(d: ComplexTensor):
    pr, pi = d.re > 0, d.im > 0
    out = ComplexTensor(np.where(pr, d.re, 0.0), np.where(pi, d.im, 0.0))
    return out, lambda gr, gi: ((gr * pr, gi * pi),)


def _zrelu(d: ComplexTensor):
    theta = phase(d).re
    keep = (theta >= 0) & (theta <= np.pi / 2)
    # closed interval passes the value; the boundary itself gets zero gradient
    interior = (d.re > 0) & (d.im > 0)
    out = ComplexTensor(np.where(keep, d.re, 0.0), np.where(keep, d.im, 0.0))
    return out, lambda gr, gi: ((gr * interior, gi * interior),)


def _cardioid(d: ComplexTensor):
    a, b = d.re, d.im
    r = np.hypot(a, b)
    nz = r > 0
    rs = np.where(nz, r, 1.0)
    cos = np.where(nz, a / rs, 1.0)
    s = 0.5 * (1.0 + cos)
    out = ComplexTensor(s * a, s * b)

    def bwd(gr, gi):
        r3 = rs ** 3
        # Jacobian of (0.5 (a + a^2/r), 0.5 (b + ab/r)) w.r.t. (a, b)
        j00 = np.where(nz, 0.5 * (1 + 2 * a / rs - a ** 3 / r3), 0.5)
        j01 = np.where(nz, -0.5 * a * a * b / r3, 0.0)
        j10 = np.where(nz, 0.5 * (b / rs - a * a * b / r3), 0.0)
        j11 = np.where(nz, 0.5 * (1 + a / rs - a * b * b / r3), 0.5)
        return ((j00 * gr + j10 * gi, j01 * gr + j11 * gi),)

    return out, bwd


def _bias_shape(d: ComplexTensor, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 0 or b.size == 1:
        return np.full((1,) * d.ndim, float(b.reshape(-1)[0]))
    if b.shape != (d.shape[0],):
        raise ValueError(f"modReLU bias must have one entry per channel ({d.shape[0]}), got {b.shape}")
    return b.reshape((-1,) + (1,) * (d.ndim - 1))


def _modrelu(d: ComplexTensor, b: np.ndarray):
    a, y = d.re, d.im
    bb = _bias_shape(d, b)
    r = np.hypot(a, y)
    active = (r + bb > 0) & (r > 0)
    rs = np.where(r > 0, r, 1.0)
    s = np.where(active, (r + bb) / rs, 0.0)
    out = ComplexTensor(s * a, s * y)

    def bwd(gr, gi):
        proj = (a * gr + y * gi) / rs
        coef = np.where(active, bb / rs ** 2, 0.0) * proj
        ga = s * gr - coef * a
        gy = s * gi - coef * y
        gb = np.where(active, proj, 0.0)
        axes = tuple(range(1, d.ndim))
        gb = gb.sum(axis=axes) if np.size(b) > 1 else np.array([gb.sum()])
        return (ga, gy), (gb, np.zeros_like(gb))

    return out, bwd


def _apply(op: str, impl, d, *extra):
    if isinstance(d, Var):
        extra_vals = [e.value.re if isinstance(e, Var) else e for e in extra]
        out, bwd = impl(d.value, *extra_vals)
        inputs = (d,) + tuple(e for e in extra if isinstance(e, Var))
        if len(inputs) == 1:
            return d.tape.record(op, inputs, out, lambda gr, gi: bwd(gr, gi)[:1])
        return d.tape.record(op, inputs, out, bwd)
    out, _ = impl(d, *extra)
    return out


def relu_two_channel(d):
    """ReLU on the real and imaginary planes separately (real-network activation)."""
    return _apply("relu", _componentwise_relu, d)


def crelu(d):
    return _apply("crelu", _componentwise_relu, d)


def zrelu(d):
    """Pass d where its phase lies in the closed first quadrant [0, pi/2]."""
    return _apply("zrelu", _zrelu, d)


def modrelu(d, b):
    """ReLU(|d| + b) * exp(i theta_d) with one real bias per channel."""
    return _apply("modrelu", _modrelu, d, b)


def cardioid(d):
    return _apply("cardioid", _cardioid, d)


def activate(kind: ActivationKind | str, d, bias=None):
    kind = ActivationKind(kind)
    if kind is ActivationKind.MODRELU:
        if bias is None:
            raise ValueError("modReLU needs a bias")
        return modrelu(d, bias)
    return {
        ActivationKind.RELU_2CH: relu_two_channel,
        ActivationKind.CRELU: crelu,
        ActivationKind.ZRELU: zrelu,
        ActivationKind.CARDIOID: cardioid,
    }[kind](d)


# --- layers, init, parity --------------------------------------------------

@dataclass(frozen=True)
class LayerTemplate:
    in_ch: int
    out_ch: int
    kernel: int = 3
    activation: ActivationKind | None = None
    kind: str = "conv"

    def __post_init__(self):
        if self.out_ch < 1 or self.in_ch < 1:
            raise ValueError(f"channel counts must be >= 1, got {self.in_ch}->{self.out_ch}")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd, got {self.kernel}")

    def param_count(self, complex_valued: bool) -> int:
        k2 = self.kernel * self.kernel
        if complex_valued:
            n = 2 * k2 * self.in_ch * self.out_ch + 2 * self.out_ch
            if self.activation is ActivationKind.MODRELU:
                n += self.out_ch
            return n
        return k2 * self.in_ch * self.out_ch + self.out_ch


def init_conv_weights(template: LayerTemplate, seed: int, complex_valued: bool = True) -> ConvKernel:
    """Glorot-uniform draw with fans counted in real parameters; zero bias."""
    rng = np.random.default_rng(seed)
    k2 = template.kernel ** 2
    mult = 2 if complex_valued else 1
    fan_in = mult * template.in_ch * k2
    fan_out = mult * template.out_ch * k2
    s = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (template.out_ch, template.in_ch, template.kernel, template.kernel)
    X = rng.uniform(-s, s, size=shape)
    Y = rng.uniform(-s, s, size=shape) if complex_valued else np.zeros(shape)
    return ConvKernel(X, Y, ComplexTensor(np.zeros(template.out_ch)))


# width, io_channels -> layer list.  io_channels is 1 for the complex network
# (one complex image) and 2 for the real one (re/im as two channels).
NetworkTemplate = Callable[[int, int], list]


class Parity(NamedTuple):
    real_channels: int
    complex_param_count: int
    real_param_count: int


def template_param_count(template: NetworkTemplate, width: int, complex_valued: bool) -> int:
    io = 1 if complex_valued else 2
    return sum(layer.param_count(complex_valued) for layer in template(width, io))


def parity_feature_maps(template: NetworkTemplate, complex_maps: int) -> Parity:
    """Real hidden width whose parameter count is closest to the complex network's.

    Ties go to the larger real network.
    """
    target = template_param_count(template, complex_maps, True)
    if template_param_count(template, 1, False) == template_param_count(template, 2, False):
        # no hidden layer: the real network is just the 2-channel io
        return Parity(2, target, template_param_count(template, 2, False))
    best = None
    for n in range(1, 4 * complex_maps + 8):
        total = template_param_count(template, n, False)
        key = (abs(total - target), total < target)
        if best is None or key < best[0]:
            best = (key, n, total)
        if total > target and n > complex_maps:
            break
    _, n, total = best
    return Parity(n, target, total)
