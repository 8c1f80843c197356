"""Unrolled ISTA-style network and U-Net, in complex or two-channel real form."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .ctensor import ComplexTensor, ShapeError
from .mri_sim import _check_sense, _mask_array, fft2c_array, sense_adjoint_array
from .nn import ActivationKind, LayerTemplate, activate, init_conv_weights, parity_feature_maps

ConvMode = Literal["real", "complex"]


def _check_mode(conv_mode: str, activation: ActivationKind) -> None:
    if conv_mode not in ("real", "complex"):
        raise ValueError(f"conv_mode must be 'real' or 'complex', got {conv_mode!r}")
    if conv_mode == "real" and activation is not ActivationKind.RELU_2CH:
        raise ValueError("complex activations require conv=complex; real convolution uses relu")
    if conv_mode == "complex" and activation is ActivationKind.RELU_2CH:
        raise ValueError("relu labels the real-convolution network; use crelu with conv=complex")


@dataclass(frozen=True)
class UnrolledConfig:
    iterations: int = 4
    feature_maps: int = 256
    conv_mode: ConvMode = "complex"
    activation: ActivationKind = ActivationKind.CRELU
    denoiser_layers: int = 3
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind(self.activation))
        if not 0 <= self.iterations <= 16:
            raise ValueError(f"iterations must be in 0..16, got {self.iterations}")
        if self.denoiser_layers < 1 or self.feature_maps < 1:
            raise ValueError("denoiser_layers and feature_maps must be >= 1")
        _check_mode(self.conv_mode, self.activation)

    def block_template(self, width: int, io: int) -> list[LayerTemplate]:
        n, k, act = self.denoiser_layers, self.kernel, self.activation
        if n == 1:
            return [LayerTemplate(io, io, k)]
        return ([LayerTemplate(io, width, k, act)]
                + [LayerTemplate(width, width, k, act) for _ in range(n - 2)]
                + [LayerTemplate(width, io, k)])

    def template(self, width: int, io: int) -> list[LayerTemplate]:
        return self.block_template(width, io) * self.iterations


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 4
    base_features: int = 32
    convs_per_level: int = 2
    conv_mode: ConvMode = "complex"
    activation: ActivationKind = ActivationKind.CRELU
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind(self.activation))
        if self.levels < 1 or self.convs_per_level < 1 or self.base_features < 1:
            raise ValueError("levels, convs_per_level and base_features must be >= 1")
        _check_mode(self.conv_mode, self.activation)

    def named_layers(self, width: int, io: int) -> list[tuple[str, LayerTemplate]]:
        k, act, n = self.kernel, self.activation, self.convs_per_level
        feats = [width * 2 ** lvl for lvl in range(self.levels)]
        layers = []
        cin = io
        for lvl, f in enumerate(feats):
            for j in range(n):
                layers.append((f"down{lvl}.conv{j}", LayerTemplate(cin, f, k, act)))
                cin = f
        for lvl in range(self.levels - 2, -1, -1):
            f = feats[lvl]
            layers.append((f"up{lvl}.upconv", LayerTemplate(feats[lvl + 1], f, k, act)))
            cin = 2 * f
            for j in range(n):
                layers.append((f"up{lvl}.conv{j}", LayerTemplate(cin, f, k, act)))
                cin = f
        layers.append(("final", LayerTemplate(feats[0], io, 1)))
        return layers

    def template(self, width: int, io: int) -> list[LayerTemplate]:
        return [layer for _, layer in self.named_layers(width, io)]


# --- parameters ------------------------------------------------------------

@dataclass
class Param:
    value: ComplexTensor
    kind: str  # "kernel", "bias" or "scalar"
    real: bool = False

    @property
    def count(self) -> int:
        return self.value.size * (1 if self.real else 2)


class ModelParams(dict):
    """Ordered name -> :class:`Param` map."""

    def tensors(self) -> dict[str, ComplexTensor]:
        return {k: p.value for k, p in self.items()}

    def with_values(self, values: dict[str, ComplexTensor]) -> "ModelParams":
        out = ModelParams()
        for k, p in self.items():
            v = values[k]
            if v.shape != p.value.shape:
                raise ShapeError(f"{k}: shape {v.shape} != {p.value.shape}")
            if p.real and np.any(v.im):
                v = ComplexTensor(v.re)
            out[k] = Param(v, p.kind, p.real)
        return out

    def bind(self, tape: Tape) -> dict[str, Var]:
        return {k: tape.leaf(p.value, name=k) for k, p in self.items()}


def param_count(params: ModelParams) -> int:
    """Real degrees of freedom; complex entries count twice."""
    return sum(p.count for p in params.values())


def _child_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, idx]).generate_state(1)[0])


def _add_layer(params: ModelParams, name: str, layer: LayerTemplate, complex_valued: bool, seed: int):
    kern = init_conv_weights(layer, seed, complex_valued)
    params[f"{name}.weight"] = Param(ComplexTensor(kern.X, kern.Y), "kernel", not complex_valued)
    params[f"{name}.bias"] = Param(kern.bias, "bias", not complex_valued)
    if layer.activation is ActivationKind.MODRELU:
        params[f"{name}.act_bias"] = Param(ComplexTensor(np.zeros(layer.out_ch)), "bias", True)


def _io(conv_mode: str) -> int:
    return 1 if conv_mode == "complex" else 2


def init_unrolled_params(config: UnrolledConfig, seed: int = 0) -> ModelParams:
    params = ModelParams()
    cplx = config.conv_mode == "complex"
    block = config.block_template(config.feature_maps, _io(config.conv_mode))
    idx = 0
    for m in range(config.iterations):
        params[f"it{m}.step"] = Param(ComplexTensor([1.0]), "scalar", True)
        for j, layer in enumerate(block):
            _add_layer(params, f"it{m}.conv{j}", layer, cplx, _child_seed(seed, idx))
            idx += 1
    return params


def init_unet_params(config: UNetConfig, seed: int = 0) -> ModelParams:
    params = ModelParams()
    cplx = config.conv_mode == "complex"
    for idx, (name, layer) in enumerate(config.named_layers(config.base_features, _io(config.conv_mode))):
        _add_layer(params, name, layer, cplx, _child_seed(seed, idx))
    return params


def parity_width(config, complex_width: int) -> int:
    """Real-network width matching the complex network's parameter count."""
    return parity_feature_maps(config.template, complex_width).real_channels


# --- differentiable building blocks ---------------------------------------

def _normal_op(x: np.ndarray, maps: np.ndarray, mask2: np.ndarray) -> np.ndarray:
    return np.sum(np.conj(maps) * fft2c_array(mask2 * fft2c_array(maps * x), inverse=True), axis=0)


def dc_step(y, kspace_u: ComplexTensor, maps: ComplexTensor, mask, t):
    """Gradient step y - t A^H (A y - k) on the data-consistency term.

    ``y`` and ``t`` may be tape Vars (t a real scalar) or plain values.
    """
    yv = y.value if isinstance(y, Var) else y
    tv = float(t.value.re[0]) if isinstance(t, Var) else float(np.real(t))
    m = _mask_array(mask)
    _check_sense(yv.shape, maps.shape, m.shape)
    if kspace_u.shape != maps.shape:
        raise ShapeError(f"kspace {kspace_u.shape} does not match maps {maps.shape}", axis="coils")
    S, k = maps.numpy(), kspace_u.numpy()
    mask2 = m * m
    yc = yv.numpy()
    resid = m * fft2c_array(S * yc) - k
    grad = sense_adjoint_array(resid, S, m)
    out = ComplexTensor.from_complex(yc - tv * grad)
    if not isinstance(y, Var):
        return out

    def bwd(gr, gi):
        g = gr + 1j * gi
        gy = g - tv * _normal_op(g, S, mask2)
        gt = -float(np.sum(gr * grad.real + gi * grad.imag))
        return (gy.real, gy.imag), (np.array([gt]), np.zeros(1))

    inputs = (y, t) if isinstance(t, Var) else (y,)
    if isinstance(t, Var):
        return y.tape.record("dc_step", inputs, out, bwd)
    return y.tape.record("dc_step", inputs, out, lambda gr, gi: bwd(gr, gi)[:1])


def _conv(x: Var, pv: dict[str, Var], name: str, conv_mode: str) -> Var:
    conv = ad.conv2d if conv_mode == "complex" else ad.conv2d_real
    return conv(x, pv[f"{name}.weight"], pv[f"{name}.bias"])


def _conv_act(x: Var, pv, name: str, layer: LayerTemplate, conv_mode: str) -> Var:
    h = _conv(x, pv, name, conv_mode)
    if layer.activation is None:
        return h
    return activate(layer.activation, h, pv.get(f"{name}.act_bias"))


def _enter(img: Var, conv_mode: str) -> Var:
    h = ad.reshape(img, (1,) + img.shape)
    return ad.to_channels(h) if conv_mode == "real" else h


def _leave(h: Var, conv_mode: str) -> Var:
    if conv_mode == "real":
        h = ad.from_channels(h)
    return ad.reshape(h, h.shape[1:])


def _zero_filled(tape: Tape, kspace_u, maps, mask) -> Var:
    m = _mask_array(mask)
    return tape.constant(ComplexTensor.from_complex(sense_adjoint_array(kspace_u.numpy(), maps.numpy(), m)))


def unrolled_graph(tape: Tape, pv: dict[str, Var], kspace_u, maps, mask, config: UnrolledConfig) -> Var:
    y = _zero_filled(tape, kspace_u, maps, mask)
    block = config.block_template(config.feature_maps, _io(config.conv_mode))
    for m in range(config.iterations):
        y = dc_step(y, kspace_u, maps, mask, pv[f"it{m}.step"])
        h = _enter(y, config.conv_mode)
        for j, layer in enumerate(block):
            h = _conv_act(h, pv, f"it{m}.conv{j}", layer, config.conv_mode)
        y = ad.add(y, _leave(h, config.conv_mode))
    return y


def unet_graph(tape: Tape, pv: dict[str, Var], zero_filled: Var, config: UNetConfig) -> Var:
    h, w = zero_filled.shape
    f = 2 ** (config.levels - 1)
    if h % f or w % f:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by {f} for {config.levels} levels", axis="spatial")
    layers = dict(config.named_layers(config.base_features, _io(config.conv_mode)))
    mode = config.conv_mode
    x = _enter(zero_filled, mode)
    skips = []
    for lvl in range(config.levels):
        if lvl > 0:
            x = ad.avg_pool2(x)
        for j in range(config.convs_per_level):
            name = f"down{lvl}.conv{j}"
            x = _conv_act(x, pv, name, layers[name], mode)
        skips.append(x)
    for lvl in range(config.levels - 2, -1, -1):
        name = f"up{lvl}.upconv"
        x = _conv_act(ad.upsample2(x), pv, name, layers[name], mode)
        x = ad.concat([skips[lvl], x])
        for j in range(config.convs_per_level):
            name = f"up{lvl}.conv{j}"
            x = _conv_act(x, pv, name, layers[name], mode)
    x = _conv(x, pv, "final", mode)
    return _leave(x, mode)


def _check_params(params: ModelParams, expected: ModelParams) -> None:
    if list(params) != list(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"params do not match config (missing {missing}, unexpected {extra})")
    for k, p in expected.items():
        if params[k].value.shape != p.value.shape:
            raise ValueError(f"param {k}: shape {params[k].value.shape} != {p.value.shape}")


def _skeleton(config) -> ModelParams:
    # shapes only; cheap enough at the sizes used here
    return init_unrolled_params(config, 0) if isinstance(config, UnrolledConfig) else init_unet_params(config, 0)


def unrolled_forward(kspace_u: ComplexTensor, maps: ComplexTensor, mask, params: ModelParams,
                     config: UnrolledConfig) -> ComplexTensor:
    _check_params(params, _skeleton(config))
    tape = Tape()
    out = unrolled_graph(tape, params.bind(tape), kspace_u, maps, mask, config).value
    tape.clear()
    return out


def unet_forward(zero_filled: ComplexTensor, params: ModelParams, config: UNetConfig) -> ComplexTensor:
    _check_params(params, _skeleton(config))
    tape = Tape()
    out = unet_graph(tape, params.bind(tape), tape.constant(zero_filled), config).value
    tape.clear()
    return out
