"""Compressed-sensing comparator: ISTA with orthonormal Haar soft-thresholding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctensor import ComplexTensor, ShapeError
from .metrics import nrmse
from .mri_sim import _mask_array, sense_adjoint_array, sense_forward_array

SQRT_HALF = np.sqrt(0.5)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CsConfig:
    lam: float = 1e-3
    iterations: int = 100
    step: float = 1.0
    wavelet_levels: int = 2

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.step < 2:
            raise ValueError("step must lie in (0, 2)")


def _analysis(x: np.ndarray, axis: int) -> np.ndarray:
    even = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    odd = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return np.concatenate([(even + odd) * SQRT_HALF, (even - odd) * SQRT_HALF], axis=axis)


def _synthesis(c: np.ndarray, axis: int) -> np.ndarray:
    n = c.shape[axis] // 2
    lo = np.take(c, np.arange(n), axis=axis)
    hi = np.take(c, np.arange(n, 2 * n), axis=axis)
    out = np.empty_like(c)
    idx = [slice(None)] * c.ndim
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = (lo + hi) * SQRT_HALF
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = (lo - hi) * SQRT_HALF
    return out


def haar2_array(x: np.ndarray, levels: int, inverse: bool = False) -> np.ndarray:
    """Multi-level separable Haar transform; the coarse band sits top-left."""
    h, w = x.shape
    f = 2 ** levels
    if h % f or w % f:
        raise ShapeError(f"{h}x{w} not divisible by 2^{levels}", axis="spatial")
    out = np.array(x, copy=True)
    sizes = [(h >> lvl, w >> lvl) for lvl in range(levels)]
    if inverse:
        sizes = sizes[::-1]
    for sh, sw in sizes:
        band = out[:sh, :sw]
        if inverse:
            out[:sh, :sw] = _synthesis(_synthesis(band, 1), 0)
        else:
            out[:sh, :sw] = _analysis(_analysis(band, 0), 1)
    return out


def haar2(x: ComplexTensor, levels: int, inverse: bool = False) -> ComplexTensor:
    return ComplexTensor(haar2_array(x.re, levels, inverse), haar2_array(x.im, levels, inverse))


def soft_threshold_array(w: np.ndarray, tau: float) -> np.ndarray:
    mag = np.abs(w)
    scale = np.maximum(1 - tau / np.where(mag > 0, mag, 1.0), 0.0)
    return w * np.where(mag > 0, scale, 0.0)


def soft_threshold(w: ComplexTensor, tau: float) -> ComplexTensor:
    """Complex shrinkage w * max(1 - tau/|w|, 0); phase is preserved."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0:
        return w
    return ComplexTensor.from_complex(soft_threshold_array(w.numpy(), tau))


@dataclass
class CsResult:
    image: ComplexTensor
    objective: list[float] = field(default_factory=list)


def _haar_c(z, levels, inverse=False):
    return haar2_array(z.real, levels, inverse) + 1j * haar2_array(z.imag, levels, inverse)


def ista_wavelet_recon(kspace_u: ComplexTensor, maps: ComplexTensor, mask, config: CsConfig = CsConfig(),
                       return_objective: bool = False):
    """ISTA on 0.5 ||Ax - k||^2 + lam ||Haar(x)||_1 starting from the zero-filled image."""
    k, S = kspace_u.numpy(), maps.numpy()
    m = _mask_array(mask)
    lv = config.wavelet_levels

    def objective(x):
        r = sense_forward_array(x, S, m) - k
        return 0.5 * float(np.vdot(r, r).real) + config.lam * float(np.abs(_haar_c(x, lv)).sum())

    x = sense_adjoint_array(k, S, m)
    hist = [objective(x)]
    rises = 0
    for _ in range(config.iterations):
        g = sense_adjoint_array(sense_forward_array(x, S, m) - k, S, m)
        w = _haar_c(x - config.step * g, lv)
        x = _haar_c(soft_threshold_array(w, config.step * config.lam), lv, inverse=True)
        hist.append(objective(x))
        rises = rises + 1 if hist[-1] > hist[-2] else 0
        if rises >= 10:
            raise DivergenceError(f"objective increased for 10 consecutive iterations (at {len(hist) - 1})")
    img = ComplexTensor.from_complex(x)
    return CsResult(img, hist) if return_objective else img


LAMBDA_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)


def select_lambda(examples, grid=LAMBDA_GRID, config: CsConfig = CsConfig()) -> tuple[float, dict]:
    """Pick lambda by mean NRMSE on validation examples; returns (best, scores)."""
    scores = {}
    for lam in grid:
        cfg = CsConfig(lam, config.iterations, config.step, config.wavelet_levels)
        scores[lam] = float(np.mean([nrmse(ista_wavelet_recon(ex.kspace_u, ex.maps, ex.mask, cfg), ex.image)
                                     for ex in examples]))
    best = min(scores, key=lambda lam: (scores[lam], lam))
    return best, scores
