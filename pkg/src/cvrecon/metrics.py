"""Image-quality metrics: NRMSE and PSNR on complex images, SSIM on magnitudes."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .autodiff import Var
from .ctensor import ComplexTensor, ShapeError


def _arr(x) -> np.ndarray:
    if isinstance(x, ComplexTensor):
        return x.numpy()
    return np.asarray(x)


def _pair(pred, target):
    p, t = _arr(pred), _arr(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} vs target {t.shape}")
    return p, t


def nrmse(pred, target) -> float:
    """||pred - target|| / ||target|| over complex entries.

    A tape Var ``pred`` yields a differentiable scalar Var instead.
    """
    if isinstance(pred, Var):
        return _nrmse_var(pred, target)
    p, t = _pair(pred, target)
    tn = np.linalg.norm(t)
    if tn == 0:
        raise ValueError("nrmse undefined for an all-zero target")
    return float(np.linalg.norm(p - t) / tn)


def _nrmse_var(pred: Var, target: ComplexTensor) -> Var:
    p, t = _pair(pred.value, target)
    tn = np.linalg.norm(t)
    if tn == 0:
        raise ValueError("nrmse undefined for an all-zero target")
    diff = p - t
    dn = np.linalg.norm(diff)
    val = dn / tn

    def bwd(gr, gi):
        if dn == 0:
            return ((np.zeros(p.shape), np.zeros(p.shape)),)
        s = gr[0] / (tn * dn)
        return ((s * diff.real, s * diff.imag),)

    return pred.tape.record("nrmse", (pred,), ComplexTensor([val]), bwd)


def psnr(pred, target) -> float:
    """20 log10(max|target| / rmse); +inf when pred equals target."""
    p, t = _pair(pred, target)
    peak = np.max(np.abs(t))
    if peak == 0:
        raise ValueError("psnr undefined for an all-zero target")
    rmse = np.sqrt(np.mean(np.abs(p - t) ** 2))
    if rmse == 0:
        return math.inf
    return float(20 * np.log10(peak / rmse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def ssim(pred, target, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM of magnitude images, Gaussian-weighted, range = max |target|.

    Local statistics use reflect padding; the mean excludes a half-window border.
    """
    p, t = _pair(pred, target)
    x, y = np.abs(t).astype(np.float64), np.abs(p).astype(np.float64)
    if x.ndim != 2:
        raise ShapeError(f"ssim expects 2-d images, got {x.shape}")
    if min(x.shape) < win_size:
        raise ShapeError(f"image {x.shape} is smaller than the {win_size}-pixel window", axis="spatial")
    data_range = x.max()
    if data_range == 0:
        raise ValueError("ssim undefined for an all-zero target")
    g = gaussian_window(win_size, sigma)

    def blur(a):
        return correlate1d(correlate1d(a, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")

    ux, uy = blur(x), blur(y)
    vx = blur(x * x) - ux * ux
    vy = blur(y * y) - uy * uy
    vxy = blur(x * y) - ux * uy
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    pad = (win_size - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def phase_rmse(pred, target, threshold: float = 0.1) -> float:
    """RMS wrapped phase error over pixels where |target| > threshold."""
    p, t = _pair(pred, target)
    sel = np.abs(t) > threshold
    if not np.any(sel):
        raise ValueError("no target pixels above the magnitude threshold")
    d = np.angle(p[sel] * np.conj(t[sel]))
    return float(np.sqrt(np.mean(d ** 2)))


@dataclass
class MetricReport:
    nrmse: float
    psnr: float
    ssim: float
    phase_rmse: float = float("nan")
    acceleration: float = float("nan")
    seed: int | None = None
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def evaluate(cls, pred, target, **meta) -> "MetricReport":
        try:
            prmse = phase_rmse(pred, target)
        except ValueError:
            prmse = float("nan")
        return cls(nrmse(pred, target), psnr(pred, target), ssim(pred, target), prmse, **meta)

    def as_row(self) -> dict:
        row = asdict(self)
        row.update(row.pop("extra"))
        return row


def aggregate(reports: list[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and standard deviation of each metric (infinite PSNRs excluded)."""
    out = {}
    for key in ("nrmse", "psnr", "ssim", "phase_rmse"):
        vals = np.array([getattr(r, key) for r in reports], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        out[key] = (float(vals.mean()), float(vals.std())) if len(vals) else (float("nan"), float("nan"))
    return out
