"""Synthetic multi-coil acquisitions: phantoms, coil maps, Poisson-disc masks, SENSE."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ctensor import ComplexTensor, ShapeError, fft2c_array

# modified Shepp-Logan: intensity, semi-axis x, semi-axis y, centre x, centre y, angle (deg)
SHEPP_LOGAN = np.array([
    [1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
    [-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
    [-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
    [-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
    [0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
    [0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
    [0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
    [0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
    [0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
])


class InfeasibleMaskError(RuntimeError):
    pass


def _grid(h: int, w: int):
    y = (h / 2 - 0.5 - np.arange(h)) / (h / 2)
    x = (np.arange(w) - w / 2 + 0.5) / (w / 2)
    return np.meshgrid(x, y)


def shepp_logan(h: int, w: int, ellipses: np.ndarray = SHEPP_LOGAN) -> np.ndarray:
    xx, yy = _grid(h, w)
    img = np.zeros((h, w))
    for amp, ax, ay, x0, y0, deg in ellipses:
        t = math.radians(deg)
        xr = (xx - x0) * math.cos(t) + (yy - y0) * math.sin(t)
        yr = -(xx - x0) * math.sin(t) + (yy - y0) * math.cos(t)
        img[(xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0] += amp
    return img


def generate_phantom(h: int, w: int, seed: int, phase_detail: int = 4,
                     phase_scale: float = 1.0, jitter: float = 1.0) -> ComplexTensor:
    """Shepp-Logan magnitude with a smooth quadratic phase plus Gaussian phase bumps.

    ``jitter`` perturbs the ellipse geometry and inner intensities per seed so
    that a dataset is not a single repeated anatomy; ``jitter=0`` gives the
    standard phantom.  ``phase_scale=0`` zeroes the polynomial phase.
    """
    rng = np.random.default_rng(seed)
    ell = SHEPP_LOGAN.copy()
    n = len(ell)
    ell[:, 1:3] *= 1 + jitter * rng.uniform(-0.08, 0.08, size=(n, 2))
    ell[:, 3:5] += jitter * rng.uniform(-0.03, 0.03, size=(n, 2))
    ell[:, 5] += jitter * rng.uniform(-10, 10, size=n)
    ell[2:, 0] *= 1 + jitter * rng.uniform(-0.5, 0.5, size=n - 2)
    mag = np.clip(shepp_logan(h, w, ell), 0.0, None)
    if mag.max() > 0:
        mag = mag / mag.max()

    xx, yy = _grid(h, w)
    coeffs = phase_scale * rng.uniform(-1, 1, size=6) * (np.pi / 12)
    basis = [np.ones_like(xx), xx, yy, xx * xx, xx * yy, yy * yy]
    ph = sum(c * b for c, b in zip(coeffs, basis))
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    for _ in range(phase_detail):
        cy, cx = rng.uniform(0.2 * h, 0.8 * h), rng.uniform(0.2 * w, 0.8 * w)
        sigma = rng.uniform(2.0, 5.0)
        amp = rng.uniform(-np.pi / 2, np.pi / 2)
        ph = ph + amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma ** 2))
    ph = np.clip(ph, -np.pi, np.pi)
    return ComplexTensor(mag * np.cos(ph), mag * np.sin(ph))


def generate_maps(h: int, w: int, coils: int, seed: int, width: float = 0.9,
                  ring: float = 1.3) -> ComplexTensor:
    """Gaussian-falloff coils on a ring outside the FOV, normalised so sum |S_c|^2 = 1."""
    if coils < 1:
        raise ValueError(f"coils must be >= 1, got {coils}")
    rng = np.random.default_rng(seed)
    xx, yy = _grid(h, w)
    maps = np.empty((coils, h, w), dtype=np.complex128)
    for c in range(coils):
        ang = 2 * np.pi * c / coils
        cx, cy = ring * math.cos(ang), ring * math.sin(ang)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width ** 2))
        slope = rng.uniform(-np.pi / 2, np.pi / 2)
        direction = rng.uniform(0, 2 * np.pi)
        ph = slope * (xx * math.cos(direction) + yy * math.sin(direction)) + rng.uniform(-np.pi, np.pi)
        maps[c] = mag * np.exp(1j * ph)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return ComplexTensor.from_complex(maps)


# --- sampling masks --------------------------------------------------------

@dataclass(frozen=True)
class MaskSpec:
    H: int
    W: int
    accel_target: float
    calib: int = 20
    density_power: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.calib > min(self.H, self.W):
            raise ValueError(f"calib {self.calib} exceeds image size {self.H}x{self.W}")


def calib_slices(h: int, w: int, calib: int):
    r0, c0 = h // 2 - calib // 2, w // 2 - calib // 2
    return slice(r0, r0 + calib), slice(c0, c0 + calib)


def _radius_field(h, w, density_power):
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rho = np.hypot(rows - h // 2, cols - w // 2)
    rho_max = math.hypot(h / 2, w / 2)
    return (1 + rho / rho_max) ** density_power


def _poisson_fill(spec: MaskSpec, r0: float, order: np.ndarray, base: np.ndarray) -> np.ndarray:
    h, w = spec.H, spec.W
    radius = r0 * base
    mask = np.zeros((h, w), dtype=bool)
    sr, sc = calib_slices(h, w, spec.calib)
    calib = np.zeros((h, w), dtype=bool)
    calib[sr, sc] = True
    accepted = np.zeros((h, w), dtype=bool)
    for flat in order:
        i, j = divmod(int(flat), w)
        rp = radius[i, j]
        reach = int(math.ceil(rp))
        i0, i1 = max(i - reach, 0), min(i + reach + 1, h)
        j0, j1 = max(j - reach, 0), min(j + reach + 1, w)
        win = accepted[i0:i1, j0:j1]
        if win.any():
            qi, qj = np.nonzero(win)
            d = np.hypot(qi + i0 - i, qj + j0 - j)
            need = np.minimum(rp, radius[qi + i0, qj + j0])
            if np.any(d < need):
                continue
        accepted[i, j] = True
    mask = accepted | calib
    return mask


def poisson_mask_with_radius(spec: MaskSpec, max_steps: int = 50) -> tuple[np.ndarray, float]:
    """Variable-density Poisson-disc mask and the base radius r0 that produced it.

    Outside the calibration square, accepted samples p, q satisfy
    ``|p - q| >= min(r(p), r(q))`` with ``r(rho) = r0 (1 + rho/rho_max)^power``.
    r0 is bisected until H*W / #samples is within 5% of the target.
    """
    h, w = spec.H, spec.W
    if spec.accel_target <= 1:
        return np.ones((h, w)), 0.0
    rng = np.random.default_rng(spec.seed)
    sr, sc = calib_slices(h, w, spec.calib)
    calib = np.zeros((h, w), dtype=bool)
    calib[sr, sc] = True
    order = rng.permutation(np.flatnonzero(~calib.ravel()))
    base = _radius_field(h, w, spec.density_power)

    lo, hi = 0.0, float(max(h, w))
    for _ in range(max_steps):
        r0 = 0.5 * (lo + hi)
        mask = _poisson_fill(spec, r0, order, base)
        accel = h * w / mask.sum()
        if abs(accel / spec.accel_target - 1) <= 0.05:
            return mask.astype(np.float64), r0
        if accel < spec.accel_target:
            lo = r0
        else:
            hi = r0
    raise InfeasibleMaskError(
        f"acceleration {spec.accel_target} not reached within {max_steps} bisection steps (last {accel:.3f})")


def poisson_mask(spec: MaskSpec) -> np.ndarray:
    return poisson_mask_with_radius(spec)[0]


def audit_mask(mask: np.ndarray, spec: MaskSpec, r0: float) -> list[str]:
    """All-pairs check of a mask against its spec; returns violation messages."""
    problems = []
    h, w = spec.H, spec.W
    m = np.asarray(mask)
    if m.shape != (h, w):
        return [f"mask shape {m.shape} != {(h, w)}"]
    if not np.all((m == 0) | (m == 1)):
        problems.append("mask is not binary")
    sr, sc = calib_slices(h, w, spec.calib)
    if not np.all(m[sr, sc] == 1):
        problems.append("calibration region not fully sampled")
    if spec.accel_target > 1:
        accel = h * w / m.sum()
        if abs(accel / spec.accel_target - 1) > 0.05:
            problems.append(f"acceleration {accel:.3f} outside 5% of {spec.accel_target}")
        outside = m.astype(bool).copy()
        outside[sr, sc] = False
        pts = np.argwhere(outside).astype(np.float64)
        if len(pts) > 1:
            rad = r0 * _radius_field(h, w, spec.density_power)[outside]
            d = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
            need = np.minimum(rad[:, None], rad[None, :])
            np.fill_diagonal(d, np.inf)
            bad = int(np.sum(d < need - 1e-9) // 2)
            if bad:
                problems.append(f"{bad} sample pairs closer than the local radius")
    return problems


# --- SENSE operator --------------------------------------------------------

def _check_sense(image_shape, maps_shape, mask_shape):
    if len(maps_shape) != 3:
        raise ShapeError(f"maps must be [C, H, W], got {maps_shape}", axis="maps")
    if tuple(image_shape) != tuple(maps_shape[1:]):
        raise ShapeError(f"image {image_shape} does not match maps {maps_shape}", axis="spatial")
    if tuple(mask_shape) != tuple(maps_shape[1:]):
        raise ShapeError(f"mask {mask_shape} does not match maps {maps_shape}", axis="spatial")


def sense_forward_array(image: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return mask * fft2c_array(maps * image)


def sense_adjoint_array(kspace: np.ndarray, maps: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.sum(np.conj(maps) * fft2c_array(mask * kspace, inverse=True), axis=0)


def _mask_array(mask) -> np.ndarray:
    return mask.re if isinstance(mask, ComplexTensor) else np.asarray(mask, dtype=np.float64)


def sense_forward(image: ComplexTensor, maps: ComplexTensor, mask) -> ComplexTensor:
    m = _mask_array(mask)
    _check_sense(image.shape, maps.shape, m.shape)
    return ComplexTensor.from_complex(sense_forward_array(image.numpy(), maps.numpy(), m))


def sense_adjoint(kspace: ComplexTensor, maps: ComplexTensor, mask) -> ComplexTensor:
    m = _mask_array(mask)
    if kspace.shape != maps.shape:
        raise ShapeError(f"kspace {kspace.shape} does not match maps {maps.shape}", axis="coils")
    _check_sense(maps.shape[1:], maps.shape, m.shape)
    return ComplexTensor.from_complex(sense_adjoint_array(kspace.numpy(), maps.numpy(), m))


def simulate_acquisition(image: ComplexTensor, maps: ComplexTensor, mask, noise_sigma: float,
                         seed: int) -> ComplexTensor:
    """Masked multi-coil k-space with i.i.d. complex Gaussian noise at sampled points."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    m = _mask_array(mask)
    k = sense_forward_array(image.numpy(), maps.numpy(), m)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        shape = maps.shape
        noise = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        k = k + m * noise_sigma * noise
    return ComplexTensor.from_complex(k)


def power_iteration(apply_normal, shape, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of a Hermitian PSD operator given as a complex-array callable."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = apply_normal(x)
        lam = float(np.real(np.vdot(x, y)))
        n = np.linalg.norm(y)
        if n == 0:
            return 0.0
        x = y / n
    return lam


# --- examples and datasets -------------------------------------------------

@dataclass
class AcquisitionExample:
    image: ComplexTensor
    maps: ComplexTensor
    mask: ComplexTensor
    kspace_u: ComplexTensor
    meta: dict = field(default_factory=dict)

    @property
    def zero_filled(self) -> ComplexTensor:
        return sense_adjoint(self.kspace_u, self.maps, self.mask)

    @property
    def acceleration(self) -> float:
        return float(self.mask.size / self.mask.re.sum())


def snr_noise_sigma(image: ComplexTensor, maps: ComplexTensor, snr_db: float) -> float:
    """Per-component noise std giving the requested SNR over full coil k-space."""
    k = fft2c_array(maps.numpy() * image.numpy())
    rms = float(np.sqrt(np.mean(np.abs(k) ** 2)))
    return rms * 10 ** (-snr_db / 20) / math.sqrt(2)


def make_dataset(n: int, size: int = 64, coils: int = 8, seed: int = 0, accel=(4.0, 4.0),
                 calib: int = 12, n_masks: int = 8, phase_detail: int = 4,
                 snr_db: float = 30.0, density_power: float = 2.0) -> list[AcquisitionExample]:
    """Deterministic synthetic dataset; example i uses seed + i and one of a pool of masks."""
    lo, hi = accel
    masks = []
    for j in range(min(n_masks, max(n, 1))):
        mseed = seed + 100_000 + j
        target = float(np.random.default_rng(mseed).uniform(lo, hi)) if hi > lo else float(lo)
        spec = MaskSpec(size, size, target, calib=calib, density_power=density_power, seed=mseed)
        mask, r0 = poisson_mask_with_radius(spec)
        masks.append((spec, mask, r0))

    examples = []
    for i in range(n):
        s = seed + i
        image = generate_phantom(size, size, s, phase_detail=phase_detail)
        maps = generate_maps(size, size, coils, s)
        spec, mask, r0 = masks[i % len(masks)]
        sigma = snr_noise_sigma(image, maps, snr_db)
        kspace = simulate_acquisition(image, maps, mask, sigma, s)
        meta = {
            "index": i, "seed": s, "coils": coils, "size": size, "noise_sigma": sigma,
            "accel_target": spec.accel_target, "acceleration": size * size / mask.sum(),
            "calib": spec.calib, "density_power": spec.density_power, "mask_seed": spec.seed,
            "mask_radius": r0, "phase_detail": phase_detail,
        }
        examples.append(AcquisitionExample(image, maps, ComplexTensor(mask), kspace, meta))
    return examples
