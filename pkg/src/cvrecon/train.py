"""L1 loss, Adam and the training loop."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .ctensor import ComplexTensor, ShapeError
from .metrics import MetricReport, nrmse
from .models import (ModelParams, UNetConfig, UnrolledConfig, init_unet_params,
                     init_unrolled_params, unet_graph, unrolled_graph)
from .mri_sim import AcquisitionExample

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


def l1_loss(pred, target: ComplexTensor):
    """Mean of |d re| + |d im| over all entries (component-wise, not modulus)."""
    pv = pred.value if isinstance(pred, Var) else pred
    if pv.shape != target.shape:
        raise ShapeError(f"pred {pv.shape} vs target {target.shape}")
    dr, di = pv.re - target.re, pv.im - target.im
    n = dr.size
    val = float((np.abs(dr).sum() + np.abs(di).sum()) / n)
    if not isinstance(pred, Var):
        return val
    return pred.tape.record("l1_loss", (pred,), ComplexTensor([val]),
                            lambda gr, gi: ((gr[0] * np.sign(dr) / n, gr[0] * np.sign(di) / n),))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        m, v = {}, {}
        for k, p in params.items():
            shape = (2,) + p.value.shape
            m[k], v[k] = np.zeros(shape), np.zeros(shape)
        return cls(m, v, 0)


def adam_step(params: ModelParams, grads: dict[str, ComplexTensor], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam on every real coordinate; returns (params, state)."""
    if set(grads) != set(params):
        raise KeyError(f"gradient keys {sorted(grads)} != parameter keys {sorted(params)}")
    t = state.step + 1
    c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
    new_m, new_v, values = {}, {}, {}
    for k, p in params.items():
        g = np.stack([grads[k].re, grads[k].im])
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k}")
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        upd = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        w = np.stack([p.value.re, p.value.im]) - upd
        values[k] = ComplexTensor(w[0], np.zeros_like(w[1]) if p.real else w[1])
        new_m[k], new_v[k] = m, v
    return params.with_values(values), AdamState(new_m, new_v, t)


# --- networks as graph functions ------------------------------------------

def init_params(config, seed: int) -> ModelParams:
    if isinstance(config, UnrolledConfig):
        return init_unrolled_params(config, seed)
    return init_unet_params(config, seed)


def graph_fn(config) -> Callable:
    """(tape, param vars, example) -> reconstructed image Var."""
    if isinstance(config, UnrolledConfig):
        return lambda tape, pv, ex: unrolled_graph(tape, pv, ex.kspace_u, ex.maps, ex.mask, config)
    if isinstance(config, UNetConfig):
        return lambda tape, pv, ex: unet_graph(tape, pv, tape.constant(ex.zero_filled), config)
    raise TypeError(f"unsupported model config {type(config).__name__}")


def reconstruct(config, params: ModelParams, example: AcquisitionExample) -> ComplexTensor:
    tape = Tape()
    out = graph_fn(config)(tape, params.bind(tape), example).value
    tape.clear()
    return out


def config_digest(*parts) -> str:
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    losses: list[float]
    state: AdamState
    best_step: int = 0
    best_val: float = float("inf")
    checkpoints: list[int] = field(default_factory=list)


def fit(config, examples: list[AcquisitionExample], *, steps: int, batch: int, seed: int,
        lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
        val_examples: list[AcquisitionExample] | None = None, checkpoint_every: int = 500,
        on_checkpoint: Callable | None = None, params: ModelParams | None = None) -> TrainResult:
    """Deterministic minibatch training with L1 loss and Adam.

    Examples are visited in seed-shuffled epochs.  Every ``checkpoint_every``
    steps (and at the end) the validation NRMSE is measured and the best
    parameters retained; ``on_checkpoint(step, params, val_nrmse)`` is called.
    """
    if not examples and steps > 0:
        raise ValueError("no training examples")
    if lr <= 0 or not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("need lr > 0 and 0 <= beta1, beta2 < 1")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed) if params is None else params
    state = AdamState.zeros(params)
    forward = graph_fn(config)
    batch = max(1, min(batch, len(examples))) if examples else batch
    order: list[int] = []
    losses = []
    result = TrainResult(params, params, losses, state)

    def checkpoint(step):
        val = validate(config, params, val_examples) if val_examples else float("nan")
        if not val_examples or val < result.best_val or step == 0:
            result.best_val, result.best_step, result.best_params = val, step, params
        result.checkpoints.append(step)
        if on_checkpoint is not None:
            on_checkpoint(step, params, val)

    for step in range(steps):
        idx = []
        while len(idx) < batch:
            if not order:
                order = list(rng.permutation(len(examples)))
            idx.append(order.pop(0))
        tape = Tape()
        pv = params.bind(tape)
        terms = [l1_loss(forward(tape, pv, examples[i]), examples[i].image) for i in idx]
        loss = ad.mean(terms)
        lval = float(loss.value.re[0])
        if not np.isfinite(lval):
            raise NumericalError(f"non-finite loss at step {step}")
        losses.append(lval)
        grads = ad.backward(tape, loss)
        tape.clear()
        params, state = adam_step(params, grads, state, lr, beta1, beta2, eps)
        if (step + 1) % checkpoint_every == 0 and step + 1 < steps:
            checkpoint(step + 1)
        if log.isEnabledFor(logging.DEBUG) and step % 100 == 0:
            log.debug("step %d loss %.5f", step, lval)
    checkpoint(steps)
    result.params, result.state = params, state
    if not val_examples:
        result.best_params = params
    return result


def validate(config, params: ModelParams, examples: list[AcquisitionExample]) -> float:
    return float(np.mean([nrmse(reconstruct(config, params, ex), ex.image) for ex in examples]))


def evaluate(config, params: ModelParams, examples: list[AcquisitionExample], seed=None,
             digest: str = "") -> list[MetricReport]:
    return [MetricReport.evaluate(reconstruct(config, params, ex), ex.image, acceleration=ex.acceleration,
                                  seed=seed, config_digest=digest, extra={"example": ex.meta.get("index", i)})
            for i, ex in enumerate(examples)]


# --- file-driven training --------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    model: str = "unrolled"
    conv: str = "complex"
    activation: str = "crelu"
    iterations: int = 4
    feature_maps: int | None = None
    denoiser_layers: int = 3
    kernel: int = 3
    levels: int = 4
    convs_per_level: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch: int | None = None
    steps: int = 2000
    seed: int = 0
    checkpoint_every: int = 500
    data: str = ""
    out: str = ""

    def __post_init__(self):
        if self.model not in ("unrolled", "unet"):
            raise ValueError(f"model must be 'unrolled' or 'unet', got {self.model!r}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        self.model_config()  # validates conv/activation pairing

    @classmethod
    def keys(cls) -> list[str]:
        return list(cls.__dataclass_fields__)

    @classmethod
    def from_kv(cls, items: dict[str, str]) -> "TrainConfig":
        valid = cls.keys()
        unknown = sorted(set(items) - set(valid))
        if unknown:
            raise KeyError(f"unknown config key(s) {unknown}; valid keys: {', '.join(valid)}")
        kwargs = {}
        for k, v in items.items():
            typ = cls.__dataclass_fields__[k].type
            if v == "" and "None" in typ:
                kwargs[k] = None
            elif "int" in typ:
                kwargs[k] = int(v)
            elif "float" in typ:
                kwargs[k] = float(v)
            else:
                kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        from .io import read_kv

        return cls.from_kv(read_kv(path))

    def as_kv(self) -> dict:
        return {k: ("" if v is None else v) for k, v in self.__dict__.items()}

    @property
    def batch_size(self) -> int:
        if self.batch is not None:
            return self.batch
        return 2 if self.model == "unrolled" else 3

    def model_config(self):
        act = self.activation
        if self.model == "unrolled":
            return UnrolledConfig(self.iterations, self.feature_maps or 256, self.conv, act,
                                  self.denoiser_layers, self.kernel)
        return UNetConfig(self.levels, self.feature_maps or 32, self.convs_per_level, self.conv, act, self.kernel)

    def digest(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if k not in ("data", "out")}
        return config_digest(sorted(d.items()))


@dataclass
class TrainOutcome:
    result: TrainResult
    reports: list
    out: str


def train(config: TrainConfig) -> TrainOutcome:
    """Train from a dataset directory; writes checkpoints, loss.csv and metrics.csv under ``out``."""
    from pathlib import Path

    from . import io
    from .metrics import aggregate

    data = Path(config.data)
    if not (data / "train.txt").exists():
        raise FileNotFoundError(f"dataset not found at {data}")
    train_ex = io.read_split(data, "train")
    val_ex = io.read_split(data, "val")
    test_ex = io.read_split(data, "test")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = config.model_config()
    digest = config.digest()
    kv = config.as_kv()

    def on_checkpoint(step, params, val):
        io.save_checkpoint(out / "checkpoints" / f"step_{step:06d}", params, digest, kv)

    res = fit(mcfg, train_ex, steps=config.steps, batch=config.batch_size, seed=config.seed, lr=config.lr,
              beta1=config.beta1, beta2=config.beta2, eps=config.epsilon, val_examples=val_ex or None,
              checkpoint_every=config.checkpoint_every, on_checkpoint=on_checkpoint)
    io.save_checkpoint(out / "best", res.best_params, digest, kv)
    io.write_loss_log(out / "loss.csv", res.losses)
    reports = evaluate(mcfg, res.best_params, test_ex, seed=config.seed, digest=digest) if test_ex else []
    io.write_metric_report(out / "metrics.csv", reports, aggregate(reports) if reports else
                           {k: (float("nan"), float("nan")) for k in ("nrmse", "psnr", "ssim", "phase_rmse")})
    return TrainOutcome(res, reports, str(out))
