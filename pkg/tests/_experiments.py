"""Desk-scale training experiments shared by the acceptance tests.

Results are cached as JSON keyed by the cell and a hash of the package
source, so an unchanged tree does not retrain.  Set CVRECON_FRESH=1 to
ignore the cache.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

import cvrecon
from cvrecon.baseline_cs import CsConfig, ista_wavelet_recon, select_lambda
from cvrecon.metrics import MetricReport, aggregate
from cvrecon.models import UnrolledConfig, param_count, parity_width
from cvrecon.mri_sim import make_dataset
from cvrecon.train import evaluate, fit

ROOT = Path(__file__).resolve().parent.parent
CACHE = Path(os.environ.get("CVRECON_CACHE", ROOT / ".acceptance_cache"))

N_TRAIN, N_VAL, N_TEST = 200, 20, 20
SIZE, ACCEL, CALIB = 64, 4.0, 12
ITERATIONS, COMPLEX_WIDTH, STEPS, BATCH = 2, 16, 2000, 2
SEEDS = (0, 1, 2)
ACTIVATIONS = ("crelu", "modrelu", "zrelu", "cardioid")


@functools.lru_cache(maxsize=1)
def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(cvrecon.__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    h.update(repr((N_TRAIN, N_VAL, N_TEST, SIZE, ACCEL, CALIB, ITERATIONS, COMPLEX_WIDTH, STEPS, BATCH)).encode())
    return h.hexdigest()[:12]


@functools.lru_cache(maxsize=1)
def splits():
    ds = make_dataset(N_TRAIN + N_VAL + N_TEST, size=SIZE, seed=0, accel=(ACCEL, ACCEL), calib=CALIB)
    return ds[:N_TRAIN], ds[N_TRAIN:N_TRAIN + N_VAL], ds[N_TRAIN + N_VAL:]


def _cached(key: str, compute):
    path = CACHE / f"{key}-{source_digest()}.json"
    if path.exists() and not os.environ.get("CVRECON_FRESH"):
        return json.loads(path.read_text())
    result = compute()
    CACHE.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=1))
    return result


def cell_config(mode: str, activation: str) -> UnrolledConfig:
    ref = UnrolledConfig(ITERATIONS, COMPLEX_WIDTH, "complex", "crelu")
    width = COMPLEX_WIDTH if mode == "complex" else parity_width(ref, COMPLEX_WIDTH)
    return UnrolledConfig(ITERATIONS, width, mode, activation)


def _summary(reports) -> dict:
    return {k: v[0] for k, v in aggregate(reports).items()}


def run_cell(mode: str, activation: str, seed: int) -> dict:
    def compute():
        train, _, test = splits()
        cfg = cell_config(mode, activation)
        t0 = time.perf_counter()
        res = fit(cfg, train, steps=STEPS, batch=BATCH, seed=seed)
        seconds = time.perf_counter() - t0
        return {"mode": mode, "activation": activation, "seed": seed, "width": cfg.feature_maps,
                "params": param_count(res.params), "seconds": seconds,
                "loss_first": float(np.mean(res.losses[:20])), "loss_last": float(np.mean(res.losses[-50:])),
                **_summary(evaluate(cfg, res.params, test))}

    return _cached(f"{mode}-{activation}-s{seed}", compute)


def zero_filled() -> dict:
    def compute():
        _, _, test = splits()
        return _summary([MetricReport.evaluate(ex.zero_filled, ex.image) for ex in test])

    return _cached("zero-filled", compute)


def cs_baseline() -> dict:
    def compute():
        _, val, test = splits()
        lam, scores = select_lambda(val, config=CsConfig())
        cfg = CsConfig(lam=lam)
        reports = [MetricReport.evaluate(ista_wavelet_recon(ex.kspace_u, ex.maps, ex.mask, cfg), ex.image)
                   for ex in test]
        return {"lam": lam, "scores": {repr(k): v for k, v in scores.items()}, **_summary(reports)}

    return _cached("cs", compute)


def all_cells() -> list[tuple[str, str, int]]:
    cells = [("complex", "crelu", s) for s in SEEDS] + [("real", "relu", s) for s in SEEDS]
    return cells + [("complex", a, 0) for a in ACTIVATIONS if a != "crelu"]


if __name__ == "__main__":
    print("zero-filled", zero_filled(), flush=True)
    print("cs", cs_baseline(), flush=True)
    for cell in all_cells():
        print(cell, run_cell(*cell), flush=True)
