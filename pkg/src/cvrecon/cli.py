"""Command-line entry point: ``cvrecon {phantom,train,compare,gradcheck,verify,recon}``.

Exit codes: 0 success, 1 usage error, 2 data/invariant error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .baseline_cs import DivergenceError
from .ctensor import ComplexTensor, ShapeError
from .mri_sim import MaskSpec, audit_mask, make_dataset, simulate_acquisition
from .train import NumericalError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cvrecon")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(typ):
    def parse(s):
        try:
            return [typ(x) for x in s.split(",") if x.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


# --- phantom ---------------------------------------------------------------

def cmd_phantom(args) -> int:
    accel = (args.accel, args.accel) if args.accel_max is None else (args.accel, args.accel_max)
    examples = make_dataset(args.n, size=args.size, coils=args.coils, seed=args.seed, accel=accel,
                            calib=args.calib, n_masks=args.masks, phase_detail=args.phase_detail,
                            snr_db=args.snr_db)
    info = {"n": args.n, "size": args.size, "coils": args.coils, "seed": args.seed, "accel": list(accel),
            "calib": args.calib, "masks": args.masks, "phase_detail": args.phase_detail, "snr_db": args.snr_db}
    io.write_dataset(args.out, examples, info)
    print(f"wrote {len(examples)} examples to {args.out}")
    return EXIT_OK


# --- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        config = TrainConfig.from_file(args.config)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e).strip("'\"")) from None
    overrides = {k: v for k, v in (("data", args.data), ("out", args.out)) if v}
    if overrides:
        config = TrainConfig.from_kv({**{k: str(v) for k, v in config.as_kv().items()}, **overrides})
    if not config.data or not (Path(config.data) / "train.txt").exists():
        raise DataError(f"dataset not found: {config.data!r}")
    if not config.out:
        raise UsageError("config needs an 'out' directory")
    outcome = train(config)
    if outcome.reports:
        mean = np.mean([r.nrmse for r in outcome.reports])
        print(f"trained {config.steps} steps; test NRMSE {mean:.4f}; checkpoint {Path(config.out) / 'best'}")
    else:
        print(f"trained {config.steps} steps; checkpoint {Path(config.out) / 'best'}")
    return EXIT_OK


# --- compare ---------------------------------------------------------------

def _cell_config(model, mode, activation, width, depth, args, data, out) -> TrainConfig:
    from .models import UNetConfig, UnrolledConfig, parity_width

    act = activation
    if mode == "real":
        if activation not in ("relu", "crelu"):
            raise ValueError("complex activations require conv=complex")
        act = "relu"
    elif activation == "relu":
        act = "crelu"
    if model == "unrolled":
        ref = UnrolledConfig(depth, width, "complex", "crelu", args.denoiser_layers)
    else:
        ref = UNetConfig(depth, width, 2, "complex", "crelu")
    w = width if mode == "complex" else parity_width(ref, width)
    kv = {"model": model, "conv": mode, "activation": act, "feature_maps": w, "steps": args.steps,
          "seed": args.seed, "data": data, "out": out, "denoiser_layers": args.denoiser_layers,
          "checkpoint_every": args.checkpoint_every}
    if model == "unrolled":
        kv["iterations"] = depth
    else:
        kv["levels"] = depth
    if args.batch:
        kv["batch"] = args.batch
    return TrainConfig.from_kv({k: str(v) for k, v in kv.items()})


def _panel(images: list[np.ndarray], truth: np.ndarray, scale: float, kind: str) -> np.ndarray:
    if kind == "magnitude":
        hi = float(np.percentile(np.abs(truth), 99.5))
        top = [io.magnitude_u8(im, hi) for im in images]
        bottom = [io.to_uint8(np.abs(np.abs(im) - np.abs(truth)) * scale, 0.0, hi) for im in images]
    else:
        top = [io.phase_u8(im) for im in images]
        bottom = [io.to_uint8(np.abs(np.angle(im * np.conj(truth))) * scale, 0.0, np.pi) for im in images]
    return np.vstack([np.hstack(top), np.hstack(bottom)])


def cmd_compare(args) -> int:
    from .estimators import WaveletCSReconstructor
    from .metrics import MetricReport, aggregate
    from .models import param_count

    data, out = Path(args.data), Path(args.out)
    if not (data / "test.txt").exists():
        raise DataError(f"dataset not found at {data}")
    out.mkdir(parents=True, exist_ok=True)
    test = io.read_split(data, "test")
    val = io.read_split(data, "val") or test

    rows = []
    recons: dict[str, list] = {}

    def add_row(method, mode, act, width, real_width, depth, params, status, reports):
        agg = aggregate(reports) if reports else {k: (float("nan"),) * 2 for k in ("nrmse", "psnr", "ssim", "phase_rmse")}
        rows.append({"method": method, "mode": mode, "activation": act, "width": width, "real_width": real_width,
                     "depth": depth, "params": params, "status": status,
                     **{k: agg[k][0] for k in ("nrmse", "psnr", "ssim", "phase_rmse")}})

    zf = [ex.zero_filled for ex in test]
    add_row("zero-filled", "", "", "", "", "", 0, "ok", [MetricReport.evaluate(p, ex.image) for p, ex in zip(zf, test)])
    recons["input"] = zf
    cs = WaveletCSReconstructor(lam=args.cs_lambda).fit(val)
    cs_imgs = [cs.reconstruct(ex) for ex in test]
    add_row(f"cs-l1-wavelet(lam={cs.lam_:g})", "", "", "", "", "", 0, "ok",
            [MetricReport.evaluate(p, ex.image) for p, ex in zip(cs_imgs, test)])
    recons["cs"] = cs_imgs

    from .train import reconstruct
    best_by_mode: dict[str, tuple[float, list]] = {}
    for mode in args.modes:
        for act in args.activations:
            for width in args.widths:
                for depth in args.depths:
                    name = f"{args.model}-{mode}-{act}-w{width}-d{depth}"
                    try:
                        cfg = _cell_config(args.model, mode, act, width, depth, args, str(data),
                                           str(out / "cells" / name))
                        outcome = train(cfg)
                        params = outcome.result.best_params
                        mcfg = cfg.model_config()
                        add_row(name, mode, cfg.activation, width, cfg.feature_maps if mode == "real" else "",
                                depth, param_count(params), "ok", outcome.reports)
                        score = float(np.mean([r.nrmse for r in outcome.reports]))
                        if score < best_by_mode.get(mode, (np.inf, None))[0]:
                            best_by_mode[mode] = (score, [reconstruct(mcfg, params, ex) for ex in test[:args.panels]])
                    except (ValueError, NumericalError, DivergenceError, ShapeError) as e:
                        log.warning("cell %s failed: %s", name, e)
                        add_row(name, mode, act, width, "", depth, 0, f"failed: {e}", [])

    table = out / "table.csv"
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: io._fmt(v) for k, v in r.items()})

    panels = out / "panels"
    panels.mkdir(exist_ok=True)
    for i, ex in enumerate(test[:args.panels]):
        truth = ex.image.numpy()
        cols = [recons["input"][i].numpy()]
        for mode in ("real", "complex"):
            if mode in best_by_mode:
                cols.append(best_by_mode[mode][1][i].numpy())
        cols += [recons["cs"][i].numpy(), truth]
        io.save_png(panels / f"ex{i:03d}_magnitude.png", _panel(cols, truth, args.diff_scale, "magnitude"))
        io.save_png(panels / f"ex{i:03d}_phase.png", _panel(cols, truth, args.diff_scale, "phase"))
    print(f"wrote {table} ({len(rows)} rows)")
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------

def gradcheck_suite(seed: int = 0) -> dict[str, float]:
    """Worst central-difference relative error per differentiable component."""
    from . import autodiff as ad
    from . import nn
    from .metrics import nrmse
    from .models import (UNetConfig, UnrolledConfig, dc_step, init_unet_params, init_unrolled_params,
                         unet_graph, unrolled_graph)
    from .mri_sim import generate_maps, generate_phantom, poisson_mask
    from .train import l1_loss

    rng = np.random.default_rng(seed)

    def rand(*shape, away=0.0):
        re, im = rng.standard_normal(shape), rng.standard_normal(shape)
        if away:
            re = np.where(np.abs(re) < away, away * np.sign(re + 1e-300) + re, re)
            im = np.where(np.abs(im) < away, away * np.sign(im + 1e-300) + im, im)
        return ComplexTensor(re, im)

    def offset(params):
        # zero biases put pre-activations exactly on the kinks; nudge them off
        return params.with_values({
            n: ComplexTensor(0.1 * rng.standard_normal(p.value.shape),
                             0.0 if p.real else 0.1 * rng.standard_normal(p.value.shape))
            if p.kind == "bias" and not n.endswith("act_bias") else p.value
            for n, p in params.items()})

    def weighted(v):
        # fixed complex readout turns any output into a real scalar
        n = np.arange(v.value.size).reshape(v.shape)
        return ad.sum_re(ad.cmul_const(v, ComplexTensor(np.cos(n), np.sin(n))))

    out = {}
    x = rand(2, 5, 5)
    kern = {"x": x, "w": rand(3, 2, 3, 3), "b": rand(3)}
    out["conv-complex"] = ad.gradcheck(lambda v: weighted(ad.conv2d(v["x"], v["w"], v["b"])), kern)
    rk = {"x": ComplexTensor(x.re), "w": ComplexTensor(rand(3, 2, 3, 3).re), "b": ComplexTensor(rand(3).re)}
    out["conv-real"] = ad.gradcheck(lambda v: weighted(ad.conv2d_real(v["x"], v["w"], v["b"])), rk)

    pts = rand(2, 4, 4, away=1e-3)
    out["relu"] = ad.gradcheck(lambda v: weighted(nn.relu_two_channel(v)), pts)
    out["crelu"] = ad.gradcheck(lambda v: weighted(nn.crelu(v)), pts)
    out["zrelu"] = ad.gradcheck(lambda v: weighted(nn.zrelu(v)), pts)
    out["cardioid"] = ad.gradcheck(lambda v: weighted(nn.cardioid(v)), pts)
    mags = np.hypot(pts.re, pts.im)
    bias = np.array([-0.3, 0.2])
    # keep |d| + b away from zero
    ok = np.abs(mags + bias[:, None, None]) > 1e-3
    pts_m = ComplexTensor(np.where(ok, pts.re, pts.re * 3), np.where(ok, pts.im, pts.im * 3))
    out["modrelu"] = ad.gradcheck(lambda v: weighted(nn.modrelu(v["d"], v["b"])),
                                  {"d": pts_m, "b": ComplexTensor(bias)})

    size, coils = 8, 3
    img = generate_phantom(size, size, seed, phase_detail=1)
    maps = generate_maps(size, size, coils, seed)
    mask = poisson_mask(MaskSpec(size, size, 2.0, calib=2, seed=seed))
    k = simulate_acquisition(img, maps, mask, 0.01, seed)
    out["dc_step"] = ad.gradcheck(lambda v: weighted(dc_step(v["y"], k, maps, mask, v["t"])),
                                  {"y": rand(size, size), "t": ComplexTensor([0.7])})
    target = rand(4, 4)
    out["l1_loss"] = ad.gradcheck(lambda v: l1_loss(v, target), rand(4, 4))
    out["nrmse"] = ad.gradcheck(lambda v: nrmse(v, target), rand(4, 4))

    ucfg = UnrolledConfig(iterations=2, feature_maps=4, conv_mode="complex", activation="crelu")
    up = offset(init_unrolled_params(ucfg, seed))

    out["unrolled-complex"] = ad.gradcheck(
        lambda v: l1_loss(unrolled_graph(next(iter(v.values())).tape, v, k, maps, mask, ucfg), img), up.tensors())

    rcfg = UnrolledConfig(iterations=2, feature_maps=6, conv_mode="real", activation="relu")
    rp = offset(init_unrolled_params(rcfg, seed))
    out["unrolled-real"] = ad.gradcheck(
        lambda v: l1_loss(unrolled_graph(next(iter(v.values())).tape, v, k, maps, mask, rcfg), img), rp.tensors())

    size = 16
    img16 = generate_phantom(size, size, seed, phase_detail=1)
    ncfg = UNetConfig(levels=2, base_features=4, convs_per_level=1)
    npar = offset(init_unet_params(ncfg, seed))
    zf = ComplexTensor(img16.re + 0.05 * rng.standard_normal(img16.shape), img16.im)

    def unet_loss(v):
        tape = next(iter(v.values())).tape
        return l1_loss(unet_graph(tape, v, tape.constant(zf), ncfg), img16)
    out["unet-complex"] = ad.gradcheck(unet_loss, npar.tensors(), max_coords=200, seed=seed)
    return out


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(args.seed)
    worst = 0.0
    for name, err in results.items():
        flag = "ok" if err <= args.tol else "FAIL"
        print(f"{name:18s} {err:.3e} {flag}")
        worst = max(worst, err)
    print(f"worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_NUMERIC


# --- verify ----------------------------------------------------------------

def verify_dataset(directory) -> list[str]:
    d = Path(directory)
    problems = []
    names: list[str] = []
    for split in io.SPLITS:
        path = d / f"{split}.txt"
        if not path.exists():
            problems.append(f"missing split manifest {split}.txt")
            continue
        names += [s.strip() for s in path.read_text().splitlines() if s.strip()]
    if len(set(names)) != len(names):
        problems.append("an example appears in more than one split")
    for name in names:
        try:
            ex = io.read_example(d / name)
        except (OSError, io.FormatError) as e:
            problems.append(f"{name}: {e}")
            continue
        meta = ex.meta
        h, w = ex.image.shape
        norm = np.sum(ex.maps.re ** 2 + ex.maps.im ** 2, axis=0)
        # f32 storage bounds the attainable normalisation accuracy
        if np.max(np.abs(norm - 1)) > 1e-5:
            problems.append(f"{name}: coil maps not normalised (max err {np.max(np.abs(norm - 1)):.2e})")
        spec = MaskSpec(h, w, float(meta.get("accel_target", 1.0)), calib=int(meta.get("calib", 0)),
                        density_power=float(meta.get("density_power", 2.0)), seed=int(meta.get("mask_seed", 0)))
        problems += [f"{name}: {p}" for p in audit_mask(ex.mask.re, spec, float(meta.get("mask_radius", 0.0)))]
        resim = simulate_acquisition(ex.image, ex.maps, ex.mask, float(meta.get("noise_sigma", 0.0)),
                                     int(meta.get("seed", 0)))
        scale = max(float(np.max(np.abs(resim.numpy()))), 1e-12)
        err = float(np.max(np.abs(resim.numpy() - ex.kspace_u.numpy()))) / scale
        if err > 1e-4:
            problems.append(f"{name}: k-space inconsistent with image/maps/mask (rel err {err:.2e})")
        if np.any(ex.kspace_u.numpy()[:, ex.mask.re == 0]):
            problems.append(f"{name}: non-zero k-space at unsampled locations")
    return problems


def cmd_verify(args) -> int:
    if not Path(args.data).is_dir():
        raise DataError(f"dataset not found at {args.data}")
    problems = verify_dataset(args.data)
    for p in problems:
        print(p)
    print(f"{len(problems)} violation(s)")
    return EXIT_DATA if problems else EXIT_OK


# --- recon -----------------------------------------------------------------

def cmd_recon(args) -> int:
    from .metrics import MetricReport, aggregate
    from .train import reconstruct

    ex_dir = Path(args.example)
    if not ex_dir.is_dir():
        raise DataError(f"example not found at {ex_dir}")
    ex = io.read_example(ex_dir)
    if args.method == "network":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for --method network")
        ck = Path(args.checkpoint)
        params, digest = io.load_checkpoint(ck)
        cfg = TrainConfig.from_kv(io.read_kv(ck / "config.txt"))
        img = reconstruct(cfg.model_config(), params, ex)
    elif args.method == "zero-filled":
        img, digest = ex.zero_filled, ""
    elif args.method == "cs":
        from .baseline_cs import CsConfig, ista_wavelet_recon

        img, digest = ista_wavelet_recon(ex.kspace_u, ex.maps, ex.mask, CsConfig(lam=args.cs_lambda)), ""
    else:
        img, digest = ex.image, ""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    z = img.numpy()
    io.save_png(out / "magnitude.png", io.magnitude_u8(z))
    io.save_png(out / "phase.png", io.phase_u8(z))
    io.write_cxt(out / "recon.cxt", img, real=False)
    report = MetricReport.evaluate(img, ex.image, acceleration=ex.acceleration, seed=ex.meta.get("seed"),
                                   config_digest=digest, extra={"example": ex.meta.get("index", 0)})
    io.write_metric_report(out / "metrics.csv", [report], aggregate([report]))
    print(f"nrmse {report.nrmse:.6f} psnr {report.psnr:.3f} ssim {report.ssim:.6f}")
    return EXIT_OK


# --- entry -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvrecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="generate a synthetic multi-coil dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--coils", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--accel", type=float, default=4.0, help="target acceleration (or range start)")
    s.add_argument("--accel-max", type=float, default=None, help="range end; masks draw R uniformly")
    s.add_argument("--calib", type=int, default=12)
    s.add_argument("--masks", type=int, default=8, help="number of distinct sampling masks")
    s.add_argument("--phase-detail", type=int, default=4)
    s.add_argument("--snr-db", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("train", help="train a network from a key=value config")
    s.add_argument("--config", required=True)
    s.add_argument("--data", default=None, help="override the config's data path")
    s.add_argument("--out", default=None, help="override the config's out path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("compare", help="real vs complex sweep with parameter parity")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=("unrolled", "unet"), default="unrolled")
    s.add_argument("--modes", type=_csv_list(str), default=["real", "complex"])
    s.add_argument("--activations", type=_csv_list(str), default=["crelu"])
    s.add_argument("--widths", type=_csv_list(int), default=[16])
    s.add_argument("--depths", type=_csv_list(int), default=[2])
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--denoiser-layers", type=int, default=3)
    s.add_argument("--checkpoint-every", type=int, default=500)
    s.add_argument("--cs-lambda", type=float, default=None, help="fixed CS lambda (default: grid search)")
    s.add_argument("--diff-scale", type=float, default=40.0)
    s.add_argument("--panels", type=int, default=3)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("verify", help="audit dataset invariants")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("recon", help="reconstruct one example and write PNGs + metrics")
    s.add_argument("--example", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--method", choices=("network", "zero-filled", "cs", "truth"), default="network")
    s.add_argument("--cs-lambda", type=float, default=1e-3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_recon)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"cvrecon: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, io.FormatError, OSError) as e:
        print(f"cvrecon: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, DivergenceError, FloatingPointError) as e:
        print(f"cvrecon: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
