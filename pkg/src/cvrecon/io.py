"""On-disk formats: CXT1 tensors, checkpoints, key=value configs, datasets, CSV and PNG."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .ctensor import ComplexTensor
from .models import ModelParams, Param
from .mri_sim import AcquisitionExample

MAGIC = b"CXT1"
DTYPE_REAL, DTYPE_COMPLEX = 0, 1


class FormatError(ValueError):
    pass


# --- CXT1 container --------------------------------------------------------

def encode_cxt(t: ComplexTensor, real: bool | None = None) -> bytes:
    """Serialise a tensor: header, then f32 LE real plane, then imaginary plane if complex."""
    if real is None:
        real = t.is_real()
    head = MAGIC + struct.pack("<BB", DTYPE_REAL if real else DTYPE_COMPLEX, t.ndim)
    head += struct.pack(f"<{t.ndim}Q", *t.shape)
    body = t.re.astype("<f4").tobytes()
    if not real:
        body += t.im.astype("<f4").tobytes()
    return head + body


def decode_cxt(buf: bytes) -> ComplexTensor:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("bad magic; not a CXT1 file")
    dtype, ndim = struct.unpack_from("<BB", buf, 4)
    if dtype not in (DTYPE_REAL, DTYPE_COMPLEX):
        raise FormatError(f"unknown dtype code {dtype}")
    off = 6 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6)
    n = int(np.prod(dims)) if ndim else 1
    planes = 1 if dtype == DTYPE_REAL else 2
    if len(buf) - off != planes * 4 * n:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {planes * 4 * n}")
    data = np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float64)
    re = data[:n].reshape(dims)
    im = data[n:].reshape(dims) if planes == 2 else None
    return ComplexTensor(re, im)


def write_cxt(path, t: ComplexTensor, real: bool | None = None) -> None:
    Path(path).write_bytes(encode_cxt(t, real))


def read_cxt(path) -> ComplexTensor:
    return decode_cxt(Path(path).read_bytes())


def read_cxt_dtype(path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    return head[4]


# --- key=value configs -----------------------------------------------------

def read_kv(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def write_kv(path, items: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()))


# --- checkpoints -----------------------------------------------------------

MANIFEST = "manifest.txt"


def save_checkpoint(directory, params: ModelParams, digest: str, config: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"config_digest\t{digest}"]
    for name, p in params.items():
        shape = ",".join(map(str, p.value.shape))
        stem = name.replace("/", "_")
        if p.kind == "kernel":
            write_cxt(d / f"{stem}.X.cxt", ComplexTensor(p.value.re), real=True)
            lines.append(f"{name}\t{stem}.X.cxt\t{shape}\tkernel-X")
            if not p.real:
                write_cxt(d / f"{stem}.Y.cxt", ComplexTensor(p.value.im), real=True)
                lines.append(f"{name}\t{stem}.Y.cxt\t{shape}\tkernel-Y")
        else:
            write_cxt(d / f"{stem}.cxt", p.value, real=p.real)
            lines.append(f"{name}\t{stem}.cxt\t{shape}\t{p.kind}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")
    if config is not None:
        write_kv(d / "config.txt", config)


def load_checkpoint(directory) -> tuple[ModelParams, str]:
    d = Path(directory)
    path = d / MANIFEST
    if not path.exists():
        raise FormatError(f"{path} not found")
    params = ModelParams()
    digest = ""
    pending: dict[str, dict] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split("\t")
        if parts[0] == "config_digest":
            digest = parts[1]
            continue
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: malformed entry")
        name, fname, shape_s, kind = parts
        shape = tuple(int(s) for s in shape_s.split(","))
        f = d / fname
        if not f.exists():
            raise FormatError(f"{path}:{lineno}: missing file {fname}")
        t = read_cxt(f)
        if t.shape != shape:
            raise FormatError(f"{fname}: shape {t.shape} does not match manifest {shape}")
        if kind in ("kernel-X", "kernel-Y"):
            pending.setdefault(name, {})[kind] = t.re
            params[name] = None  # keep manifest order
        elif kind in ("bias", "scalar"):
            params[name] = Param(t, kind, read_cxt_dtype(f) == DTYPE_REAL)
        else:
            raise FormatError(f"{path}:{lineno}: unknown kind {kind!r}")
    for name, parts in pending.items():
        X = parts["kernel-X"]
        Y = parts.get("kernel-Y")
        params[name] = Param(ComplexTensor(X, Y), "kernel", Y is None)
    return params, digest


# --- datasets --------------------------------------------------------------

SPLITS = ("train", "val", "test")


def split_indices(n: int) -> dict[str, list[int]]:
    """80/10/10 split in index order."""
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return {"train": list(range(n_train)), "val": list(range(n_train, n_train + n_val)),
            "test": list(range(n_train + n_val, n))}


def example_dirname(i: int) -> str:
    return f"ex{i:05d}"


def write_example(directory, ex: AcquisitionExample) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_cxt(d / "image.cxt", ex.image, real=False)
    write_cxt(d / "maps.cxt", ex.maps, real=False)
    write_cxt(d / "mask.cxt", ex.mask, real=True)
    write_cxt(d / "kspace.cxt", ex.kspace_u, real=False)
    (d / "meta.json").write_text(json.dumps(_jsonable(ex.meta), sort_keys=True, indent=1) + "\n")


def read_example(directory) -> AcquisitionExample:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    return AcquisitionExample(read_cxt(d / "image.cxt"), read_cxt(d / "maps.cxt"), read_cxt(d / "mask.cxt"),
                              read_cxt(d / "kspace.cxt"), meta)


def write_dataset(directory, examples: list[AcquisitionExample], info: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, ex in enumerate(examples):
        write_example(d / example_dirname(i), ex)
    for split, idx in split_indices(len(examples)).items():
        (d / f"{split}.txt").write_text("".join(example_dirname(i) + "\n" for i in idx))
    (d / "dataset.json").write_text(json.dumps(_jsonable(info), sort_keys=True, indent=1) + "\n")


def read_split(directory, split: str) -> list[AcquisitionExample]:
    d = Path(directory)
    path = d / f"{split}.txt"
    if not path.exists():
        raise FileNotFoundError(f"split manifest {path} not found")
    names = [s.strip() for s in path.read_text().splitlines() if s.strip()]
    return [read_example(d / name) for name in names]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- CSV -------------------------------------------------------------------

def write_loss_log(path, losses: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def read_loss_log(path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


def write_metric_report(path, reports, agg: dict) -> None:
    """One row per example plus ``mean`` and ``std`` aggregate rows."""
    keys = ["example", "nrmse", "psnr", "ssim", "phase_rmse", "acceleration", "seed", "config_digest"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in reports:
            row = r.as_row()
            w.writerow([_fmt(row.get(k, "")) for k in keys])
        for j, label in enumerate(("mean", "std")):
            w.writerow([label] + [_fmt(agg[k][j]) for k in ("nrmse", "psnr", "ssim", "phase_rmse")] + ["", "", ""])


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return "" if v is None else v


# --- PNG -------------------------------------------------------------------

def to_uint8(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round(np.clip((a - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)


def magnitude_u8(img: np.ndarray, hi: float | None = None) -> np.ndarray:
    mag = np.abs(img)
    if hi is None:
        hi = float(np.percentile(mag, 99.5))
    return to_uint8(mag, 0.0, hi)


def phase_u8(img: np.ndarray) -> np.ndarray:
    return to_uint8(np.angle(img), -np.pi, np.pi)


def save_png(path, u8: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(u8), mode="L").save(path, optimize=False)
