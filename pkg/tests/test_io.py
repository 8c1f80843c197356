import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from cvrecon import io
from cvrecon.ctensor import ComplexTensor
from cvrecon.metrics import MetricReport, aggregate
from cvrecon.models import UnrolledConfig, init_unrolled_params
from cvrecon.mri_sim import make_dataset

f32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=f32),
       arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=f32))
def test_cxt_round_trip_is_bit_exact(re, im):
    im = np.resize(im, re.shape)
    t = ComplexTensor(re, im)
    back = io.decode_cxt(io.encode_cxt(t, real=False))
    assert back.re.astype(np.float32).tobytes() == re.tobytes()
    assert back.im.astype(np.float32).tobytes() == im.tobytes()
    assert io.encode_cxt(back, real=False) == io.encode_cxt(t, real=False)


def test_cxt_layout():
    t = ComplexTensor([[1.0, 2.0]], [[3.0, 4.0]])
    buf = io.encode_cxt(t)
    assert buf[:4] == b"CXT1" and buf[4] == 1 and buf[5] == 2
    assert struct.unpack("<2Q", buf[6:22]) == (1, 2)
    assert np.frombuffer(buf[22:], "<f4").tolist() == [1.0, 2.0, 3.0, 4.0]
    real = io.encode_cxt(ComplexTensor([5.0]))
    assert real[4] == 0 and len(real) == 6 + 8 + 4


@pytest.mark.parametrize("buf", [b"XXXX\x00\x01", b"CXT1\x07\x00", b"CXT1\x00\x01\x02",
                                 io.encode_cxt(ComplexTensor([1.0, 2.0]))[:-1]])
def test_cxt_malformed(buf):
    with pytest.raises(io.FormatError):
        io.decode_cxt(buf)


def test_kv_round_trip(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nmodel = unet  # trailing\n\nlr=0.01\n")
    assert io.read_kv(p) == {"model": "unet", "lr": "0.01"}
    io.write_kv(p, {"a": 1, "b": "x"})
    assert io.read_kv(p) == {"a": "1", "b": "x"}
    p.write_text("nonsense\n")
    with pytest.raises(io.FormatError):
        io.read_kv(p)


@pytest.mark.parametrize("mode,act", [("complex", "modrelu"), ("real", "relu")])
def test_checkpoint_round_trip(tmp_path, mode, act):
    cfg = UnrolledConfig(iterations=2, feature_maps=3, conv_mode=mode, activation=act)
    params = init_unrolled_params(cfg, 5)
    io.save_checkpoint(tmp_path, params, "d1g", {"seed": 5})
    back, digest = io.load_checkpoint(tmp_path)
    assert digest == "d1g" and list(back) == list(params)
    for k, p in params.items():
        q = back[k]
        assert q.kind == p.kind and q.real == p.real
        np.testing.assert_array_equal(q.value.re, p.value.re.astype(np.float32))
        np.testing.assert_array_equal(q.value.im, p.value.im.astype(np.float32))
    kinds = {line.split("\t")[3] for line in (tmp_path / "manifest.txt").read_text().splitlines()[1:]}
    assert kinds == ({"kernel-X", "kernel-Y", "bias", "scalar"} if mode == "complex" else {"kernel-X", "bias", "scalar"})
    assert io.read_kv(tmp_path / "config.txt") == {"seed": "5"}


def test_checkpoint_missing_file(tmp_path):
    cfg = UnrolledConfig(iterations=1, feature_maps=2)
    io.save_checkpoint(tmp_path, init_unrolled_params(cfg, 0), "x")
    next(tmp_path.glob("*.Y.cxt")).unlink()
    with pytest.raises(io.FormatError):
        io.load_checkpoint(tmp_path)


def test_dataset_round_trip(tmp_path):
    ds = make_dataset(10, size=16, coils=2, calib=4, n_masks=2)
    io.write_dataset(tmp_path, ds, {"n": 10})
    assert [len(io.read_split(tmp_path, s)) for s in io.SPLITS] == [8, 1, 1]
    ex = io.read_split(tmp_path, "test")[0]
    np.testing.assert_allclose(ex.image.numpy(), ds[9].image.numpy(), atol=1e-6)
    assert ex.meta["index"] == 9


def test_split_indices_partition():
    for n in (0, 1, 7, 10, 240):
        s = io.split_indices(n)
        assert sorted(s["train"] + s["val"] + s["test"]) == list(range(n))


def test_csv_logs(tmp_path):
    io.write_loss_log(tmp_path / "loss.csv", [0.5, 0.25])
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "step,loss"
    assert io.read_loss_log(tmp_path / "loss.csv") == [0.5, 0.25]
    t = np.ones((16, 16))
    reps = [MetricReport.evaluate(t * 0.9, t, seed=1)]
    io.write_metric_report(tmp_path / "m.csv", reps, aggregate(reps))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("example,nrmse") and lines[-2].startswith("mean") and lines[-1].startswith("std")


def test_png_mappings(tmp_path):
    z = np.exp(1j * np.linspace(-np.pi + 1e-9, np.pi, 16)).reshape(4, 4)
    ph = io.phase_u8(z)
    assert ph.min() == 0 and ph.max() == 255
    mag = io.magnitude_u8(np.arange(16.0).reshape(4, 4))
    assert mag.dtype == np.uint8 and mag.max() == 255
    io.save_png(tmp_path / "a.png", ph)
    img = Image.open(tmp_path / "a.png")
    assert img.mode == "L" and np.array_equal(np.asarray(img), ph)
