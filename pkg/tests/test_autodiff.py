import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvrecon import autodiff as ad
from cvrecon.ctensor import ComplexTensor, ConvKernel, ShapeError, conv2d_complex, conv2d_real
from conftest import random_complex

TOL = 1e-6


def _ct(rng, *shape):
    return ComplexTensor.from_complex(random_complex(rng, *shape))


def _readout(v):
    n = np.arange(v.value.size).reshape(v.shape)
    return ad.sum_re(ad.cmul_const(v, ComplexTensor(np.cos(n), np.sin(n))))


def test_gradient_of_sum_sq_is_twice_value(rng):
    x = _ct(rng, 3, 2)
    tape = ad.Tape()
    g = ad.backward(tape, ad.sum_sq(tape.leaf(x, "x")))["x"]
    np.testing.assert_allclose(g.re, 2 * x.re)
    np.testing.assert_allclose(g.im, 2 * x.im)


def test_disconnected_leaf_gets_zero_gradient(rng):
    tape = ad.Tape()
    x = tape.leaf(_ct(rng, 2), "x")
    tape.leaf(_ct(rng, 4), "unused")
    grads = ad.backward(tape, ad.sum_sq(x))
    assert set(grads) == {"x", "unused"}
    assert grads["unused"].shape == (4,) and not np.any(grads["unused"].numpy())


def test_shared_input_accumulates(rng):
    tape = ad.Tape()
    x = tape.leaf(_ct(rng, 3), "x")
    g = ad.backward(tape, ad.sum_re(x + x))["x"]
    np.testing.assert_array_equal(g.re, 2 * np.ones(3))


def test_non_scalar_loss_rejected(rng):
    tape = ad.Tape()
    x = tape.leaf(_ct(rng, 3), "x")
    with pytest.raises(ad.GradientError):
        ad.backward(tape, x)


def test_inputs_from_another_tape_rejected(rng):
    t1, t2 = ad.Tape(), ad.Tape()
    with pytest.raises(ValueError):
        ad.add(t1.leaf(_ct(rng, 2)), t2.leaf(_ct(rng, 2)))


@pytest.mark.parametrize("op", [
    lambda v: ad.scale(v, -0.7),
    lambda v: ad.real_part(v),
    lambda v: ad.reshape(v, (4, 2, 2)),
    lambda v: ad.from_channels(ad.to_channels(v)),
    lambda v: ad.avg_pool2(v),
    lambda v: ad.upsample2(v),
    lambda v: ad.concat([v, ad.scale(v, 2.0)]),
    lambda v: ad.sub(v, ad.scale(v, 0.3)),
], ids=["scale", "real_part", "reshape", "channels", "avg_pool2", "upsample2", "concat", "sub"])
def test_generic_op_gradients(op, rng):
    assert ad.gradcheck(lambda v: _readout(op(v)), _ct(rng, 2, 4, 2)) <= TOL


def test_mean_gradient(rng):
    x = {"a": _ct(rng, 3), "b": _ct(rng, 3)}
    err = ad.gradcheck(lambda v: ad.mean([ad.sum_sq(v["a"]), _readout(v["b"])]), x)
    assert err <= TOL


@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]), st.integers(0, 2 ** 31))
def test_complex_conv_gradient(cin, cout, k, seed):
    rng = np.random.default_rng(seed)
    x = {"x": _ct(rng, cin, 4, 5), "w": _ct(rng, cout, cin, k, k), "b": _ct(rng, cout)}
    assert ad.gradcheck(lambda v: _readout(ad.conv2d(v["x"], v["w"], v["b"])), x) <= TOL


def test_real_conv_gradient(rng):
    x = {"x": ComplexTensor(rng.standard_normal((2, 5, 4))), "w": ComplexTensor(rng.standard_normal((3, 2, 3, 3))),
         "b": ComplexTensor(rng.standard_normal(3))}
    assert ad.gradcheck(lambda v: _readout(ad.conv2d_real(v["x"], v["w"], v["b"])), x) <= TOL


def test_tape_conv_matches_kernel_conv(rng):
    x, w, b = _ct(rng, 2, 6, 6), _ct(rng, 3, 2, 3, 3), _ct(rng, 3)
    tape = ad.Tape()
    got = ad.conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value
    want = conv2d_complex(x, ConvKernel(w.re, w.im, b))
    np.testing.assert_allclose(got.numpy(), want.numpy(), atol=1e-12)
    got_r = ad.conv2d_real(tape.constant(ComplexTensor(x.re)), tape.constant(ComplexTensor(w.re))).value
    np.testing.assert_allclose(got_r.re, conv2d_real(x.re, w.re), atol=1e-12)


def test_pool_rejects_odd_size(rng):
    tape = ad.Tape()
    with pytest.raises(ShapeError):
        ad.avg_pool2(tape.leaf(_ct(rng, 1, 3, 4)))


def test_gradcheck_detects_wrong_backward(rng):
    def bad(v):
        return v.tape.record("bad", (v,), ComplexTensor([float(np.sum(v.value.re ** 2))]),
                             lambda gr, gi: ((v.value.re, np.zeros(v.shape)),))  # missing factor 2
    assert ad.gradcheck(bad, _ct(rng, 3)) > 0.4


def test_gradcheck_max_coords_samples(rng):
    err = ad.gradcheck(lambda v: ad.sum_sq(v), _ct(rng, 50), max_coords=5, seed=3)
    assert err <= TOL
