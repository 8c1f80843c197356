import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvrecon.baseline_cs import (CsConfig, haar2, haar2_array, ista_wavelet_recon, select_lambda,
                                 soft_threshold)
from cvrecon.ctensor import ComplexTensor, ShapeError
from cvrecon.metrics import nrmse
from cvrecon.mri_sim import (MaskSpec, generate_maps, generate_phantom, make_dataset, poisson_mask,
                             sense_adjoint, simulate_acquisition)
from conftest import random_complex


@given(st.sampled_from([(8, 8), (16, 8), (32, 32)]), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_haar_orthonormal(shape, levels, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    w = haar2_array(x, levels)
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    np.testing.assert_allclose(haar2_array(w, levels, inverse=True), x, atol=1e-12)


def test_haar_constant_image_is_one_coefficient():
    w = haar2_array(np.ones((8, 8)), 3)
    assert w[0, 0] == pytest.approx(8.0)
    assert np.count_nonzero(np.abs(w) > 1e-12) == 1


def test_haar_single_level_oracle():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    # 2x2 Haar: average, then row/column/diagonal differences
    np.testing.assert_allclose(haar2_array(x, 1), [[5.0, -1.0], [-2.0, 0.0]], atol=1e-14)


def test_haar_indivisible_rejected():
    with pytest.raises(ShapeError):
        haar2(ComplexTensor(np.zeros((6, 8))), 2)


def test_soft_threshold_keeps_phase():
    rng = np.random.default_rng(0)
    z = random_complex(rng, 100)
    out = soft_threshold(ComplexTensor.from_complex(z), 0.5).numpy()
    keep = np.abs(z) > 0.5
    np.testing.assert_allclose(np.abs(out[keep]), np.abs(z[keep]) - 0.5, atol=1e-12)
    np.testing.assert_allclose(np.angle(out[keep]), np.angle(z[keep]), atol=1e-12)
    assert not np.any(out[~keep])
    with pytest.raises(ValueError):
        soft_threshold(ComplexTensor.from_complex(z), -1.0)


def test_lambda_zero_full_mask_single_coil_exact():
    img = generate_phantom(16, 16, 0)
    maps = ComplexTensor(np.ones((1, 16, 16)))
    mask = np.ones((16, 16))
    k = simulate_acquisition(img, maps, mask, 0.0, 0)
    out = ista_wavelet_recon(k, maps, mask, CsConfig(lam=0.0, iterations=1))
    np.testing.assert_allclose(out.numpy(), img.numpy(), atol=1e-8)


def test_objective_non_increasing():
    img, maps = generate_phantom(32, 32, 0), generate_maps(32, 32, 4, 0)
    mask = poisson_mask(MaskSpec(32, 32, 4.0, calib=6, seed=0))
    k = simulate_acquisition(img, maps, mask, 0.005, 0)
    res = ista_wavelet_recon(k, maps, mask, CsConfig(lam=1e-3, iterations=30), return_objective=True)
    diffs = np.diff(res.objective[1:])
    assert np.all(diffs <= 1e-12 * res.objective[1])


def test_fixed_point_stays_put():
    # with a unitary A the first iterate is the exact minimiser
    img = generate_phantom(16, 16, 1)
    maps = ComplexTensor(np.ones((1, 16, 16)))
    mask = np.ones((16, 16))
    k = simulate_acquisition(img, maps, mask, 0.01, 0)
    x1 = ista_wavelet_recon(k, maps, mask, CsConfig(lam=0.05, iterations=1))
    x2 = ista_wavelet_recon(k, maps, mask, CsConfig(lam=0.05, iterations=2))
    assert np.linalg.norm(x2.numpy() - x1.numpy()) <= 1e-8
    assert not (x1 == sense_adjoint(k, maps, mask))


def test_cs_beats_zero_filled():
    ds = make_dataset(3, size=32, coils=4, calib=6, n_masks=1)
    for ex in ds:
        cs = ista_wavelet_recon(ex.kspace_u, ex.maps, ex.mask, CsConfig(lam=1e-3))
        assert nrmse(cs, ex.image) < nrmse(ex.zero_filled, ex.image)


def test_select_lambda_prefers_sparsity():
    ds = make_dataset(2, size=32, coils=4, calib=6, n_masks=1)
    best, scores = select_lambda(ds, grid=(0.0, 1e-3), config=CsConfig(iterations=30))
    assert best == 1e-3 and set(scores) == {0.0, 1e-3}


def test_config_validation():
    with pytest.raises(ValueError):
        CsConfig(lam=-1)
    with pytest.raises(ValueError):
        CsConfig(step=2.5)
