import numpy as np
import pytest

from cvrecon import autodiff as ad
from cvrecon.ctensor import ComplexTensor, ShapeError
from cvrecon.models import ModelParams, Param, UNetConfig, UnrolledConfig
from cvrecon.mri_sim import make_dataset
from cvrecon.train import (AdamState, NumericalError, TrainConfig, adam_step, evaluate, fit, l1_loss,
                           reconstruct)


@pytest.fixture(scope="module")
def tiny():
    return make_dataset(6, size=16, coils=2, calib=4, n_masks=2)


def test_l1_is_componentwise():
    p = ComplexTensor([3.0, 0.0], [4.0, -1.0])
    t = ComplexTensor([0.0, 0.0], [0.0, 0.0])
    assert l1_loss(p, t) == pytest.approx((3 + 4 + 0 + 1) / 2)


def test_l1_gradient():
    rng = np.random.default_rng(0)
    t = ComplexTensor(rng.standard_normal(6), rng.standard_normal(6))
    x = ComplexTensor(rng.standard_normal(6), rng.standard_normal(6))
    assert ad.gradcheck(lambda v: l1_loss(v, t), x) <= 1e-8


def test_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        l1_loss(ComplexTensor(np.zeros(3)), ComplexTensor(np.zeros(4)))


def _quadratic(target):
    params = ModelParams()
    params["w"] = Param(ComplexTensor(np.zeros(3), np.zeros(3)), "bias", False)
    params["r"] = Param(ComplexTensor(np.zeros(2)), "bias", True)

    def grads(p):
        w, r = p["w"].value, p["r"].value
        return {"w": ComplexTensor(2 * (w.re - target.re), 2 * (w.im - target.im)),
                "r": ComplexTensor(2 * (r.re - 1.0), 2 * r.im)}
    return params, grads


def test_adam_first_step_is_lr_times_sign():
    target = ComplexTensor([1.0, -2.0, 3.0], [0.5, 0.5, -0.5])
    params, grads = _quadratic(target)
    new, state = adam_step(params, grads(params), AdamState.zeros(params), lr=0.01)
    # bias correction makes the first update exactly lr * sign(g) (up to eps)
    np.testing.assert_allclose(new["w"].value.re, 0.01 * np.sign(target.re), rtol=1e-6)
    np.testing.assert_allclose(new["w"].value.im, 0.01 * np.sign(target.im), rtol=1e-6)
    assert state.step == 1


def test_adam_converges_on_quadratic_and_keeps_real_params_real():
    target = ComplexTensor([1.0, -2.0, 3.0], [0.5, 0.5, -0.5])
    params, grads = _quadratic(target)
    state = AdamState.zeros(params)
    for _ in range(3000):
        params, state = adam_step(params, grads(params), state, lr=0.05)
    np.testing.assert_allclose(params["w"].value.numpy(), target.numpy(), atol=1e-3)
    np.testing.assert_allclose(params["r"].value.re, 1.0, atol=1e-3)
    assert not np.any(params["r"].value.im)


def test_adam_rejects_bad_gradients():
    params, grads = _quadratic(ComplexTensor(np.ones(3)))
    g = grads(params)
    with pytest.raises(KeyError):
        adam_step(params, {"w": g["w"]}, AdamState.zeros(params))
    g["w"] = ComplexTensor([np.nan, 0, 0])
    with pytest.raises(NumericalError):
        adam_step(params, g, AdamState.zeros(params))


@pytest.mark.parametrize("cfg", [UnrolledConfig(iterations=1, feature_maps=4),
                                 UnrolledConfig(iterations=1, feature_maps=4, conv_mode="real", activation="relu"),
                                 UNetConfig(levels=2, base_features=4, convs_per_level=1)])
def test_fit_reduces_loss_and_is_deterministic(tiny, cfg):
    a = fit(cfg, tiny, steps=60, batch=2, seed=0, lr=3e-3)
    b = fit(cfg, tiny, steps=60, batch=2, seed=0, lr=3e-3)
    assert a.losses == b.losses
    assert all(a.params[k].value == b.params[k].value for k in a.params)
    assert np.mean(a.losses[-10:]) < np.mean(a.losses[:10])


def test_fit_tracks_best_checkpoint(tiny):
    seen = []
    res = fit(UnrolledConfig(iterations=1, feature_maps=3), tiny[:4], steps=20, batch=2, seed=1,
              val_examples=tiny[4:], checkpoint_every=5, on_checkpoint=lambda s, p, v: seen.append((s, v)))
    assert [s for s, _ in seen] == [5, 10, 15, 20]
    assert res.best_val == min(v for _, v in seen)
    assert res.best_step in (5, 10, 15, 20)


def test_fit_validates_hyperparameters(tiny):
    with pytest.raises(ValueError):
        fit(UnrolledConfig(iterations=1, feature_maps=2), tiny, steps=1, batch=1, seed=0, lr=0)
    with pytest.raises(ValueError):
        fit(UnrolledConfig(iterations=1, feature_maps=2), [], steps=1, batch=1, seed=0)


def test_evaluate_reports(tiny):
    cfg = UnrolledConfig(iterations=0, feature_maps=2)
    from cvrecon.models import init_unrolled_params

    reps = evaluate(cfg, init_unrolled_params(cfg, 0), tiny[:2], seed=3, digest="abc")
    assert len(reps) == 2 and reps[0].seed == 3 and reps[0].config_digest == "abc"
    assert reps[0].nrmse == pytest.approx(np.linalg.norm((tiny[0].zero_filled.numpy() - tiny[0].image.numpy()))
                                          / np.linalg.norm(tiny[0].image.numpy()))


def test_train_config_parsing():
    cfg = TrainConfig.from_kv({"model": "unet", "conv": "real", "activation": "relu", "lr": "0.01",
                               "steps": "5", "feature_maps": "7"})
    assert cfg.lr == 0.01 and cfg.steps == 5 and cfg.feature_maps == 7
    assert cfg.batch_size == 3
    assert TrainConfig().batch_size == 2
    assert cfg.model_config().base_features == 7
    with pytest.raises(KeyError) as e:
        TrainConfig.from_kv({"learning_rate": "1"})
    assert "lr" in str(e.value)
    for bad in ({"lr": "0"}, {"beta1": "1.0"}, {"model": "gan"}, {"conv": "real", "activation": "cardioid"}):
        with pytest.raises(ValueError):
            TrainConfig.from_kv(bad)


def test_train_config_digest_ignores_paths():
    a = TrainConfig.from_kv({"data": "x", "out": "y"})
    b = TrainConfig.from_kv({"data": "z", "out": "w"})
    assert a.digest() == b.digest() != TrainConfig.from_kv({"seed": "1"}).digest()


def test_reconstruct_shape(tiny):
    cfg = UnrolledConfig(iterations=1, feature_maps=2)
    from cvrecon.models import init_unrolled_params

    assert reconstruct(cfg, init_unrolled_params(cfg, 0), tiny[0]).shape == (16, 16)
