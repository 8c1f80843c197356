"""scikit-learn style reconstructors.

``fit(X)`` takes a sequence of :class:`AcquisitionExample` (or a dataset
directory) and learns from each example's ground-truth image; ``predict(X)``
returns a complex ndarray [n, H, W]; ``score`` is the negative mean NRMSE.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_acquisitions, check_targets, with_targets
from .baseline_cs import LAMBDA_GRID, CsConfig, ista_wavelet_recon, select_lambda
from .metrics import nrmse
from .models import UNetConfig, UnrolledConfig, param_count
from .train import config_digest, fit, reconstruct


class _ReconstructorMixin:
    def reconstruct(self, example):
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        examples = check_acquisitions(X, split="test")
        return np.stack([self.reconstruct(ex).numpy() for ex in examples])

    def score(self, X, y=None) -> float:
        examples = check_acquisitions(X, split="test")
        ys = check_targets(examples, y)
        pred = self.predict(examples)
        return -float(np.mean([nrmse(p, t) for p, t in zip(pred, ys)]))


class _NetworkReconstructor(_ReconstructorMixin, BaseEstimator):
    def _model_config(self):
        raise NotImplementedError

    def fit(self, X, y=None, X_val=None):
        examples = check_acquisitions(X)
        examples = with_targets(examples, check_targets(examples, y))
        val = check_acquisitions(X_val, split="val") if X_val is not None else None
        self.config_ = self._model_config()
        res = fit(self.config_, examples, steps=self.steps, batch=self.batch_size, seed=self.random_state,
                  lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.epsilon,
                  val_examples=val, checkpoint_every=self.checkpoint_every)
        self.params_ = res.best_params
        self.last_params_ = res.params
        self.loss_curve_ = list(res.losses)
        self.best_step_ = res.best_step
        self.n_params_ = param_count(self.params_)
        self.digest_ = config_digest(self.config_, self.random_state)
        return self

    def reconstruct(self, example):
        check_is_fitted(self, "params_")
        return reconstruct(self.config_, self.params_, example)


class UnrolledReconstructor(_NetworkReconstructor):
    """Unrolled data-consistency + residual-denoiser network."""

    def __init__(self, iterations=4, feature_maps=256, conv_mode="complex", activation="crelu",
                 denoiser_layers=3, kernel=3, steps=2000, batch_size=2, learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, epsilon=1e-8, checkpoint_every=500, random_state=0):
        self.iterations = iterations
        self.feature_maps = feature_maps
        self.conv_mode = conv_mode
        self.activation = activation
        self.denoiser_layers = denoiser_layers
        self.kernel = kernel
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.checkpoint_every = checkpoint_every
        self.random_state = random_state

    def _model_config(self):
        return UnrolledConfig(self.iterations, self.feature_maps, self.conv_mode, self.activation,
                              self.denoiser_layers, self.kernel)


class UNetReconstructor(_NetworkReconstructor):
    """U-Net applied to the zero-filled image."""

    def __init__(self, levels=4, base_features=32, convs_per_level=2, conv_mode="complex", activation="crelu",
                 kernel=3, steps=2000, batch_size=3, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, checkpoint_every=500, random_state=0):
        self.levels = levels
        self.base_features = base_features
        self.convs_per_level = convs_per_level
        self.conv_mode = conv_mode
        self.activation = activation
        self.kernel = kernel
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.checkpoint_every = checkpoint_every
        self.random_state = random_state

    def _model_config(self):
        return UNetConfig(self.levels, self.base_features, self.convs_per_level, self.conv_mode,
                          self.activation, self.kernel)


class WaveletCSReconstructor(_ReconstructorMixin, BaseEstimator):
    """ISTA with Haar soft-thresholding; ``lam=None`` selects lambda on the fit data."""

    def __init__(self, lam=None, lam_grid=LAMBDA_GRID, iterations=100, step=1.0, wavelet_levels=2):
        self.lam = lam
        self.lam_grid = lam_grid
        self.iterations = iterations
        self.step = step
        self.wavelet_levels = wavelet_levels

    def fit(self, X, y=None):
        examples = check_acquisitions(X, split="val")
        examples = with_targets(examples, check_targets(examples, y))
        base = CsConfig(0.0, self.iterations, self.step, self.wavelet_levels)
        if self.lam is None:
            self.lam_, self.lam_scores_ = select_lambda(examples, self.lam_grid, base)
        else:
            self.lam_, self.lam_scores_ = float(self.lam), {}
        self.config_ = CsConfig(self.lam_, self.iterations, self.step, self.wavelet_levels)
        return self

    def reconstruct(self, example):
        check_is_fitted(self, "config_")
        return ista_wavelet_recon(example.kspace_u, example.maps, example.mask, self.config_)


class ZeroFilledReconstructor(_ReconstructorMixin, BaseEstimator):
    """A^H applied to the measured k-space."""

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def reconstruct(self, example):
        return example.zero_filled
