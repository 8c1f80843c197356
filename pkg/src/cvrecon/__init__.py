"""Complex-valued CNNs for undersampled multi-coil MRI reconstruction."""
from .ctensor import ComplexTensor, ConvKernel, ShapeError, conv2d_complex, conv2d_real, fft2c, ifft2c
from .estimators import (UNetReconstructor, UnrolledReconstructor, WaveletCSReconstructor,
                         ZeroFilledReconstructor)
from .metrics import MetricReport, nrmse, phase_rmse, psnr, ssim
from .models import UNetConfig, UnrolledConfig
from .mri_sim import AcquisitionExample, MaskSpec, make_dataset, poisson_mask
from .nn import ActivationKind, activate, parity_feature_maps

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "AcquisitionExample", "ComplexTensor", "ConvKernel", "MaskSpec", "MetricReport",
    "ShapeError", "UNetConfig", "UNetReconstructor", "UnrolledConfig", "UnrolledReconstructor",
    "WaveletCSReconstructor", "ZeroFilledReconstructor", "activate", "conv2d_complex", "conv2d_real",
    "fft2c", "ifft2c", "make_dataset", "nrmse", "parity_feature_maps", "phase_rmse", "poisson_mask",
    "psnr", "ssim",
]
