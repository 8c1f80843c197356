"""Input checks shared by the estimators."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .ctensor import ComplexTensor
from .mri_sim import AcquisitionExample


def check_acquisitions(X, split: str = "train") -> list[AcquisitionExample]:
    """Accept one example, a sequence of examples, or a dataset directory."""
    if isinstance(X, AcquisitionExample):
        return [X]
    if isinstance(X, (str, Path)):
        from .io import read_split

        return read_split(X, split)
    try:
        out = list(X)
    except TypeError:
        raise TypeError(f"expected AcquisitionExample(s) or a dataset path, got {type(X).__name__}") from None
    for i, ex in enumerate(out):
        if not isinstance(ex, AcquisitionExample):
            raise TypeError(f"element {i} is {type(ex).__name__}, not AcquisitionExample")
        if ex.kspace_u.shape != ex.maps.shape or ex.maps.shape[1:] != ex.image.shape:
            raise ValueError(f"element {i}: inconsistent shapes image {ex.image.shape}, maps {ex.maps.shape}, "
                             f"kspace {ex.kspace_u.shape}")
    return out


def check_targets(examples: list[AcquisitionExample], y=None) -> list[ComplexTensor]:
    """Targets default to each example's ground-truth image."""
    if y is None:
        return [ex.image for ex in examples]
    ys = [t if isinstance(t, ComplexTensor) else ComplexTensor.from_complex(np.asarray(t)) for t in y]
    if len(ys) != len(examples):
        raise ValueError(f"{len(ys)} targets for {len(examples)} examples")
    for i, (t, ex) in enumerate(zip(ys, examples)):
        if t.shape != ex.image.shape:
            raise ValueError(f"target {i} has shape {t.shape}, expected {ex.image.shape}")
    return ys


def with_targets(examples: list[AcquisitionExample], ys: list[ComplexTensor]) -> list[AcquisitionExample]:
    return [ex if t is ex.image else AcquisitionExample(t, ex.maps, ex.mask, ex.kspace_u, ex.meta)
            for ex, t in zip(examples, ys)]
