"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .scenes import MultiViewDataset


def check_image(arr, name: str = "image") -> np.ndarray:
    """Validate a [3,H,W] float image with finite values in [0,1]."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"{name} must be [3,H,W], got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError(f"{name} values must lie in [0,1], "
                            f"got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_dataset(ds) -> MultiViewDataset:
    if not isinstance(ds, MultiViewDataset):
        raise ContractError(f"expected a MultiViewDataset, got {type(ds).__name__}")
    if not ds.source_views:
        raise ContractError("dataset has no source views")
    if not ds.target_views:
        raise ContractError("dataset has no target views")
    for i, sv in enumerate(ds.source_views):
        check_image(sv.image, f"source view {i}")
    return ds


def check_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise ContractError(f"{type(estimator).__name__} is not fitted yet; call fit first")
