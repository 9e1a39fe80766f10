"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from mixcl.data import TimeSeriesDataset


def check_panel(X, min_length: int = 1) -> np.ndarray:
    """Coerce ``X`` to a finite float64 (N, C, T) array.

    Accepts a :class:`TimeSeriesDataset`, an (N, T) matrix (read as
    univariate) or an (N, C, T) array.
    """
    if isinstance(X, TimeSeriesDataset):
        X = X.samples
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=True)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"expected an (N, T) or (N, C, T) array, got {X.ndim} dimensions")
    if X.shape[2] < min_length:
        raise ValueError(f"series length {X.shape[2]} is below the minimum of {min_length}")
    return X


def check_panel_shape(X: np.ndarray, n_channels: int, length: int | None = None) -> None:
    if X.shape[1] != n_channels:
        raise ValueError(f"X has {X.shape[1]} channels but the estimator was fitted with {n_channels}")
    if length is not None and X.shape[2] != length:
        raise ValueError(f"X has length {X.shape[2]} but the estimator was fitted with length {length}")
