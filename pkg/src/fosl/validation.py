"""Input validation shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils import check_array

from .exceptions import DataError, ShapeError
from .mts import Dataset, MtsSample


def check_mts_stack(X, n_channels: int | None = None, n_rows: int | None = None) -> np.ndarray:
    """Coerce ``X`` to a finite float array of shape ``(n_samples, H, P)``.

    Accepts a Dataset, a sequence of MtsSample, or anything array-like. A
    single ``H x P`` matrix is promoted to a stack of one.
    """
    if isinstance(X, Dataset):
        X = X.X
    elif isinstance(X, MtsSample):
        X = X.values[None]
    elif isinstance(X, (list, tuple)) and X and isinstance(X[0], MtsSample):
        X = np.stack([s.values for s in X])
    try:
        X = check_array(X, allow_nd=True, ensure_2d=False, dtype=float)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"expected (n_samples, H, P), got shape {X.shape}")
    if n_channels is not None and X.shape[2] != n_channels:
        raise ShapeError(f"X has {X.shape[2]} channels, expected {n_channels}")
    if n_rows is not None and X.shape[1] != n_rows:
        raise ShapeError(f"X has {X.shape[1]} rows per sample, expected {n_rows}")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ShapeError(f"y has shape {y.shape}, expected ({n_samples},)")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise DataError("labels must be integer class indices")
        y = y.astype(int)
    return y


def as_dataset(X, y=None, channel_names: Sequence[str] = (), rate_hz: float = 25.0) -> Dataset:
    """Wrap an array stack and labels as a Dataset (Datasets pass through)."""
    if isinstance(X, Dataset):
        if y is not None and not np.array_equal(np.asarray(y), X.y):
            raise DataError("labels passed alongside a Dataset disagree with it")
        return X
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], MtsSample) and y is None:
        return Dataset(tuple(X))
    X = check_mts_stack(X)
    if y is None:
        raise DataError("labels are required")
    y = check_labels(y, len(X))
    return Dataset(
        tuple(
            MtsSample(values=x, label=int(lab), scenario_id=k, rate_hz=rate_hz, channel_names=tuple(channel_names))
            for k, (x, lab) in enumerate(zip(X, y))
        )
    )
