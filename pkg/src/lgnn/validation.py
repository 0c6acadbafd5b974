"""Input checks shared by the estimator wrappers and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import LabelError, ShapeError


def check_images(X, shape=(3, 32, 32), dtype=np.float32) -> np.ndarray:
    """Coerce ``X`` to a finite ``(n, *shape)`` array.

    Flat rows of ``prod(shape)`` values are reshaped in channel-major order,
    the same layout as the binary records.
    """
    X = np.asarray(X)
    if X.dtype == object or not np.issubdtype(X.dtype, np.number):
        raise ShapeError(f"expected numeric images, got dtype {X.dtype}")
    shape = tuple(int(s) for s in shape)
    flat = int(np.prod(shape))
    if X.ndim == 2 and X.shape[1] == flat:
        X = X.reshape(len(X), *shape)
    if X.ndim == len(shape):
        X = X[None]
    if X.shape[1:] != shape:
        raise ShapeError(f"expected images of shape (n, {', '.join(map(str, shape))}) "
                         f"or (n, {flat}); got {X.shape}")
    if len(X) == 0:
        raise ShapeError("no samples")
    X = X.astype(dtype, copy=False)
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or infinity")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise LabelError(f"expected {n} labels in a 1-D array, got shape {y.shape}")
    return y


def check_vectors(X) -> np.ndarray:
    """2-D finite float64 array with at least one row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ShapeError(f"expected a non-empty (n, d) array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN or infinity")
    return X


def check_grid(m, n) -> tuple[int, int]:
    m, n = int(m), int(n)
    if m < 1 or n < 1:
        raise ValueError(f"grid dimensions must be positive, got {m}x{n}")
    return m, n
