"""Input validation helpers.

All public entry points funnel array arguments through these so that
shape and dtype errors surface with a usable message instead of a deep
numpy traceback. Everything is converted to float64; the package does
all arithmetic in double precision.
"""

from __future__ import annotations

import numpy as np


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Return X as a finite 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no rows")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def as_label_vector(y, n_classes: int | None = None, name: str = "labels") -> np.ndarray:
    """Return y as a 1-D int64 array of class indices in [0, n_classes)."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {y.shape}")
    if y.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.asarray(y, dtype=np.float64)
        if not np.all(rounded == np.floor(rounded)):
            raise ValueError(f"{name} must be integer class indices")
        y = rounded.astype(np.int64)
    else:
        y = y.astype(np.int64)
    if np.any(y < 0):
        raise ValueError(f"{name} contains negative class indices")
    if n_classes is not None and np.any(y >= n_classes):
        raise ValueError(f"{name} contains indices >= n_classes ({n_classes})")
    return y


def as_flat_float(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    """Return v as a finite 1-D float64 array, optionally of fixed length."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if length is not None and v.size != length:
        raise ValueError(f"{name} has length {v.size}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_posterior_matrix(P, n_classes: int | None = None, name: str = "posteriors") -> np.ndarray:
    """Validate a batch of class posteriors: rows sum to one within 1e-9."""
    P = as_float_matrix(P, name=name)
    if n_classes is not None and P.shape[1] != n_classes:
        raise ValueError(f"{name} has {P.shape[1]} columns, expected {n_classes}")
    if np.any(P < -1e-12) or np.any(P > 1.0 + 1e-9):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    sums = P.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise ValueError(f"{name} rows must sum to 1 within 1e-9")
    return P


def check_matching_rows(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise ValueError(f"{name_a} and {name_b} must have matching length "
                         f"({len(a)} vs {len(b)})")
