"""Input validation helpers shared by the mesh model and the estimator API."""

import numpy as np


def as_float_array(values, name, shape=None):
    """Convert to a C-contiguous float64 array, checking shape and finiteness."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        expected = tuple(shape)
        actual = arr.shape
        if len(expected) != len(actual) or any(
            e is not None and e != a for e, a in zip(expected, actual)
        ):
            raise ValueError(f"{name}: expected shape {expected}, got {actual}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def as_index_array(values, name, n_valid, shape=None):
    """Convert to an int64 index array and check every entry is in [0, n_valid)."""
    arr = np.ascontiguousarray(values, dtype=np.int64)
    if shape is not None:
        expected = tuple(shape)
        actual = arr.shape
        if len(expected) != len(actual) or any(
            e is not None and e != a for e, a in zip(expected, actual)
        ):
            raise ValueError(f"{name}: expected shape {expected}, got {actual}")
    if arr.size and (arr.min() < 0 or arr.max() >= n_valid):
        raise ValueError(f"{name}: index out of range [0, {n_valid})")
    return arr


def check_same_shape(a, b, name_a, name_b):
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"{name_a} shape {np.shape(a)} does not match {name_b} shape {np.shape(b)}"
        )
