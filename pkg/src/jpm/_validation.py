"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15


def check_generator(rng) -> np.random.Generator:
    """Turn ``None``, an int seed or a Generator into a ``np.random.Generator``.

    ``RandomState`` instances are rejected; every randomized routine in this
    package draws from the PCG64-backed Generator API.
    """
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (numbers.Integral, np.integer)):
        return np.random.default_rng(None if rng is None else int(rng) & MASK64)
    raise TypeError(f"expected a numpy Generator or an integer seed, got {type(rng).__name__}")


def derive_seed(master: int, index: int) -> int:
    """Seed for the ``index``-th independent stream: ``master XOR golden*index``."""
    return (int(master) ^ ((GOLDEN64 * int(index)) & MASK64)) & MASK64


def check_order(order, m: int | None = None) -> np.ndarray:
    """Validate a full permutation of ``0..m-1`` and return it as an int array."""
    arr = np.asarray(getattr(order, "order", order))
    if arr.ndim != 1:
        raise ValueError(f"a ranking must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("ranking entries must be integer item ids")
    arr = arr.astype(np.int64)
    n = arr.size if m is None else m
    if arr.size != n or not np.array_equal(np.sort(arr), np.arange(n)):
        raise ValueError(f"expected a permutation of 0..{n - 1}, got {arr.tolist()}")
    return arr


def check_orders(orders, m: int) -> np.ndarray:
    """Validate a (n, m) stack of permutations."""
    arr = np.asarray(orders, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != m:
        raise ValueError(f"expected an array of shape (n, {m}), got {arr.shape}")
    if not np.array_equal(np.sort(arr, axis=1), np.broadcast_to(np.arange(m), arr.shape)):
        raise ValueError(f"every row must be a permutation of 0..{m - 1}")
    return arr


def check_values(X, n_features: int | None = None) -> np.ndarray:
    """Finite 2-D float matrix of biomarker measurements."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} biomarker columns, got {X.shape[1]}")
    return X


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    value = float(value)
    ok = value >= 0 if allow_zero else value > 0
    if not np.isfinite(value) or not ok:
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value
