"""Input validation helpers shared by the estimators and file readers."""

from __future__ import annotations

import numpy as np


class TraceError(ValueError):
    """A timestamp sequence violates the trace invariants."""


def check_timestamps(timestamps, *, name: str = "timestamps") -> np.ndarray:
    """Return ``timestamps`` as a 1-D int64 array, rejecting non-increasing input."""
    arr = np.asarray(timestamps)
    if arr.ndim != 1:
        raise TraceError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        return arr.astype(np.int64)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.rint(arr)):
            raise TraceError(f"{name} must be integer nanoseconds")
    elif arr.dtype.kind not in "iu":
        raise TraceError(f"{name} must be integer nanoseconds, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    bad = np.flatnonzero(np.diff(arr) <= 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise TraceError(f"{name} not strictly increasing at index {i} "
                         f"({arr[i - 1]} -> {arr[i]})")
    return arr


def check_rates(rates, *, name: str = "rates") -> np.ndarray:
    arr = np.asarray(rates, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0)):
        raise ValueError(f"{name} must be positive and finite")
    return arr
