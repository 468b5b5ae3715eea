"""Shared input-validation helpers and numerical conventions."""
from __future__ import annotations

import numpy as np

# Tolerance for "this table is normalized" checks.
PROB_TOL = 1e-12
# Floor applied inside every logarithm so losses stay finite.
PROB_FLOOR = 1e-12


class ConfigError(ValueError):
    """A user-supplied configuration is invalid (CLI exit code 1)."""


def as_float_array(value, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_probability_vector(value, name: str, tol: float = PROB_TOL) -> np.ndarray:
    vec = as_float_array(value, name, ndim=1)
    if vec.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if np.any(vec < 0):
        raise ValueError(f"{name} has negative entries")
    total = float(vec.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {tol}")
    return vec


def check_probability_table(value, name: str, tol: float = PROB_TOL) -> np.ndarray:
    """Validate a matrix whose every row is a probability vector."""
    table = as_float_array(value, name, ndim=2)
    if np.any(table < 0):
        raise ValueError(f"{name} has negative entries")
    sums = table.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValueError(
            f"{name} row {bad[0]} sums to {sums[bad[0]]!r}, expected 1 within {tol}"
        )
    return table


def check_unit_interval(value: float, name: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    return x


def check_index(value: int, bound: int, name: str) -> int:
    idx = int(value)
    if not 0 <= idx < bound:
        raise ValueError(f"{name} must lie in [0, {bound}), got {idx}")
    return idx


def frozen_array(value, name: str, ndim: int | None = None) -> np.ndarray:
    """Copy to a read-only float64 array (tables are immutable after construction)."""
    arr = np.array(value, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr
