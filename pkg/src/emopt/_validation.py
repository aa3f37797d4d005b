"""Small input-checking helpers shared by the public entry points."""

import numpy as np

from ._errors import DimensionError, DomainError

SYMMETRY_TOL = 1e-12


def as_vector(x, name, size=None):
    arr = np.array(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, name, shape=None):
    arr = np.array(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise DimensionError(
                    f"{name} has {got} entries along axis {axis}, expected {want}"
                )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_symmetric(x, name, size=None):
    arr = as_matrix(x, name, (size, size))
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    scale = max(1.0, float(np.max(np.abs(arr)))) if arr.size else 1.0
    if np.max(np.abs(arr - arr.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (arr + arr.T)


def as_bounds(lower, upper, size=None):
    lo = as_vector(lower, "lower", size)
    hi = as_vector(upper, "upper", lo.shape[0])
    if np.any(hi <= lo):
        raise DomainError("every lower bound must be strictly below its upper bound")
    return lo, hi


def as_sigma(sigma, size):
    """Return ``(Sigma, Sigma_inv)`` from a diagonal vector or a full SPD matrix."""
    arr = np.array(sigma, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.ndim == 1:
        if arr.shape[0] != size:
            raise DimensionError(f"sigma must have length {size}, got {arr.shape[0]}")
        if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
            raise DomainError("diagonal sigma entries must be positive and finite")
        return np.diag(arr), np.diag(1.0 / arr)
    sig = as_symmetric(arr, "sigma", size)
    return sig, np.linalg.inv(sig)
