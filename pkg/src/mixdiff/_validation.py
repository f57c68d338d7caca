"""Input validation helpers used at module boundaries."""

import numpy as np

from .exceptions import DomainError, ShapeError


def as_points(x, dim=None, name="x"):
    """Return ``x`` as a float64 array of shape ``(..., dim)``.

    Scalars are promoted to 1-D points. ``dim`` is checked against the last
    axis when given.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim is not None and arr.shape[-1] != dim:
        raise ShapeError(f"{name} has trailing dimension {arr.shape[-1]}, expected {dim}")
    return arr


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def check_time(t, horizon=1.0, name="t"):
    """Validate that every entry of ``t`` lies in ``[0, horizon]``."""
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > horizon):
        raise DomainError(f"{name} must lie in [0, {horizon}], got {t!r}")
    return arr


def time_column(t, x):
    """Broadcast a scalar or per-row time against a batch of points ``x``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    if x.ndim == 1:
        raise ShapeError("per-row times given for a single point")
    if t.shape != x.shape[:-1]:
        raise ShapeError(f"t has shape {t.shape}, expected {x.shape[:-1]}")
    return t[..., None]
