"""Input validation helpers shared by the estimators and functional API."""
import numbers

import numpy as np

from .exceptions import DimMismatch, NonFinite


def check_scalar(x, name, *, min_val=None, max_val=None, include_min=True, target_type=numbers.Real):
    """Validate a scalar hyper-parameter and return it unchanged."""
    if not isinstance(x, target_type) or isinstance(x, bool):
        raise TypeError(f"{name} must be {target_type.__name__}, got {type(x).__name__}")
    if min_val is not None:
        if (include_min and x < min_val) or (not include_min and x <= min_val):
            op = ">=" if include_min else ">"
            raise ValueError(f"{name} must be {op} {min_val}, got {x}")
    if max_val is not None and x > max_val:
        raise ValueError(f"{name} must be <= {max_val}, got {x}")
    return x


def check_array(a, name="array", *, ndim=None, shape=None, allow_empty=True, finite=True):
    """Convert to a float64 ndarray and check rank, shape and finiteness.

    ``shape`` may contain ``None`` for free axes.
    """
    a = np.asarray(a, dtype=np.float64)
    if ndim is not None and a.ndim != ndim:
        raise DimMismatch(f"{name} must be {ndim}-D, got shape {a.shape}")
    if shape is not None:
        if a.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, a.shape)):
            raise DimMismatch(f"{name} must have shape {shape}, got {a.shape}")
    if not allow_empty and a.size == 0:
        raise ValueError(f"{name} is empty")
    if finite and not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return a


def check_sequences(X, name="X", *, dim=None):
    """Validate a list of 2-D ``(T, dim)`` arrays; a single 2-D array is wrapped."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for i, x in enumerate(X):
        x = check_array(x, f"{name}[{i}]", ndim=2)
        if dim is not None and x.shape[1] != dim:
            raise DimMismatch(f"{name}[{i}] has dimension {x.shape[1]}, expected {dim}")
        out.append(x)
    return out
