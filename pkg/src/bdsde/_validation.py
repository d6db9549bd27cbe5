"""Small input-checking helpers shared across modules."""

import math
import numbers

import numpy as np

from .exceptions import ConfigurationError, EvaluationError


def check_positive_real(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be a finite positive real, got {value!r}")
    return float(value)


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_nonnegative_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ConfigurationError(f"{name} must be a nonnegative integer, got {value!r}")
    return int(value)


def check_p(p, minimum=1.0, name="p", strict=False):
    if isinstance(p, bool) or not isinstance(p, numbers.Real) or not math.isfinite(p):
        raise ConfigurationError(f"{name} must be a finite real, got {p!r}")
    if p < minimum or (strict and p == minimum):
        op = ">" if strict else ">="
        raise ConfigurationError(f"{name} must be {op} {minimum}, got {p!r}")
    return float(p)


def check_finite(array, what, step=None):
    """Raise ``EvaluationError`` naming the first non-finite path entry.

    ``array`` has the path index on axis 0.
    """
    arr = np.asarray(array)
    if np.all(np.isfinite(arr)):
        return arr
    bad = np.argwhere(~np.isfinite(arr))[0]
    path = int(bad[0]) if arr.ndim else None
    where = f"path {path}" + (f", step {step}" if step is not None else "")
    raise EvaluationError(f"non-finite value in {what} at {where}", path=path, step=step)


def as_batch(array, tail_shape, n_paths, what):
    """Coerce a callable's output to shape ``(n_paths, *tail_shape)``.

    Scalars and arrays that broadcast (e.g. a constant ``f``) are expanded.
    """
    arr = np.asarray(array, dtype=float)
    try:
        return np.broadcast_to(arr, (n_paths, *tail_shape))
    except ValueError:
        raise ConfigurationError(
            f"{what} returned shape {arr.shape}, expected {(n_paths, *tail_shape)}"
        ) from None
