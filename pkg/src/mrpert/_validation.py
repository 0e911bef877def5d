"""Error types and small input-validation helpers shared by all modules."""

from __future__ import annotations

import numbers

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an array or object argument is malformed or non-finite."""


class ParameterError(ValueError):
    """Raised when a scalar exponent or parameter lies outside its range."""


class EnvelopeClassError(ValueError):
    """Raised when an envelope is not in the weighted Lebesgue class a scheme needs."""


class RefinementError(RuntimeError):
    """Raised when a grid is too coarse for the requested computation."""


class ContractionError(RuntimeError):
    """Raised when a fixed-point iteration fails to contract after bisection."""


class NotFittedError(AttributeError):
    """Raised when a solver estimator is used before ``fit``."""


def check_finite_array(values, name="values", ndim=None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name, strict=True) -> float:
    if not isinstance(value, numbers.Real):
        raise ParameterError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ParameterError(f"{name} must be {bound}, got {value}")
    return value


def check_exponent(p, name="p", allow_one=False) -> float:
    """Lebesgue exponent above one (infinity allowed; one when ``allow_one``)."""
    p = float(p)
    if not (p > 1 or (allow_one and p == 1)):
        raise ParameterError(f"{name} must be > 1, got {p}")
    return p


def check_weight(p, kappa, touches_zero=True) -> float:
    """Power weight exponent with local integrability of t^kappa against p."""
    kappa = float(kappa)
    if kappa < 0:
        raise ParameterError(f"weight exponent must be >= 0, got {kappa}")
    if touches_zero and np.isfinite(p) and kappa >= p - 1:
        raise ParameterError(
            f"weight exponent {kappa} must be < p - 1 = {p - 1} on intervals touching 0"
        )
    return kappa


def check_vector(u0, dim, name="u0") -> np.ndarray:
    arr = check_finite_array(u0, name=name).reshape(-1)
    if arr.shape[0] != dim:
        raise InvalidInputError(f"{name} has length {arr.shape[0]}, expected {dim}")
    return arr


def check_is_fitted(estimator, attribute="trajectory_"):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call 'fit' first"
        )
