"""Flory-Huggins logarithmic potential and its energy-regularized family.

All functions are vectorized over ``xi`` (scalars or numpy arrays) and pure.

The regularized potential is evaluated in the form where the two linear
``-xi`` terms have been cancelled.
For ``delta`` below ``1e-18`` nothing is special-cased; near ``xi = +-1``
the values then behave like ``delta = 1e-18`` up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy


class DomainError(ValueError):
    """Raised when a potential is evaluated outside its domain of definition."""


@dataclass(frozen=True)
class PotentialParams:
    """Regularization scale ``delta`` and double-well coefficient ``c``."""

    delta: float = 1e-18
    c: float = 1.5

    def __post_init__(self):
        if not (self.delta >= 0.0):
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not (self.c >= 0.0):
            raise ValueError(f"c must be >= 0, got {self.c}")


@dataclass(frozen=True)
class BoundFunctionalParams:
    """Smoothing width ``kappa`` of the C^2 bound functionals."""

    kappa: float

    def __post_init__(self):
        if not (self.kappa > 0.0):
            raise ValueError(f"kappa must be > 0, got {self.kappa}")


def _check_unit_interval(xi):
    if np.any(np.abs(xi) > 1.0):
        raise DomainError("logarithmic potential needs |xi| <= 1 when delta = 0")


def _scalar_or_array(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def eval_flog(xi, c: float):
    """F_log(xi) = (1+xi)ln(1+xi) + (1-xi)ln(1-xi) - c xi^2 on [-1, 1].

    The endpoints use the continuous extension ``0 * ln 0 = 0``.
    """
    xi = np.asarray(xi, dtype=float)
    _check_unit_interval(xi)
    out = xlogy(1.0 + xi, 1.0 + xi) + xlogy(1.0 - xi, 1.0 - xi) - c * xi * xi
    return _scalar_or_array(out)


def _half_log(a, delta):
    # 0.5 * ln(a^2 + delta); a^2 overflows only beyond |a| ~ 1e154
    return 0.5 * np.log(a * a + delta)


def eval_flog_delta(xi, p: PotentialParams):
    """Regularized potential F_log^delta.

    Reduces to :func:`eval_flog` (exactly, by dispatch) when ``p.delta == 0``.
    """
    if p.delta == 0.0:
        return eval_flog(xi, p.c)
    xi = np.asarray(xi, dtype=float)
    sd = np.sqrt(p.delta)
    a = xi + 1.0
    b = xi - 1.0
    out = (
        a * _half_log(a, p.delta)
        + sd * np.arctan(a / sd)
        - b * _half_log(b, p.delta)
        - sd * np.arctan(b / sd)
        - p.c * xi * xi
    )
    return _scalar_or_array(out)


def eval_flog1_prime(xi, p: PotentialParams):
    """Derivative of the convex (logarithmic) part: 0.5 ln(((xi+1)^2+d)/((xi-1)^2+d)).

    Bounded in absolute value by :func:`flog_delta_prime_bound` when delta > 0.
    """
    xi = np.asarray(xi, dtype=float)
    if p.delta == 0.0:
        _check_unit_interval(xi)
        with np.errstate(divide="ignore"):
            out = np.log1p(xi) - np.log1p(-xi)
    else:
        out = _half_log(xi + 1.0, p.delta) - _half_log(xi - 1.0, p.delta)
    return _scalar_or_array(out)


def eval_flog_delta_prime(xi, p: PotentialParams):
    xi = np.asarray(xi, dtype=float)
    return _scalar_or_array(np.asarray(eval_flog1_prime(xi, p)) - 2.0 * p.c * xi)


def eval_flog_delta_second(xi, p: PotentialParams):
    """Second derivative of F_log^delta; undefined (raises) for delta = 0."""
    if p.delta == 0.0:
        raise DomainError("second derivative is unbounded near +-1 when delta = 0")
    xi = np.asarray(xi, dtype=float)
    d = p.delta
    num = 2.0 * (1.0 - xi * xi) + 2.0 * d
    den = ((1.0 + xi) ** 2 + d) * ((1.0 - xi) ** 2 + d)
    return _scalar_or_array(num / den - 2.0 * p.c)


def flog_delta_prime_bound(delta: float) -> float:
    """Supremum of |F'_{log,1}| over the real line.

    Attained at xi = +-sqrt(1 + delta) and equal to ln((1 + sqrt(1+delta)) / sqrt(delta)).
    The endpoint value 0.5 ln((4+delta)/delta) at xi = +-1 falls short of it by
    about delta / 8.
    """
    if delta <= 0.0:
        return float("inf")
    return float(np.log1p(np.sqrt(1.0 + delta)) - 0.5 * np.log(delta))


def flog_delta_prime_endpoint(delta: float) -> float:
    """|F'_{log,1}(+-1)| = 0.5 ln((4+delta)/delta)."""
    if delta <= 0.0:
        return float("inf")
    return 0.5 * float(np.log((4.0 + delta) / delta))


def _quintic(s, kappa):
    # C^2 bridge on -kappa <= s < 0 between 0 and the linear branch -s
    return -3.0 / kappa**4 * s**5 - 8.0 / kappa**3 * s**4 - 6.0 / kappa**2 * s**3


def _bound_functional(s, kappa):
    s = np.asarray(s, dtype=float)
    out = np.where(s < -kappa, -s, _quintic(s, kappa))
    return np.where(s >= 0.0, 0.0, out)


def eval_f1_kappa(xi, b: BoundFunctionalParams):
    """Smoothed upper-bound functional; equals (1 - xi)^- outside (1, 1 + kappa)."""
    xi = np.asarray(xi, dtype=float)
    return _scalar_or_array(_bound_functional(1.0 - xi, b.kappa))


def eval_f2_kappa(xi, b: BoundFunctionalParams):
    """Smoothed lower-bound functional; mirror image of :func:`eval_f1_kappa` at -1."""
    xi = np.asarray(xi, dtype=float)
    return _scalar_or_array(_bound_functional(xi + 1.0, b.kappa))
