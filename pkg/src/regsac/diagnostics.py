"""Scalar observables: modified energy, bound-violation functionals, energy law."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from functools import lru_cache

import numpy as np

from .noise import NoiseSpec, covariance_diagonal, mode_weights
from .potential import (
    PotentialParams,
    eval_flog_delta,
    eval_flog_delta_prime,
    eval_flog_delta_second,
)
from .spectral import Field, SpectralBasis

DIAGNOSTIC_COLUMNS = ("energy", "sup_norm", "tail_upper", "tail_lower", "violation_measure", "blown_up")


@dataclass
class DiagnosticsRow:
    time: float
    energy: float
    sup_norm: float
    tail_upper: float
    tail_lower: float
    violation_measure: float
    blown_up: bool = False


CSV_HEADER = [f.name for f in fields(DiagnosticsRow)]


def write_rows_csv(path, rows) -> None:
    """Stream DiagnosticsRow objects as CSV with the documented header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in rows:
            vals = list(astuple(row))
            vals[-1] = int(vals[-1])
            w.writerow(vals)


# batched helpers; u has shape (..., M, M)

def energy_values(basis: SpectralBasis, u, u_hat, p: PotentialParams, sigma: float):
    return 0.5 * sigma * basis.dirichlet_form(u_hat) + basis.quadrature(eval_flog_delta(u, p))


def tail_values(basis: SpectralBasis, u):
    upper = np.sqrt(basis.quadrature(np.maximum(u - 1.0, 0.0) ** 2))
    lower = np.sqrt(basis.quadrature(np.maximum(-u - 1.0, 0.0) ** 2))
    return upper, lower


def violation_values(basis: SpectralBasis, u, delta0: float):
    return basis.quadrature((np.abs(u) > 1.0 + delta0).astype(float))


def diagnostics_arrays(basis, u, u_hat, p, sigma, delta0):
    up, lo = tail_values(basis, u)
    return {
        "energy": energy_values(basis, u, u_hat, p, sigma),
        "sup_norm": np.max(np.abs(u), axis=(-2, -1)),
        "tail_upper": up,
        "tail_lower": lo,
        "violation_measure": violation_values(basis, u, delta0),
    }


# single-field API

def energy(u: Field, p: PotentialParams, sigma: float) -> float:
    """H_delta(u) = sigma/2 ||grad u||^2 + int F_log^delta(u); raises off [-1,1] when delta = 0."""
    return float(energy_values(u.basis, u.values, u.coefficients, p, sigma))


def tail_norms(u: Field) -> tuple[float, float]:
    """L^2 norms of (1 - u)^- and (u + 1)^-."""
    up, lo = tail_values(u.basis, u.values)
    return float(up), float(lo)


def violation_measure(u: Field, delta0: float) -> float:
    """Measure of {|u| > 1 + delta0} by grid-cell counting."""
    if delta0 < 0:
        raise ValueError("delta0 must be >= 0")
    return float(violation_values(u.basis, u.values, delta0))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for k successes in n trials (95% by default)."""
    if n <= 0:
        raise ValueError("need at least one trial")
    phat = k / n
    den = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / den
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / den
    # the interval endpoints are exactly 0 and 1 at k = 0 and k = n
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass
class ProportionEstimate:
    estimate: float
    low: float
    high: float
    count: int
    n: int


def bound_violation_probability(records, delta0: float) -> ProportionEstimate:
    """Fraction of realizations with max_j sup|u_j| > 1 + delta0, Wilson 95% CI.

    Blown-up realizations count as violating.
    """
    records = list(records)
    if len(records) == 0:
        raise ValueError("no trajectory records given")
    if len(records) < 2:
        raise ValueError("need at least two realizations")
    k = sum(1 for r in records if r.blown_up or r.max_sup_norm > 1.0 + delta0)
    n = len(records)
    lo, hi = wilson_interval(k, n)
    return ProportionEstimate(k / n, lo, hi, k, n)


# energy evolution law ------------------------------------------------------

@lru_cache(maxsize=8)
def _ito_gradient_kernel(basis: SpectralBasis):
    """Matrix Q with b^T Q b = sum_k q_k ||grad P(b e_k)||^2 for grid vectors b."""
    e = basis.basis_functions
    pos = np.argwhere(basis.retained)
    q = mode_weights(basis)[basis.retained]
    lam = basis.eigenvalues[pos[:, 0], pos[:, 1]]
    K = (e.T * q) @ e.conj()
    Lam = (e.conj().T * lam) @ e
    return basis.cell_area**2 * np.real(K * Lam)


class EnergyLawTerms:
    """Per-realization integrands of the averaged energy evolution law.

    For the Galerkin system du = (sigma A u - P F'(u)) dt + eps P B(u) dW,
    Ito's formula for H_delta gives the dissipation ||sigma A u - P F'(u)||^2
    and the correction (eps^2 / 2) sum_k q_k [sigma ||grad P(b e_k)||^2 +
    <F''(u) b e_k, b e_k>]. The gradient trace is evaluated exactly on the
    retained modes through a dense kernel (practical up to N = 32).
    """

    def __init__(self, basis: SpectralBasis, p: PotentialParams, sigma: float, noise: NoiseSpec):
        self.basis = basis
        self.p = p
        self.sigma = sigma
        self.noise = noise
        if noise.epsilon != 0.0:
            self._Q = _ito_gradient_kernel(basis)
            self._kdiag = covariance_diagonal(basis)

    def __call__(self, u, u_hat):
        basis = self.basis
        H = energy_values(basis, u, u_hat, self.p, self.sigma)
        drift = -self.sigma * basis.eigenvalues * u_hat - basis.forward(eval_flog_delta_prime(u, self.p))
        D = np.sum(np.where(basis.retained, np.abs(drift) ** 2, 0.0), axis=(-2, -1))
        eps = self.noise.epsilon
        if eps == 0.0:
            return H, D, np.zeros_like(H)
        b = self.noise.b(u)
        flat = b.reshape(b.shape[:-2] + (-1,))
        grad_term = np.sum((flat @ self._Q) * flat, axis=-1)
        curv_term = basis.quadrature(eval_flog_delta_second(u, self.p) * b**2 * self._kdiag)
        return H, D, 0.5 * eps**2 * (self.sigma * grad_term + curv_term)


@dataclass
class EnergyLawResidual:
    times: np.ndarray
    residual: np.ndarray
    stderr: np.ndarray


def residual_from_terms(H, D, I, tau: float, times=None) -> EnergyLawResidual:
    """MC residual of E H(u_j) - [E H(u_0) - tau sum_{i<j} E(D_i - I_i)].

    H, D, I have shape (R, J+1); time integrals use the left-endpoint rule.
    """
    H, D, I = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (H, D, I))
    integrand = np.cumsum(D - I, axis=1)[:, :-1] * tau
    integrand = np.concatenate([np.zeros((H.shape[0], 1)), integrand], axis=1)
    per_real = H - H[:, :1] + integrand
    n = per_real.shape[0]
    mean = per_real.mean(axis=0)
    se = per_real.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    if times is None:
        times = np.arange(H.shape[1]) * tau
    return EnergyLawResidual(np.asarray(times), mean, se)


def energy_law_residual(fields, basis: SpectralBasis, cfg) -> EnergyLawResidual:
    """Residual of the averaged energy law from stored fields of shape (R, J+1, M, M)."""
    if fields is None:
        raise ValueError("energy-law residual needs fields recorded at every step")
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 3:
        fields = fields[None]
    terms = EnergyLawTerms(basis, cfg.potential, cfg.sigma, cfg.noise)
    H, D, I = terms(fields, basis.forward(fields))
    return residual_from_terms(H, D, I, cfg.tau)
