"""Time integration of the regularized stochastic Allen-Cahn equation.

The stochastic stepper is the stabilized semi-implicit scheme: the Laplacian
and the concave part -c u^2 are implicit, the logarithmic part and the noise
explicit, plus a damping term -alpha (u_{j+1} - u_j) tau. Per retained mode,

    u_{j+1} = [(1 + alpha tau) u_j - tau P(F1'(u_j)) + eps P(b(u_j) dW_j)]
              / (1 + tau (sigma lambda - 2c + alpha)).

The deterministic comparator is ETDRK2 for u' = L u + N(u) with
L = -sigma lambda + 2c - alpha and N(u) = -P(F1'(u)) + alpha u.

Both steppers work on batches: arrays of shape (R, M, M) hold R independent
realizations that share the basis and configuration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .noise import EnsembleNoise, NoisePath, NoiseSpec, refinement_ratio
from .potential import PotentialParams, eval_flog1_prime
from .spectral import NEUMANN, PERIODIC, SOLVE_DENOMINATOR_FLOOR, Field, SpectralBasis, solve_denominators

logger = logging.getLogger(__name__)

STABILIZED = "stabilized"
ETDRK2 = "etdrk2"
PHI_SERIES_THRESHOLD = 1e-2


class ConfigError(ValueError):
    """Invalid solver or experiment configuration."""


@dataclass(frozen=True)
class SolverConfig:
    sigma: float = 1.0
    tau: float = 1e-3
    T: float = 1.0
    alpha: float = 2.0
    potential: PotentialParams = field(default_factory=PotentialParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_modes: int = 32
    bc: str = "neumann"
    scheme: str = STABILIZED
    seed: int = 0
    dealias: bool = False
    blowup_threshold: float = 1e3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.tau > 0 or not self.T > 0:
            raise ConfigError("tau and T must be positive")
        if not self.alpha >= 0:
            raise ConfigError("alpha must be >= 0")
        if self.bc not in (PERIODIC, NEUMANN):
            raise ConfigError(f"unknown boundary condition {self.bc!r}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ConfigError("n_modes must be a positive integer")
        if self.bc == PERIODIC and self.n_modes % 2:
            raise ConfigError("periodic basis needs an even number of modes")
        if self.scheme not in (STABILIZED, ETDRK2):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        # smallest implicit denominator sits at lambda = 0
        den = 1.0 + self.tau * (self.alpha - 2.0 * self.potential.c)
        if not den > SOLVE_DENOMINATOR_FLOOR:
            raise ConfigError(f"implicit step is degenerate: 1 + tau (alpha - 2c) = {den:.3e}")
        ratio = self.T / self.tau
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0) or round(ratio) < 1:
            raise ConfigError(f"T / tau = {ratio} is not a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    @property
    def epsilon(self) -> float:
        return self.noise.epsilon

    def basis(self) -> SpectralBasis:
        return SpectralBasis(self.bc, self.n_modes, dealias=self.dealias)

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


def nonlinear_values(u, p: PotentialParams):
    return eval_flog1_prime(u, p)


class StabilizedStepper:
    """Batched stabilized semi-implicit step on a fixed basis and step size."""

    def __init__(self, basis: SpectralBasis, cfg: SolverConfig, tau: float | None = None):
        self.basis = basis
        self.cfg = cfg
        self.tau = cfg.tau if tau is None else tau
        c = cfg.potential.c
        self.den = solve_denominators(basis, cfg.sigma, cfg.alpha - 2.0 * c, self.tau)
        self.keep = basis.retained

    def rhs_values(self, u, w=None):
        """Grid values of the explicit forcing -tau F1'(u) + eps b(u) w."""
        cfg = self.cfg
        g = -self.tau * nonlinear_values(u, cfg.potential)
        if w is not None and cfg.epsilon != 0.0:
            if cfg.noise.case == "additive":
                g = g + cfg.epsilon * w
            else:
                g = g + cfg.epsilon * cfg.noise.b(u) * w
        return g

    def step(self, u_hat, u, w=None):
        """Advance one step. ``w`` is the grid realization of the increment."""
        forcing = self.basis.forward(self.rhs_values(u, w))
        new_hat = np.where(self.keep, ((1.0 + self.cfg.alpha * self.tau) * u_hat + forcing) / self.den, 0.0)
        return new_hat, self.basis.inverse(new_hat)


def phi_functions(z):
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2, series near 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < PHI_SERIES_THRESHOLD
    zs = np.where(small, 0.0, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = np.where(small, 1.0, np.expm1(zs) / np.where(small, 1.0, zs))
        p2 = np.where(small, 0.5, (np.expm1(zs) - zs) / np.where(small, 1.0, zs) ** 2)
    # Taylor: phi_k(z) = sum_n z^n / (n + k)!
    s1 = np.zeros_like(z)
    s2 = np.zeros_like(z)
    term = np.ones_like(z)
    for n in range(8):
        s1 = s1 + term / math.factorial(n + 1)
        s2 = s2 + term / math.factorial(n + 2)
        term = term * z
    return np.where(small, s1, p1), np.where(small, s2, p2)


class ETDRK2Stepper:
    """Stabilized ETDRK2 for the deterministic (eps = 0) equation."""

    def __init__(self, basis: SpectralBasis, cfg: SolverConfig, tau: float | None = None):
        self.basis = basis
        self.cfg = cfg
        self.tau = cfg.tau if tau is None else tau
        L = -cfg.sigma * basis.eigenvalues + 2.0 * cfg.potential.c - cfg.alpha
        z = L * self.tau
        p1, p2 = phi_functions(z)
        self.expz = np.exp(z)
        self.c1 = self.tau * p1
        self.c2 = self.tau * p2
        self.keep = basis.retained

    def nonlinear_hat(self, u_hat, u):
        n = -nonlinear_values(u, self.cfg.potential) + self.cfg.alpha * u
        return self.basis.forward(n)

    def step(self, u_hat, u, w=None):
        n0 = self.nonlinear_hat(u_hat, u)
        a_hat = np.where(self.keep, self.expz * u_hat + self.c1 * n0, 0.0)
        a = self.basis.inverse(a_hat)
        n1 = self.nonlinear_hat(a_hat, a)
        new_hat = np.where(self.keep, a_hat + self.c2 * (n1 - n0), 0.0)
        return new_hat, self.basis.inverse(new_hat)


def make_stepper(basis: SpectralBasis, cfg: SolverConfig, tau: float | None = None):
    if cfg.scheme == ETDRK2:
        if cfg.epsilon != 0.0:
            raise ConfigError("ETDRK2 is a deterministic scheme; set epsilon = 0")
        return ETDRK2Stepper(basis, cfg, tau)
    return StabilizedStepper(basis, cfg, tau)


def increment_values(basis: SpectralBasis, noise, j0: int, r: int, tau_fine: float):
    """Grid realization of the coarse increment summing fine steps j0..j0+r-1.

    ``noise`` is an :class:`EnsembleNoise`; returns an (R, M, M) array.
    """
    z = noise.summed_normals(j0, r)
    scale = noise.spectral_scale(tau_fine)
    return basis.inverse(scale * basis.orthonormal_transform(z))


def step_stabilized(u_j: Field, j: int, cfg: SolverConfig, path: NoisePath | None = None) -> Field:
    """One stabilized semi-implicit step driven by increment ``j`` at resolution cfg.tau.

    ``path`` may be finer than ``cfg.tau``; its increments are aggregated.
    """
    basis = u_j.basis
    stepper = StabilizedStepper(basis, cfg)
    w = None
    if cfg.epsilon != 0.0:
        if path is None:
            raise ConfigError("a noise path is required when epsilon > 0")
        r = refinement_ratio(cfg.tau, path.fine_tau)
        w = increment_values(basis, EnsembleNoise([path]), r * j, r, path.fine_tau)[0]
    _, vals = stepper.step(u_j.coefficients, u_j.values, w)
    return Field(basis, vals)


def step_etdrk2(u_j: Field, cfg: SolverConfig) -> Field:
    if cfg.epsilon != 0.0:
        raise ConfigError("ETDRK2 is a deterministic scheme; set epsilon = 0")
    stepper = ETDRK2Stepper(u_j.basis, cfg)
    _, vals = stepper.step(u_j.coefficients, u_j.values)
    return Field(u_j.basis, vals)


@dataclass
class BatchResult:
    """Outcome of integrating R realizations together.

    ``diagnostics`` maps column name to an (R, n_records) array aligned with
    ``times``; ``snapshots`` maps step index to an (R, M, M) array.
    """

    times: np.ndarray
    final: np.ndarray
    blown_up: np.ndarray
    blowup_time: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)


def snapshot_steps(times, cfg: SolverConfig) -> list[int]:
    """Round requested times to the nearest step boundary within [0, T]."""
    steps = []
    for t in times:
        s = int(round(float(t) / cfg.tau))
        steps.append(min(max(s, 0), cfg.n_steps))
    return sorted(set(steps))


def integrate(
    basis: SpectralBasis,
    cfg: SolverConfig,
    u0,
    paths=None,
    *,
    record_every: int = 1,
    diagnostics: bool = True,
    snapshot_at=(),
    observer=None,
    delta0: float | None = None,
):
    """Integrate R realizations from ``u0`` (shape (M, M) or (R, M, M)).

    ``paths`` holds one :class:`NoisePath` per realization; their fine step may
    divide cfg.tau. ``observer(j, t, u_hat, u, active)`` is called at every
    step index j = 0..J before stepping (and at J). Realizations whose sup norm
    exceeds ``cfg.blowup_threshold`` or turns non-finite are frozen and flagged.
    """
    from . import diagnostics as diag

    u = np.asarray(u0, dtype=float)
    if u.ndim == 2:
        n_real = len(paths) if paths else 1
        u = np.broadcast_to(u, (n_real,) + u.shape).copy()
    n_real = u.shape[0]
    stepper = make_stepper(basis, cfg)
    u_hat = basis.mask(basis.forward(u))
    if not basis.retained.all():
        u = basis.inverse(u_hat)

    noisy = cfg.epsilon != 0.0
    if noisy:
        if paths is None or len(paths) != n_real:
            raise ConfigError("one noise path per realization is required when epsilon > 0")
        noise = paths if isinstance(paths, EnsembleNoise) else EnsembleNoise(paths)
        r = refinement_ratio(cfg.tau, noise.fine_tau)
        if noise.n_steps < r * cfg.n_steps:
            raise ConfigError("noise path too short for the requested horizon")
    n_steps = cfg.n_steps
    record_idx = list(range(0, n_steps + 1, record_every))
    if record_idx[-1] != n_steps:
        record_idx.append(n_steps)
    record_pos = {j: i for i, j in enumerate(record_idx)}
    times = np.array(record_idx) * cfg.tau
    delta0 = cfg.potential.delta if delta0 is None else delta0
    cols = {}
    if diagnostics:
        for name in diag.DIAGNOSTIC_COLUMNS:
            cols[name] = np.full((n_real, len(record_idx)), np.nan)
    snaps = {}
    snap_set = set(snapshot_at)
    blown = np.zeros(n_real, dtype=bool)
    blow_time = np.full(n_real, np.nan)

    def record(j):
        if j in snap_set:
            snaps[j] = np.where(blown[:, None, None], np.nan, u)
        if diagnostics and j in record_pos:
            rows = diag.diagnostics_arrays(basis, u, u_hat, cfg.potential, cfg.sigma, delta0)
            i = record_pos[j]
            for name, val in rows.items():
                cols[name][:, i] = np.where(blown, np.nan, val)
            cols["blown_up"][:, i] = blown
        if observer is not None:
            observer(j, j * cfg.tau, u_hat, u, ~blown)

    with np.errstate(over="ignore", invalid="ignore"):
        record(0)
        for j in range(n_steps):
            w = increment_values(basis, noise, r * j, r, noise.fine_tau) if noisy else None
            u_hat, u = stepper.step(u_hat, u, w)
            sup = np.max(np.abs(u), axis=(-2, -1))
            bad = ~(sup <= cfg.blowup_threshold) & ~blown
            if np.any(bad):
                blown |= bad
                blow_time[bad] = (j + 1) * cfg.tau
                u[bad] = 0.0
                u_hat[bad] = 0.0
                logger.info("blow-up in %d realization(s) at t=%.4g", int(bad.sum()), (j + 1) * cfg.tau)
            record(j + 1)
            if blown.all() and observer is None:
                if diagnostics:
                    # halted: later records keep NaN values but carry the flag
                    cols["blown_up"][:, np.array(record_idx) > j + 1] = 1.0
                break
    return BatchResult(times, np.where(blown[:, None, None], np.nan, u), blown, blow_time, cols, snaps)


@dataclass
class TrajectoryRecord:
    """One realization: record times, per-record diagnostics, optional snapshots."""

    times: np.ndarray
    diagnostics: dict
    snapshots: dict = field(default_factory=dict)
    final: np.ndarray | None = None
    blown_up: bool = False
    blowup_time: float = float("nan")
    seed: int | None = None

    def rows(self):
        from .diagnostics import DiagnosticsRow

        names = list(self.diagnostics)
        for i, t in enumerate(self.times):
            kw = {n: float(self.diagnostics[n][i]) for n in names}
            kw["blown_up"] = bool(kw["blown_up"])
            yield DiagnosticsRow(time=float(t), **kw)

    @property
    def max_sup_norm(self) -> float:
        if self.blown_up:
            return float("inf")
        return float(np.nanmax(self.diagnostics["sup_norm"]))


def split_batch(result: BatchResult, seeds=None) -> list[TrajectoryRecord]:
    out = []
    for i in range(len(result.blown_up)):
        out.append(
            TrajectoryRecord(
                times=result.times,
                diagnostics={k: v[i] for k, v in result.diagnostics.items()},
                snapshots={j: s[i] for j, s in result.snapshots.items()},
                final=result.final[i],
                blown_up=bool(result.blown_up[i]),
                blowup_time=float(result.blowup_time[i]),
                seed=None if seeds is None else seeds[i],
            )
        )
    return out


def run_trajectory(u0: Field, cfg: SolverConfig, snapshot_times=(), path: NoisePath | None = None, record_every: int = 1) -> TrajectoryRecord:
    """Run one trajectory of J = T / tau steps.

    Without an explicit ``path`` the noise is drawn from ``cfg.seed`` at the
    solver's own step. Snapshot keys are times rounded to step boundaries.
    """
    basis = u0.basis
    if path is None and cfg.epsilon != 0.0:
        path = NoisePath(basis, cfg.seed, cfg.tau, cfg.n_steps)
    steps = snapshot_steps(snapshot_times, cfg)
    res = integrate(basis, cfg, u0.values, [path] if path is not None else None, record_every=record_every, snapshot_at=steps)
    rec = split_batch(res, [cfg.seed])[0]
    rec.snapshots = {j * cfg.tau: Field(basis, res.snapshots[j][0]) for j in steps}
    return rec
