"""Monte Carlo experiments: ensembles, coupled strong errors, parameter sweeps.

Realization ``m`` of an ensemble is driven by the noise path seeded with
``realization_seed(base_seed, m)``. Realizations are integrated in batches
(blocks) and, optionally, blocks are farmed out to a process pool; results are
always assembled in realization order so every output is a deterministic
function of the configuration.
"""

from __future__ import annotations

import ast
import logging
import math
import operator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import stats

from .diagnostics import EnergyLawTerms, residual_from_terms
from .noise import ADDITIVE, NEMYTSKII, EnsembleNoise, NoisePath, NoiseSpec, realization_seed, refinement_ratio
from .potential import PotentialParams
from .solver import (
    ETDRK2,
    STABILIZED,
    ConfigError,
    SolverConfig,
    StabilizedStepper,
    increment_values,
    integrate,
    snapshot_steps,
    split_batch,
)
from .spectral import Field, SpectralBasis

logger = logging.getLogger(__name__)

EXPERIMENTS = ("simulate", "converge", "energy-scan", "coarsen", "blowup-demo", "energy-law")
COARSEN_SNAPSHOT_TIMES = (5, 20, 40, 60, 100, 200, 500)

# initial data ---------------------------------------------------------------

PRESETS = {
    "fig1": "0.4*(cos(pi*x)*sin(pi*y) + sin(pi*x)*cos(2*pi*y)) + 0.2",
    "fig3": "0.4*(cos(pi*x)*sin(pi*y) + sin(pi*x)*cos(2*pi*y)) + 0.2",
    "fig4": "0.5*cos(pi*x)*cos(pi*y) + 0.3",
    "fig5": "0.01*cos(pi*x)*sin(pi*y)",
    "fig6": "0.01*cos(pi*x)*sin(pi*y)",
    "zero": "0",
}
PRESETS["fig1/3"] = PRESETS["fig1"]
PRESETS["coarsen"] = PRESETS["fig5"]

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sin": np.sin, "cos": np.cos}


def _eval_expr(node, env):
    if isinstance(node, ast.Expression):
        return _eval_expr(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in env:
        return env[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_expr(node.left, env), _eval_expr(node.right, env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_expr(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS and len(node.args) == 1:
        return _FUNCS[node.func.id](_eval_expr(node.args[0], env))
    raise ConfigError(f"unsupported initial-condition expression near {ast.dump(node)[:60]}")


def evaluate_expression(expr: str, x, y):
    """Evaluate a trigonometric expression in x, y (numbers, + - * / **, sin, cos, pi)."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse initial condition {expr!r}") from exc
    out = _eval_expr(tree, {"x": x, "y": y, "pi": np.pi})
    return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape).copy()


def initial_condition(name: str, basis: SpectralBasis) -> Field:
    """Preset (fig1, fig3, fig4, fig5, fig6, zero) or expression, sampled and projected."""
    key = name.strip()
    expr = PRESETS.get(key.lower())
    if expr is None:
        if not any(ch in key for ch in "xy0123456789"):
            raise ConfigError(f"unknown initial condition preset {name!r}")
        expr = key
    X, Y = basis.mesh()
    vals = evaluate_expression(expr, X, Y)
    field0 = Field(basis, vals)
    if basis.retained.all():
        return field0
    return Field.from_coefficients(basis.mask(field0.coefficients), basis)


# configuration --------------------------------------------------------------

_SOLVER_KEYS = {
    "sigma", "tau", "T", "alpha", "delta", "c", "noise", "epsilon", "n_modes",
    "bc", "scheme", "seed", "dealias", "blowup_threshold",
}


def solver_from_dict(d: dict) -> SolverConfig:
    unknown = set(d) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver keys: {sorted(unknown)}")
    try:
        pot = PotentialParams(delta=float(d.get("delta", 1e-18)), c=float(d.get("c", 1.5)))
        noise = NoiseSpec(case=str(d.get("noise", NEMYTSKII)), epsilon=float(d.get("epsilon", 1.0)))
        kw = {k: d[k] for k in ("sigma", "tau", "T", "alpha", "n_modes", "bc", "scheme", "seed", "dealias", "blowup_threshold") if k in d}
        return SolverConfig(potential=pot, noise=noise, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def solver_to_dict(s: SolverConfig) -> dict:
    return {
        "sigma": s.sigma, "tau": s.tau, "T": s.T, "alpha": s.alpha,
        "delta": s.potential.delta, "c": s.potential.c,
        "noise": s.noise.case, "epsilon": s.noise.epsilon,
        "n_modes": s.n_modes, "bc": s.bc, "scheme": s.scheme, "seed": s.seed,
        "dealias": s.dealias, "blowup_threshold": s.blowup_threshold,
    }


# Desk-scale defaults per experiment; a JSON config overrides any of these.
EXPERIMENT_PRESETS = {
    "simulate": {
        "solver": {"sigma": 1.0, "tau": 1e-3, "T": 1.0, "delta": 1e-18, "epsilon": 1.0, "noise": NEMYTSKII},
        "initial_condition": "fig1",
        "snapshot_times": [0.0, 1.0],
    },
    "converge": {
        "solver": {"sigma": 1.0, "tau": 6.25e-5, "T": 0.096, "delta": 1e-4, "epsilon": 1.0, "noise": NEMYTSKII},
        "tau_ladder": [8e-3, 4e-3, 2e-3, 1e-3, 5e-4],
        "tau_ref": 6.25e-5,
        "realizations": 100,
        "initial_condition": "fig1",
    },
    "energy-scan": {
        "solver": {"sigma": 0.1, "tau": 1e-2, "T": 20.0, "epsilon": 1e-4, "noise": NEMYTSKII},
        "delta_ladder": [1e-2, 1e-4, 1e-8, 1e-12],
        "realizations": 50,
        "initial_condition": "fig4",
        "record_every": 10,
    },
    "coarsen": {
        "solver": {"sigma": 0.01, "tau": 1e-3, "T": 20.0, "delta": 1e-18, "n_modes": 64, "bc": "periodic", "noise": NEMYTSKII},
        "epsilon_ladder": [1e-2, 1e-10],
        "initial_condition": "fig5",
        "record_every": 100,
    },
    "blowup-demo": {
        "solver": {"sigma": 1.0, "tau": 1e-3, "T": 50.0, "delta": 1e-18, "epsilon": 1.0, "noise": ADDITIVE},
        "realizations": 10,
        "initial_condition": "fig1",
        "record_every": 100,
    },
    "energy-law": {
        "solver": {"sigma": 1.0, "tau": 1e-3, "T": 0.5, "delta": 1e-2, "epsilon": 0.1, "n_modes": 16, "noise": NEMYTSKII},
        "realizations": 500,
        "initial_condition": "fig1",
    },
}


def resolve_config(experiment: str, overrides: dict | None = None) -> "ExperimentConfig":
    """Preset for ``experiment`` with ``overrides`` merged on top (solver keys merged one by one)."""
    if experiment not in EXPERIMENT_PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    overrides = dict(overrides or {})
    if overrides.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {overrides['experiment']!r}, not {experiment!r}")
    base = {k: (dict(v) if isinstance(v, dict) else v) for k, v in EXPERIMENT_PRESETS[experiment].items()}
    solver = dict(base.pop("solver"))
    user_solver = overrides.pop("solver", {})
    if not isinstance(user_solver, dict):
        raise ConfigError("'solver' must be a JSON object")
    solver.update(user_solver)
    base.update(overrides)
    base["experiment"] = experiment
    base["solver"] = solver
    return ExperimentConfig.from_dict(base)


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; round-trips through JSON."""

    experiment: str = "simulate"
    solver: SolverConfig = field(default_factory=SolverConfig)
    realizations: int = 1
    tau_ladder: tuple = ()
    tau_ref: float | None = None
    delta_ladder: tuple = ()
    epsilon_ladder: tuple = ()
    initial_condition: str = "fig1"
    output_dir: str = "output"
    snapshot_times: tuple = ()
    record_every: int = 1
    delta0: float | None = None
    n_workers: int = 1
    block_size: int | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        for name in ("tau_ladder", "delta_ladder", "epsilon_ladder", "snapshot_times"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if list(self.tau_ladder) != sorted(self.tau_ladder, reverse=True):
            raise ConfigError("tau_ladder must be sorted from coarse to fine")
        if self.tau_ladder:
            ref = self.tau_ref if self.tau_ref is not None else self.solver.tau
            for tau in self.tau_ladder:
                if tau <= ref:
                    raise ConfigError(f"tau_ladder entry {tau} is not coarser than tau_ref {ref}")
                try:
                    refinement_ratio(tau, ref)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        solver = solver_from_dict(d.pop("solver", {}))
        try:
            return cls(solver=solver, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["solver"] = solver_to_dict(self.solver)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def with_solver(self, **changes) -> "ExperimentConfig":
        return replace(self, solver=replace(self.solver, **changes))


def noise_with(spec: NoiseSpec, **changes) -> NoiseSpec:
    return replace(spec, **changes)


# ensembles ------------------------------------------------------------------

def ensemble_seeds(base_seed: int, n: int) -> list[int]:
    return [realization_seed(base_seed, m) for m in range(n)]


def make_paths(basis, seeds, fine_tau, n_steps):
    return [NoisePath(basis, s, fine_tau, n_steps) for s in seeds]


def _blocks(n, size):
    size = n if not size else max(1, int(size))
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def _integrate_block(args):
    basis, solver, u0, seeds, kwargs = args
    paths = make_paths(basis, seeds, solver.tau, solver.n_steps) if solver.epsilon != 0.0 else None
    if paths is None:
        u0 = np.broadcast_to(u0, (len(seeds),) + basis.shape)
    return integrate(basis, solver, u0, paths, **kwargs)


def run_batches(basis, solver, u0, seeds, *, n_workers=1, block_size=None, **kwargs):
    """Integrate realizations for ``seeds`` in blocks; returns per-block BatchResults in order."""
    jobs = [(basis, solver, np.asarray(u0), seeds[a:b], kwargs) for a, b in _blocks(len(seeds), block_size)]
    if n_workers > 1 and len(jobs) > 1 and "observer" not in kwargs:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            return list(ex.map(_integrate_block, jobs))
    return [_integrate_block(j) for j in jobs]


def run_ensemble(cfg: ExperimentConfig):
    """M independent trajectories as TrajectoryRecords, realization order preserved."""
    solver = cfg.solver
    basis = solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis)
    seeds = ensemble_seeds(solver.seed, cfg.realizations)
    steps = snapshot_steps(cfg.snapshot_times, solver)
    results = run_batches(
        basis, solver, u0.values, seeds,
        n_workers=cfg.n_workers, block_size=cfg.block_size,
        record_every=cfg.record_every, snapshot_at=steps, delta0=cfg.delta0,
    )
    records = []
    offset = 0
    for res in results:
        recs = split_batch(res, seeds[offset : offset + len(res.blown_up)])
        offset += len(recs)
        records.extend(recs)
    for rec in records:
        rec.snapshots = {j * solver.tau: Field(basis, v) for j, v in rec.snapshots.items()}
    return records


# strong error ---------------------------------------------------------------

@dataclass
class StrongErrorResult:
    taus: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray
    tau_ref: float
    realizations: int


def jackknife_rms(sq_errors):
    """sqrt(mean) of per-realization squared errors and its jackknife standard error."""
    e = np.asarray(sq_errors, dtype=float)
    n = e.size
    est = math.sqrt(e.mean())
    if n < 2:
        return est, float("nan")
    loo = np.sqrt((e.sum() - e) / (n - 1))
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, se


def coupled_final_states(basis, solver, u0, seeds, taus, tau_ref):
    """Final states for every step size, all driven by the same fine paths.

    Returns (ref_state, {tau: state}) with states of shape (R, M, M).
    """
    ratios = [refinement_ratio(t, tau_ref) for t in taus]
    n_fine = int(round(solver.T / tau_ref))
    if abs(n_fine * tau_ref - solver.T) > 1e-9 * solver.T:
        raise ConfigError("T must be an integer multiple of tau_ref")
    for t, r in zip(taus, ratios):
        if n_fine % r:
            raise ConfigError(f"T is not an integer multiple of tau = {t}")
    noisy = solver.epsilon != 0.0
    n_real = len(seeds)
    noise = EnsembleNoise(make_paths(basis, seeds, tau_ref, n_fine)) if noisy else None
    levels = sorted(set([1] + ratios))
    u = np.broadcast_to(np.asarray(u0, dtype=float), (n_real,) + basis.shape).copy()
    u_hat = basis.mask(basis.forward(u))
    if not basis.retained.all():
        u = basis.inverse(u_hat)
    state = {r: (u_hat.copy(), u.copy()) for r in levels}
    steppers = {r: StabilizedStepper(basis, solver, tau=r * tau_ref) for r in levels}
    acc = {r: None for r in levels}
    scale = noise.spectral_scale(tau_ref) if noisy else None
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n_fine):
            z = noise.summed_normals(j, 1) if noisy else None
            for r in levels:
                if noisy:
                    acc[r] = z.copy() if acc[r] is None else acc[r] + z
                if (j + 1) % r:
                    continue
                w = basis.inverse(scale * basis.orthonormal_transform(acc[r])) if noisy else None
                acc[r] = None
                state[r] = steppers[r].step(*state[r], w)
    ref = state[1][1]
    return ref, {t: state[r][1] for t, r in zip(taus, ratios)}


def strong_errors(solver: SolverConfig, u0, taus, tau_ref: float, seeds, basis=None, block_size=None) -> StrongErrorResult:
    """L^2 strong errors at T against the tau_ref solution on common noise paths."""
    basis = basis or solver.basis()
    taus = [float(t) for t in taus]
    sq = {t: [] for t in taus}
    for a, b in _blocks(len(seeds), block_size):
        ref, finals = coupled_final_states(basis, solver, u0, seeds[a:b], taus, tau_ref)
        for t in taus:
            sq[t].append(basis.quadrature((finals[t] - ref) ** 2))
    errs, ses = [], []
    for t in taus:
        e, se = jackknife_rms(np.concatenate(sq[t]))
        errs.append(e)
        ses.append(se)
    return StrongErrorResult(np.array(taus), np.array(errs), np.array(ses), tau_ref, len(seeds))


def strong_error(cfg: ExperimentConfig, tau_coarse: float, tau_ref: float, M: int | None = None):
    """(error, stderr) of the tau_coarse solution against the coupled tau_ref one."""
    M = cfg.realizations if M is None else M
    basis = cfg.solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    res = strong_errors(cfg.solver, u0, [tau_coarse], tau_ref, ensemble_seeds(cfg.solver.seed, M), basis, cfg.block_size)
    return float(res.errors[0]), float(res.stderrs[0])


@dataclass
class OrderFit:
    slope: float
    intercept: float
    taus: np.ndarray
    errors: np.ndarray
    stderrs: np.ndarray | None
    r_squared: float


def estimate_order(pairs, stderrs=None) -> OrderFit:
    """Least-squares slope of ln(error) against ln(tau)."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three (tau, error) pairs")
    taus = np.array([p[0] for p in pairs], dtype=float)
    errs = np.array([p[1] for p in pairs], dtype=float)
    if np.any(errs <= 0) or np.any(taus <= 0) or not np.all(np.isfinite(errs)):
        raise ValueError("errors and step sizes must be positive and finite")
    fit = stats.linregress(np.log(taus), np.log(errs))
    return OrderFit(float(fit.slope), float(fit.intercept), taus, errs, None if stderrs is None else np.asarray(stderrs), float(fit.rvalue**2))


# experiments ----------------------------------------------------------------

@dataclass
class ConvergenceResult:
    errors: StrongErrorResult
    fit: OrderFit

    @property
    def strictly_decreasing(self) -> bool:
        e = self.errors.errors
        return bool(np.all(np.diff(e) < 0))


def experiment_converge(cfg: ExperimentConfig) -> ConvergenceResult:
    solver = cfg.solver
    if not cfg.tau_ladder:
        raise ConfigError("converge needs a tau_ladder")
    tau_ref = cfg.tau_ref if cfg.tau_ref is not None else solver.tau
    basis = solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    seeds = ensemble_seeds(solver.seed, cfg.realizations)
    res = strong_errors(solver, u0, cfg.tau_ladder, tau_ref, seeds, basis, cfg.block_size)
    fit = estimate_order(zip(res.taus, res.errors), res.stderrs)
    return ConvergenceResult(res, fit)


@dataclass
class EnergyScanResult:
    """Averaged energy curves, one entry per ladder position (duplicates allowed)."""

    times: np.ndarray
    deltas: tuple
    mean: list
    stderr: list
    energies: list

    def gap(self, k1: int, k2: int) -> float:
        return float(np.max(np.abs(self.mean[k1] - self.mean[k2])))

    def gap_stderr(self, k1: int, k2: int) -> float:
        """MC standard error of the averaged curves at the time of the largest gap."""
        i = int(np.argmax(np.abs(self.mean[k1] - self.mean[k2])))
        return float(max(self.stderr[k1][i], self.stderr[k2][i]))

    def successive_gaps(self) -> np.ndarray:
        return np.array([self.gap(k, k + 1) for k in range(len(self.deltas) - 1)])

    def columns(self):
        cols = {"time": self.times}
        for k, d in enumerate(self.deltas):
            cols[f"energy_mean_{k}_delta={d:g}"] = self.mean[k]
            cols[f"energy_stderr_{k}_delta={d:g}"] = self.stderr[k]
        return cols


def _ensemble_energies(cfg: ExperimentConfig, solver: SolverConfig, basis, u0, seeds):
    results = run_batches(
        basis, solver, u0, seeds, n_workers=cfg.n_workers, block_size=cfg.block_size,
        record_every=cfg.record_every, delta0=cfg.delta0,
    )
    energies = np.concatenate([r.diagnostics["energy"] for r in results])
    return results[0].times, energies


def _mean_se(a):
    n = a.shape[0]
    se = a.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(a.shape[1])
    return a.mean(axis=0), se


def experiment_energy_scan(cfg: ExperimentConfig) -> EnergyScanResult:
    """Averaged energy curves for each delta, all driven by the same noise paths."""
    if not cfg.delta_ladder:
        raise ConfigError("energy-scan needs a delta_ladder")
    basis = cfg.solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    seeds = ensemble_seeds(cfg.solver.seed, cfg.realizations)
    mean, se, raw = [], [], []
    times = None
    for d in cfg.delta_ladder:
        solver = replace(cfg.solver, potential=replace(cfg.solver.potential, delta=d))
        times, E = _ensemble_energies(cfg, solver, basis, u0, seeds)
        m, s = _mean_se(E)
        raw.append(E)
        mean.append(m)
        se.append(s)
    return EnergyScanResult(times, tuple(cfg.delta_ladder), mean, se, raw)


@dataclass
class CoarsenResult:
    times: np.ndarray
    epsilons: tuple
    energies: dict
    deterministic: np.ndarray
    snapshots: dict
    deterministic_snapshots: dict
    tau: float

    def max_deviation(self, eps) -> float:
        return float(np.nanmax(np.abs(self.energies[eps] - self.deterministic)))

    def tolerance(self) -> float:
        """Deterministic-limit tolerance 10 tau (1 + max_t |E_det|)."""
        return 10.0 * self.tau * (1.0 + float(np.nanmax(np.abs(self.deterministic))))


def experiment_coarsen(cfg: ExperimentConfig) -> CoarsenResult:
    """Stochastic runs for each epsilon (first realization) plus one ETDRK2 deterministic run."""
    solver = cfg.solver
    basis = solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    times_req = cfg.snapshot_times or tuple(t for t in COARSEN_SNAPSHOT_TIMES if t <= solver.T)
    steps = snapshot_steps(times_req, solver)
    seeds = ensemble_seeds(solver.seed, cfg.realizations)
    energies, snaps = {}, {}
    times = None
    eps_list = tuple(cfg.epsilon_ladder) or (solver.epsilon,)
    for eps in eps_list:
        s = replace(solver, scheme=STABILIZED, noise=replace(solver.noise, epsilon=eps))
        res = run_batches(basis, s, u0, seeds, block_size=cfg.block_size, record_every=cfg.record_every, snapshot_at=steps, delta0=cfg.delta0)
        times = res[0].times
        E = np.concatenate([r.diagnostics["energy"] for r in res])
        energies[eps] = E.mean(axis=0)
        snaps[eps] = {j * solver.tau: res[0].snapshots[j][0] for j in steps}
    det = replace(solver, scheme=ETDRK2, noise=replace(solver.noise, epsilon=0.0))
    dres = integrate(basis, det, u0, None, record_every=cfg.record_every, snapshot_at=steps, delta0=cfg.delta0)
    det_snaps = {j * solver.tau: dres.snapshots[j][0] for j in steps}
    return CoarsenResult(times, eps_list, energies, dres.diagnostics["energy"][0], snaps, det_snaps, solver.tau)


@dataclass
class BlowupReport:
    case1_blown: np.ndarray
    case1_times: np.ndarray
    case2_blown: np.ndarray
    case2_max_sup: np.ndarray
    seeds: list


def experiment_blowup(cfg: ExperimentConfig) -> BlowupReport:
    """Additive (Case 1) ensemble against a Nemytskii (Case 2) companion on the same seeds."""
    solver = cfg.solver
    basis = solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    seeds = ensemble_seeds(solver.seed, cfg.realizations)
    s1 = replace(solver, noise=replace(solver.noise, case=ADDITIVE))
    s2 = replace(solver, noise=replace(solver.noise, case=NEMYTSKII, diffusion=None))
    r1 = run_batches(basis, s1, u0, seeds, n_workers=cfg.n_workers, block_size=cfg.block_size, diagnostics=False)
    r2 = run_batches(basis, s2, u0, seeds, n_workers=cfg.n_workers, block_size=cfg.block_size, record_every=cfg.record_every)
    blown1 = np.concatenate([r.blown_up for r in r1])
    times1 = np.concatenate([r.blowup_time for r in r1])
    blown2 = np.concatenate([r.blown_up for r in r2])
    sup2 = np.concatenate([np.nanmax(r.diagnostics["sup_norm"], axis=1) for r in r2])
    sup2 = np.where(blown2, np.inf, sup2)
    return BlowupReport(blown1, times1, blown2, sup2, seeds)


@dataclass
class EnergyLawResult:
    times: np.ndarray
    residual: np.ndarray
    stderr: np.ndarray
    residual_half: np.ndarray
    stderr_half: np.ndarray
    tau: float
    C: float

    @property
    def bound(self) -> np.ndarray:
        return 3.0 * self.stderr + self.C * self.tau

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.residual) <= self.bound))


def energy_law_run(solver: SolverConfig, basis, u0, seeds, fine_tau: float, block_size=None):
    """Residual series of the averaged energy law at step solver.tau using paths at fine_tau."""
    terms = EnergyLawTerms(basis, solver.potential, solver.sigma, solver.noise)
    n_fine = int(round(solver.T / fine_tau))
    H, D, I = [], [], []
    for a, b in _blocks(len(seeds), block_size):
        acc = []
        paths = make_paths(basis, seeds[a:b], fine_tau, n_fine) if solver.epsilon != 0 else None
        u_init = u0 if paths else np.broadcast_to(u0, (b - a,) + basis.shape)
        integrate(basis, solver, u_init, paths, diagnostics=False, observer=lambda j, t, uh, u, act: acc.append(terms(u, uh)))
        H.append(np.stack([x[0] for x in acc], axis=1))
        D.append(np.stack([x[1] for x in acc], axis=1))
        I.append(np.stack([x[2] for x in acc], axis=1))
    return residual_from_terms(np.concatenate(H), np.concatenate(D), np.concatenate(I), solver.tau)


def experiment_energy_law(cfg: ExperimentConfig) -> EnergyLawResult:
    """Energy-law residual at tau and tau/2 on common paths; C from the Richardson pair."""
    solver = cfg.solver
    basis = solver.basis()
    u0 = initial_condition(cfg.initial_condition, basis).values
    seeds = ensemble_seeds(solver.seed, cfg.realizations)
    half = solver.tau / 2
    coarse = energy_law_run(solver, basis, u0, seeds, half, cfg.block_size)
    fine = energy_law_run(replace(solver, tau=half), basis, u0, seeds, half, cfg.block_size)
    fine_at_coarse = fine.residual[::2]
    fine_se = fine.stderr[::2]
    C = float(np.max(np.abs(coarse.residual - fine_at_coarse)) * 2.0 / solver.tau)
    return EnergyLawResult(coarse.times, coarse.residual, coarse.stderr, fine_at_coarse, fine_se, solver.tau, C)
