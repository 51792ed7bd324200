"""Q-Wiener increments in the Laplacian eigenbasis and the diffusion operator B(u).

Increments are synthesized by a truncated Karhunen-Loeve expansion: draw
i.i.d. standard normals on the grid, apply the orthonormal transform (which
keeps them i.i.d. and, for the Fourier basis, gives exactly the conjugate
symmetry of a real field), and scale mode (k, l) by sqrt(q_kl * tau) with
q_kl = 1 / (1 + k^2 + l^2).

A :class:`NoisePath` is a pure function of ``(seed, step index)``: normals are
generated in fixed-size chunks of steps, each chunk seeded from
``SeedSequence([seed, chunk])``, so any step can be regenerated on demand and
coarser paths are obtained by summing fine increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import Field, SpectralBasis

ADDITIVE = "additive"
NEMYTSKII = "nemytskii"

CHUNK_STEPS = 64
_MASK64 = (1 << 64) - 1


def sin2_diffusion(xi):
    """Default Nemytskii diffusion b(xi) = sin^2(pi xi); vanishes at +-1."""
    return np.sin(np.pi * np.asarray(xi, dtype=float)) ** 2


@dataclass(frozen=True)
class NoiseSpec:
    """Noise case, intensity and pointwise diffusion function.

    ``case`` is ``"additive"`` (b = 1) or ``"nemytskii"`` (b(u) multiplies the
    Q-Wiener increment pointwise). A user-supplied ``diffusion`` must vanish at
    +-1 in the Nemytskii case.
    """

    case: str = NEMYTSKII
    epsilon: float = 1.0
    diffusion: Callable | None = None

    def __post_init__(self):
        case = self.case.lower()
        object.__setattr__(self, "case", case)
        if case not in (ADDITIVE, NEMYTSKII):
            raise ValueError(f"unknown noise case {self.case!r}")
        if not (self.epsilon >= 0.0):
            raise ValueError("epsilon must be >= 0")
        if case == NEMYTSKII and self.diffusion is not None:
            ends = np.asarray(self.diffusion(np.array([-1.0, 1.0])), dtype=float)
            if np.any(np.abs(ends) > 1e-12):
                raise ValueError(f"Nemytskii diffusion must vanish at +-1, got b(-1), b(1) = {ends}")

    def b(self, u):
        if self.case == ADDITIVE:
            return np.ones_like(np.asarray(u, dtype=float))
        fn = self.diffusion or sin2_diffusion
        return fn(u)


def mode_weights(basis: SpectralBasis):
    """q_kl = 1 / (1 + k^2 + l^2) on retained modes, zero elsewhere."""
    k = basis.mode_index.astype(float)
    q = 1.0 / (1.0 + k[:, None] ** 2 + k[None, :] ** 2)
    return np.where(basis.retained, q, 0.0)


def covariance_diagonal(basis: SpectralBasis):
    """sum_kl q_kl |e_kl(x)|^2 at every grid point (per unit time)."""
    e = basis.basis_functions
    q = mode_weights(basis)[basis.retained]
    return (q @ np.abs(e) ** 2).reshape(basis.shape)


def realization_seed(base_seed: int, index: int) -> int:
    """SplitMix64-style mix of (base_seed, index) into a 64-bit seed."""
    z = (int(base_seed) * 0x9E3779B97F4A7C15 + (int(index) + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class NoisePath:
    """Fine-resolution Brownian path of a truncated Q-Wiener process.

    Parameters
    ----------
    basis : SpectralBasis
    seed : int
        64-bit seed; the path is a pure function of it.
    fine_tau : float
        Time step of the finest increments.
    n_steps : int
        Number of fine increments available.
    """

    def __init__(self, basis: SpectralBasis, seed: int, fine_tau: float, n_steps: int):
        if fine_tau <= 0:
            raise ValueError("fine_tau must be positive")
        self.basis = basis
        self.seed = int(seed) & _MASK64
        self.fine_tau = float(fine_tau)
        self.n_steps = int(n_steps)
        self._sqrt_q = np.sqrt(mode_weights(basis))
        self._chunk_id = None
        self._chunk = None

    def __len__(self):
        return self.n_steps

    def _load_chunk(self, c: int):
        if self._chunk_id != c:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, c]))
            self._chunk = rng.standard_normal((CHUNK_STEPS,) + self.basis.shape)
            self._chunk_id = c
        return self._chunk

    def _check(self, j):
        if not 0 <= j < self.n_steps:
            raise IndexError(f"step {j} outside path of length {self.n_steps}")

    def normals(self, j: int) -> np.ndarray:
        """Grid-shaped standard normals driving fine step ``j``."""
        self._check(j)
        return self._load_chunk(j // CHUNK_STEPS)[j % CHUNK_STEPS]

    def normals_block(self, j0: int, j1: int) -> np.ndarray:
        """Normals of fine steps j0..j1-1, shape (j1 - j0, M, M)."""
        if j1 <= j0:
            return np.zeros((0,) + self.basis.shape)
        self._check(j0)
        self._check(j1 - 1)
        out = np.empty((j1 - j0,) + self.basis.shape)
        j = j0
        while j < j1:
            c, off = divmod(j, CHUNK_STEPS)
            take = min(CHUNK_STEPS - off, j1 - j)
            out[j - j0 : j - j0 + take] = self._load_chunk(c)[off : off + take]
            j += take
        return out

    def spectral_scale(self, tau: float | None = None):
        """sqrt(q_kl * tau) mode weights applied to transformed normals."""
        return self._sqrt_q * np.sqrt(self.fine_tau if tau is None else tau)

    def sample_increment(self, j: int) -> np.ndarray:
        """Spectral Q-Wiener increment W(t_{j+1}) - W(t_j) on the fine grid."""
        return self.spectral_scale() * self.basis.orthonormal_transform(self.normals(j))

    def aggregate_increments(self, coarse_tau: float, j_coarse: int) -> np.ndarray:
        """Sum of the fine increments covering coarse step ``j_coarse``."""
        r = refinement_ratio(coarse_tau, self.fine_tau)
        out = self.sample_increment(r * j_coarse)
        for j in range(r * j_coarse + 1, r * (j_coarse + 1)):
            out = out + self.sample_increment(j)
        return out


class EnsembleNoise:
    """Step-wise access to the normals of many paths at once.

    Loads one chunk of every path into an (R, CHUNK_STEPS, M, M) buffer so a
    step costs a single slice instead of R Python calls.
    """

    def __init__(self, paths):
        self.paths = list(paths)
        if not self.paths:
            raise ValueError("no noise paths given")
        self.basis = self.paths[0].basis
        self.fine_tau = self.paths[0].fine_tau
        self.n_steps = min(p.n_steps for p in self.paths)
        self._chunk_id = None
        self._buf = None

    def __len__(self):
        return len(self.paths)

    def _load(self, c):
        if self._chunk_id != c:
            self._buf = np.stack([p._load_chunk(c) for p in self.paths])
            for p in self.paths:
                p._chunk_id = p._chunk = None
            self._chunk_id = c
        return self._buf

    def summed_normals(self, j0: int, r: int) -> np.ndarray:
        """Sum of the normals of fine steps j0..j0+r-1 for every path, (R, M, M)."""
        if j0 < 0 or j0 + r > self.n_steps:
            raise IndexError(f"steps {j0}..{j0 + r - 1} outside paths of length {self.n_steps}")
        out = None
        j = j0
        while j < j0 + r:
            c, off = divmod(j, CHUNK_STEPS)
            take = min(CHUNK_STEPS - off, j0 + r - j)
            block = self._load(c)[:, off : off + take]
            part = block[:, 0].copy() if take == 1 else block.sum(axis=1)
            out = part if out is None else out + part
            j += take
        return out

    def spectral_scale(self, tau=None):
        return self.paths[0].spectral_scale(tau)


def refinement_ratio(coarse_tau: float, fine_tau: float, rtol: float = 1e-9) -> int:
    """Integer r with coarse_tau = r * fine_tau, or ValueError."""
    ratio = coarse_tau / fine_tau
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > rtol * max(ratio, 1.0):
        raise ValueError(f"coarse step {coarse_tau} is not an integer multiple of {fine_tau}")
    return r


def sample_increment(path: NoisePath, j: int) -> np.ndarray:
    return path.sample_increment(j)


def aggregate_increments(path: NoisePath, coarse_tau: float, j_coarse: int) -> np.ndarray:
    return path.aggregate_increments(coarse_tau, j_coarse)


def noise_values(basis: SpectralBasis, u, dW_hat, spec: NoiseSpec):
    """Grid values of eps * b(u) * w, with w the grid realization of ``dW_hat``.

    Not yet projected; the caller transforms and truncates.
    """
    w = basis.inverse(dW_hat)
    if spec.case == ADDITIVE:
        return spec.epsilon * w
    return spec.epsilon * spec.b(u) * w


def apply_diffusion(u: Field, dW_hat, spec: NoiseSpec) -> Field:
    """eps P^N (b(u) dW) as a field; the additive case returns eps * dW directly."""
    basis = u.basis
    dW_hat = np.asarray(dW_hat)
    if dW_hat.shape[-2:] != basis.shape:
        raise ValueError("increment does not match the field's basis")
    if spec.case == ADDITIVE:
        return Field.from_coefficients(spec.epsilon * basis.mask(dW_hat), basis)
    vals = noise_values(basis, u.values, dW_hat, spec)
    return Field.from_coefficients(basis.mask(basis.forward(vals)), basis)
