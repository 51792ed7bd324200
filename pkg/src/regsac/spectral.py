"""Laplacian eigenbasis Galerkin machinery on 2-D tensor grids.

Two bases are supported:

* ``periodic`` on (0, 2pi)^2: e_{k,l} = exp(i(kx + ly)) / (2pi), collocated on
  the uniform grid x_i = 2pi i / M, eigenvalues k^2 + l^2.
* ``neumann`` on (-1, 1)^2: tensor cosines cos(k pi (x+1)/2), L^2-normalized,
  collocated on the cell-centred grid x_i = -1 + (2i + 1) / M, eigenvalues
  (k pi / 2)^2 + (l pi / 2)^2.

Coefficients are stored in the layout of the underlying orthonormal transform
(``fft2`` / ``dctn`` type II) scaled by ``sqrt(cell_area)``, so that they are
the L^2 expansion coefficients in the continuous orthonormal basis and
Parseval holds with the rectangle (midpoint) rule. Every array function accepts
leading batch axes; the last two axes are (x, y).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

PERIODIC = "periodic"
NEUMANN = "neumann"

SOLVE_DENOMINATOR_FLOOR = 1e-12


class DegenerateSolveError(ArithmeticError):
    """The diagonal implicit operator is (nearly) singular for some mode."""

    def __init__(self, mode, denominator):
        self.mode = tuple(int(m) for m in mode)
        self.denominator = float(denominator)
        super().__init__(
            f"implicit solve denominator {self.denominator:.3e} at mode {self.mode} "
            f"is below {SOLVE_DENOMINATOR_FLOOR:g}"
        )


class SpectralBasis:
    """Boundary condition, retained modes, eigenvalues and transforms.

    ``n_modes`` is the number N of retained modes per dimension and
    ``grid_points`` the collocation size M >= N. ``dealias=True`` picks
    M = 3N/2 (2/3-rule) when ``grid_points`` is not given. Periodic modes are
    -N/2..N/2-1; when M > N the mode +N/2 is kept too so that masking
    preserves real fields.
    """

    def __init__(self, bc: str, n_modes: int, grid_points: int | None = None, dealias: bool = False):
        bc = bc.lower()
        if bc not in (PERIODIC, NEUMANN):
            raise ValueError(f"unknown boundary condition {bc!r}")
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if grid_points is None:
            grid_points = (3 * n_modes + 1) // 2 if dealias else n_modes
        if grid_points < n_modes:
            raise ValueError("grid_points must be >= n_modes")
        if bc == PERIODIC and n_modes % 2:
            raise ValueError("periodic basis needs an even number of modes")
        self.bc = bc
        self.n_modes = int(n_modes)
        self.grid_points = int(grid_points)
        self.dealias = bool(dealias)

        m = self.grid_points
        if bc == PERIODIC:
            self.length = 2.0 * np.pi
            self.origin = 0.0
            self.x = self.length * np.arange(m) / m
            k = np.rint(sfft.fftfreq(m, 1.0 / m)).astype(int)
            self.wavenumbers = k.astype(float)
            keep = _periodic_keep(k, self.n_modes, m)
        else:
            self.length = 2.0
            self.origin = -1.0
            self.x = -1.0 + (2.0 * np.arange(m) + 1.0) / m
            k = np.arange(m)
            self.wavenumbers = k * np.pi / 2.0
            keep = k < self.n_modes
        self.mode_index = k
        self.cell_area = (self.length / m) ** 2
        self.domain_area = self.length**2
        self._scale = np.sqrt(self.cell_area)
        kk = self.wavenumbers
        self.eigenvalues = kk[:, None] ** 2 + kk[None, :] ** 2
        self.retained = keep[:, None] & keep[None, :]
        self.eigenvalues.setflags(write=False)
        self.retained.setflags(write=False)

    def __repr__(self):
        return f"SpectralBasis({self.bc!r}, n_modes={self.n_modes}, grid_points={self.grid_points})"

    def __eq__(self, other):
        return (
            isinstance(other, SpectralBasis)
            and (self.bc, self.n_modes, self.grid_points) == (other.bc, other.n_modes, other.grid_points)
        )

    def __hash__(self):
        return hash((self.bc, self.n_modes, self.grid_points))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_points, self.grid_points)

    @property
    def coefficient_dtype(self):
        return complex if self.bc == PERIODIC else float

    def mesh(self):
        return np.meshgrid(self.x, self.x, indexing="ij")

    def mode_position(self, k: int, l: int) -> tuple[int, int]:
        """Array position of mode (k, l) in the coefficient layout."""
        idx = list(self.mode_index)
        return idx.index(k), idx.index(l)

    # transforms -----------------------------------------------------------

    def orthonormal_transform(self, values):
        if self.bc == PERIODIC:
            return sfft.fft2(values, norm="ortho")
        return sfft.dctn(values, type=2, axes=(-2, -1), norm="ortho")

    def orthonormal_inverse(self, coefficients):
        if self.bc == PERIODIC:
            return sfft.ifft2(coefficients, norm="ortho").real
        return sfft.idctn(coefficients, type=2, axes=(-2, -1), norm="ortho")

    def forward(self, values):
        """Grid values (..., M, M) -> L^2 coefficients (..., M, M)."""
        return self._scale * self.orthonormal_transform(values)

    def inverse(self, coefficients):
        """Coefficients -> real grid values; exact inverse of :meth:`forward`."""
        return self.orthonormal_inverse(coefficients) / self._scale

    def mask(self, coefficients, n: int | None = None):
        """Zero every mode outside the first ``n`` per dimension (default: N)."""
        keep = self.retained if n is None else self.retained_modes(n)
        return np.where(keep, coefficients, 0.0)

    def retained_modes(self, n: int):
        if n < 1:
            raise ValueError("projection size must be >= 1")
        if n > self.n_modes:
            raise ValueError(f"cannot project onto {n} modes, basis has {self.n_modes}")
        if self.bc == PERIODIC:
            keep = _periodic_keep(self.mode_index, n, self.grid_points)
        else:
            keep = self.mode_index < n
        return keep[:, None] & keep[None, :]

    def quadrature(self, values):
        """Rectangle / midpoint rule integral over the domain (last two axes)."""
        return self.cell_area * np.sum(values, axis=(-2, -1))

    def dirichlet_form(self, coefficients):
        """sum_k lambda_k |u_k|^2, i.e. ||grad u||^2."""
        return np.sum(self.eigenvalues * np.abs(coefficients) ** 2, axis=(-2, -1))

    def l2_norm_sq(self, coefficients):
        return np.sum(np.abs(coefficients) ** 2, axis=(-2, -1))

    def gradient(self, coefficients):
        """Grid values of (du/dx, du/dy) by spectral differentiation."""
        w = self.wavenumbers
        if self.bc == PERIODIC:
            dx = self.inverse(1j * w[:, None] * coefficients)
            dy = self.inverse(1j * w[None, :] * coefficients)
            return dx, dy
        # d/dx cos(w_k (x+1)) = -w_k sin(w_k (x+1)); on the midpoint grid that
        # sine is DST-II index k-1, with the same sqrt(2/M) weight as the cosine.
        dx = _shift_down(-w[:, None] * coefficients, -2)
        dx = sfft.idct(sfft.idst(dx, type=2, axis=-2, norm="ortho"), type=2, axis=-1, norm="ortho")
        dy = _shift_down(-w[None, :] * coefficients, -1)
        dy = sfft.idst(sfft.idct(dy, type=2, axis=-2, norm="ortho"), type=2, axis=-1, norm="ortho")
        return dx / self._scale, dy / self._scale

    # dense representations (small N only) ---------------------------------

    @cached_property
    def basis_functions(self):
        """Retained eigenfunctions sampled on the grid, shape (n_retained, M*M).

        Complex for the periodic basis. Rows follow ``np.argwhere(retained)``.
        """
        pos = np.argwhere(self.retained)
        coef = np.zeros((len(pos),) + self.shape, dtype=self.coefficient_dtype)
        coef[np.arange(len(pos)), pos[:, 0], pos[:, 1]] = 1.0
        if self.bc == PERIODIC:
            vals = sfft.ifft2(coef, norm="ortho") / self._scale
        else:
            vals = self.inverse(coef)
        return vals.reshape(len(pos), -1)


def _periodic_keep(k, n, m):
    # modes -n/2..n/2-1, closed under conjugation so real fields stay real;
    # on the n == m grid +n/2 aliases onto -n/2 and nothing is added
    if n == m:
        return (k >= -(n // 2)) & (k <= (n + 1) // 2 - 1)
    return np.abs(k) <= n // 2


def _shift_down(c, axis):
    c = np.moveaxis(c, axis, -1)
    out = np.zeros_like(c)
    out[..., :-1] = c[..., 1:]
    return np.moveaxis(out, -1, axis)


@dataclass
class Field:
    """A real scalar field on a basis grid, with lazily computed coefficients.

    Treat instances as immutable; operations return new fields.
    """

    basis: SpectralBasis
    values: np.ndarray
    _coefficients: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-2:] != self.basis.shape:
            raise ValueError(f"field shape {self.values.shape} does not match basis grid {self.basis.shape}")

    @classmethod
    def from_coefficients(cls, coefficients, basis: SpectralBasis) -> "Field":
        coefficients = np.asarray(coefficients)
        if coefficients.shape[-2:] != basis.shape:
            raise ValueError(f"coefficient shape {coefficients.shape} does not match basis {basis.shape}")
        return cls(basis, basis.inverse(coefficients), coefficients)

    @classmethod
    def zeros(cls, basis: SpectralBasis) -> "Field":
        return cls(basis, np.zeros(basis.shape))

    @property
    def coefficients(self) -> np.ndarray:
        if self._coefficients is None:
            self._coefficients = self.basis.forward(self.values)
        return self._coefficients


def forward(field: Field) -> np.ndarray:
    if not np.all(np.isfinite(field.values)):
        raise ValueError("field contains non-finite values")
    return field.coefficients


def inverse(coefficients, basis: SpectralBasis) -> Field:
    return Field.from_coefficients(coefficients, basis)


def project(field: Field, n: int) -> Field:
    """Galerkin projection onto the first ``n`` modes per dimension."""
    return Field.from_coefficients(field.basis.mask(field.coefficients, n), field.basis)


def solve_denominators(basis: SpectralBasis, sigma: float, shift: float, tau: float):
    """1 + tau (sigma lambda + shift) on the retained modes (1 elsewhere); validated."""
    den = 1.0 + tau * (sigma * basis.eigenvalues + shift)
    den = np.where(basis.retained, den, 1.0)
    bad = den <= SOLVE_DENOMINATOR_FLOOR
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise DegenerateSolveError((basis.mode_index[i], basis.mode_index[j]), den[i, j])
    return den


def implicit_solve(rhs: Field, sigma: float, shift: float, tau: float) -> Field:
    """Apply (I + tau (sigma (-A) + shift))^{-1} mode by mode."""
    den = solve_denominators(rhs.basis, sigma, shift, tau)
    return Field.from_coefficients(rhs.coefficients / den, rhs.basis)


def laplacian(field: Field) -> Field:
    return Field.from_coefficients(-field.basis.eigenvalues * field.coefficients, field.basis)


def grad_norm_sq(field: Field) -> float:
    return float(field.basis.dirichlet_form(field.coefficients))


def sup_norm(field: Field) -> float:
    return float(np.max(np.abs(field.values)))


SNAPSHOT_DTYPE = np.dtype("<f8")


def _snapshot_paths(path):
    base = str(path)
    for ext in (".bin", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    return Path(base + ".bin"), Path(base + ".json")


def save_snapshot(field: Field, path, time: float, seed: int | None = None) -> tuple[Path, Path]:
    """Write grid values as raw row-major little-endian float64 plus a JSON sidecar.

    ``path`` without suffix gets ``.bin`` and ``.json`` appended.
    """
    bin_path, meta_path = _snapshot_paths(path)
    b = field.basis
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(field.values, dtype=SNAPSHOT_DTYPE).tofile(bin_path)
    meta = {
        "bc": b.bc,
        "N": b.n_modes,
        "M": b.grid_points,
        "domain": [[b.origin, b.origin + b.length], [b.origin, b.origin + b.length]],
        "time": float(time),
        "seed": None if seed is None else int(seed),
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return bin_path, meta_path


def load_snapshot(path) -> tuple[Field, dict]:
    """Inverse of :func:`save_snapshot`; returns the field and its sidecar metadata."""
    bin_path, meta_path = _snapshot_paths(path)
    meta = json.loads(meta_path.read_text())
    m = int(meta["M"])
    vals = np.fromfile(bin_path, dtype=SNAPSHOT_DTYPE)
    if vals.size != m * m:
        raise ValueError(f"snapshot holds {vals.size} values, expected {m * m}")
    basis = SpectralBasis(meta["bc"], int(meta["N"]), grid_points=m)
    return Field(basis, vals.reshape(m, m).astype(float)), meta
