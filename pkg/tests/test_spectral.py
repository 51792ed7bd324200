import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regsac.spectral import (
    NEUMANN,
    PERIODIC,
    DegenerateSolveError,
    Field,
    SpectralBasis,
    forward,
    grad_norm_sq,
    implicit_solve,
    inverse,
    laplacian,
    load_snapshot,
    project,
    save_snapshot,
    sup_norm,
)

BCS = [PERIODIC, NEUMANN]


def random_field(basis, seed=0, band_limited=True):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(basis.shape)
    f = Field(basis, vals)
    if band_limited:
        f = Field.from_coefficients(basis.mask(f.coefficients), basis)
    return f


def analytic_mode(basis, k, l):
    """Normalized eigenfunction evaluated directly (complex for periodic)."""
    X, Y = basis.mesh()
    if basis.bc == PERIODIC:
        return np.exp(1j * (k * X + l * Y)) / (2 * np.pi)
    cx = np.cos(k * np.pi * (X + 1) / 2) * (1 / np.sqrt(2) if k == 0 else 1.0)
    cy = np.cos(l * np.pi * (Y + 1) / 2) * (1 / np.sqrt(2) if l == 0 else 1.0)
    return cx * cy


class TestBasis:
    def test_periodic_layout(self):
        b = SpectralBasis(PERIODIC, 8)
        assert sorted(b.mode_index[b.retained[:, 0]]) == list(range(-4, 4))
        i, j = b.mode_position(2, -3)
        assert b.eigenvalues[i, j] == 13
        assert b.eigenvalues[b.mode_position(0, 0)] == 0
        assert b.x[0] == 0 and b.x[-1] < 2 * np.pi

    def test_neumann_layout(self):
        b = SpectralBasis(NEUMANN, 6, grid_points=9)
        i, j = b.mode_position(3, 1)
        assert b.eigenvalues[i, j] == pytest.approx((3 * np.pi / 2) ** 2 + (np.pi / 2) ** 2)
        assert b.retained.sum() == 36
        assert np.all((b.x > -1) & (b.x < 1))

    def test_invalid(self):
        with pytest.raises(ValueError):
            SpectralBasis("dirichlet", 8)
        with pytest.raises(ValueError):
            SpectralBasis(NEUMANN, 8, grid_points=4)
        with pytest.raises(ValueError):
            SpectralBasis(PERIODIC, 7)

    def test_dealias_grid(self):
        assert SpectralBasis(NEUMANN, 16, dealias=True).grid_points == 24
        assert SpectralBasis(PERIODIC, 16).grid_points == 16

    def test_eigenvalues_read_only(self):
        b = SpectralBasis(NEUMANN, 4)
        with pytest.raises(ValueError):
            b.eigenvalues[0, 0] = 1.0

    def test_equality(self):
        assert SpectralBasis(NEUMANN, 8) == SpectralBasis(NEUMANN, 8)
        assert SpectralBasis(NEUMANN, 8) != SpectralBasis(PERIODIC, 8)
        assert len({SpectralBasis(NEUMANN, 8), SpectralBasis(NEUMANN, 8)}) == 1


@pytest.mark.parametrize("bc", BCS)
class TestTransforms:
    def test_constant(self, bc):
        b = SpectralBasis(bc, 8)
        f = Field(b, np.ones(b.shape))
        c = forward(f)
        pos = b.mode_position(0, 0)
        # <1, e_0> = |D| / sqrt(|D|)
        assert c[pos] == pytest.approx(np.sqrt(b.domain_area), rel=1e-14)
        c2 = c.copy()
        c2[pos] = 0
        assert np.abs(c2).max() < 1e-12

    @pytest.mark.parametrize("mode", [(1, 0), (2, 1), (3, 3)])
    def test_single_mode(self, bc, mode):
        b = SpectralBasis(bc, 8, grid_points=12)
        c = b.forward(analytic_mode(b, *mode))
        expected = np.zeros(b.shape)
        expected[b.mode_position(*mode)] = 1.0
        np.testing.assert_allclose(np.abs(c), expected, atol=1e-12)

    def test_round_trip(self, bc):
        b = SpectralBasis(bc, 16, grid_points=24)
        f = random_field(b, band_limited=False)
        np.testing.assert_allclose(inverse(forward(f), b).values, f.values, rtol=0, atol=1e-12 * np.abs(f.values).max())

    def test_zero(self, bc):
        b = SpectralBasis(bc, 8)
        assert np.all(inverse(np.zeros(b.shape, dtype=b.coefficient_dtype), b).values == 0)

    def test_parseval(self, bc):
        b = SpectralBasis(bc, 16)
        f = random_field(b, band_limited=False, seed=3)
        lhs = b.l2_norm_sq(forward(f))
        rhs = b.quadrature(f.values**2)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_non_finite_rejected(self, bc):
        b = SpectralBasis(bc, 4)
        vals = np.zeros(b.shape)
        vals[1, 2] = np.nan
        with pytest.raises(ValueError):
            forward(Field(b, vals))

    def test_shape_mismatch(self, bc):
        b = SpectralBasis(bc, 8)
        with pytest.raises(ValueError):
            inverse(np.zeros((4, 4)), b)
        with pytest.raises(ValueError):
            Field(b, np.zeros((5, 5)))

    def test_real_fields(self, bc):
        b = SpectralBasis(bc, 8)
        f = random_field(b)
        raw = np.fft.ifft2(f.coefficients) if bc == PERIODIC else None
        if raw is not None:
            assert np.abs(raw.imag).max() < 1e-12 * np.abs(raw.real).max()

    def test_eigen_relation(self, bc):
        b = SpectralBasis(bc, 8, grid_points=12)
        for pos in np.argwhere(b.retained):
            k, l = b.mode_index[pos[0]], b.mode_index[pos[1]]
            e = analytic_mode(b, k, l)
            lap = b.orthonormal_inverse(-b.eigenvalues * b.forward(e.real)) / np.sqrt(b.cell_area)
            assert np.abs(lap + b.eigenvalues[tuple(pos)] * e.real).max() < 1e-8

    def test_gradient_analytic(self, bc):
        b = SpectralBasis(bc, 8, grid_points=16)
        X, Y = b.mesh()
        if bc == PERIODIC:
            u = np.sin(2 * X) * np.cos(3 * Y)
            ux, uy = 2 * np.cos(2 * X) * np.cos(3 * Y), -3 * np.sin(2 * X) * np.sin(3 * Y)
        else:
            u = np.cos(np.pi * (X + 1)) * np.cos(1.5 * np.pi * (Y + 1))
            ux = -np.pi * np.sin(np.pi * (X + 1)) * np.cos(1.5 * np.pi * (Y + 1))
            uy = -1.5 * np.pi * np.cos(np.pi * (X + 1)) * np.sin(1.5 * np.pi * (Y + 1))
        dx, dy = b.gradient(b.forward(u))
        np.testing.assert_allclose(dx, ux, atol=1e-12)
        np.testing.assert_allclose(dy, uy, atol=1e-12)

    def test_grad_norm_quadrature(self, bc):
        b = SpectralBasis(bc, 16, grid_points=24)
        f = random_field(b, seed=5)
        dx, dy = b.gradient(f.coefficients)
        assert grad_norm_sq(f) == pytest.approx(b.quadrature(dx**2 + dy**2), rel=1e-8)

    def test_grad_norm_constant(self, bc):
        b = SpectralBasis(bc, 8)
        assert grad_norm_sq(Field(b, np.full(b.shape, 0.7))) == pytest.approx(0.0, abs=1e-20)

    def test_projection(self, bc):
        b = SpectralBasis(bc, 16)
        f = random_field(b, band_limited=False, seed=7)
        assert np.array_equal(project(f, 16).coefficients, b.mask(f.coefficients))
        p = project(f, 6)
        np.testing.assert_allclose(project(p, 6).values, p.values, atol=1e-13)
        tail = f.coefficients - p.coefficients
        diff = b.quadrature((f.values - p.values) ** 2)
        assert diff == pytest.approx(b.l2_norm_sq(tail), rel=1e-10)
        assert b.l2_norm_sq(f.coefficients) == pytest.approx(b.l2_norm_sq(p.coefficients) + b.l2_norm_sq(tail), rel=1e-10)
        with pytest.raises(ValueError):
            project(f, 0)
        with pytest.raises(ValueError):
            project(f, 17)

    def test_implicit_solve_inverse(self, bc):
        b = SpectralBasis(bc, 8)
        f = random_field(b, seed=2)
        sigma, shift, tau = 0.7, -1.0, 0.05
        v = implicit_solve(f, sigma, shift, tau)
        back = v.values + tau * (-sigma * laplacian(v).values + shift * v.values)
        np.testing.assert_allclose(back, f.values, atol=1e-10)

    def test_implicit_solve_identity(self, bc):
        b = SpectralBasis(bc, 8)
        f = random_field(b, seed=4)
        np.testing.assert_allclose(implicit_solve(f, 1.0, 0.0, 0.0).values, f.values, atol=1e-14)

    def test_sup_norm(self, bc):
        b = SpectralBasis(bc, 8)
        assert sup_norm(Field(b, np.full(b.shape, 0.3))) == 0.3
        f = random_field(b, band_limited=False, seed=9)
        assert sup_norm(f) == max(abs(v) for v in f.values.ravel())


class TestImplicitSolveExamples:
    def test_constant_shift(self):
        b = SpectralBasis(NEUMANN, 8)
        f = Field(b, np.full(b.shape, 2.0))
        np.testing.assert_allclose(implicit_solve(f, 1.0, -1.0, 0.1).values, 2.0 / 0.9, rtol=1e-13)

    def test_periodic_mode(self):
        b = SpectralBasis(PERIODIC, 8)
        X, Y = b.mesh()
        f = Field(b, np.cos(X))
        np.testing.assert_allclose(implicit_solve(f, 1.0, 0.0, 0.5).values, np.cos(X) / 1.5, atol=1e-14)

    def test_degenerate(self):
        b = SpectralBasis(NEUMANN, 4)
        with pytest.raises(DegenerateSolveError) as info:
            implicit_solve(Field(b, np.ones(b.shape)), 1.0, -10.0, 0.1)
        assert info.value.mode == (0, 0)
        assert info.value.denominator == pytest.approx(0.0, abs=1e-15)

    def test_periodic_laplacian_mode(self):
        b = SpectralBasis(PERIODIC, 8)
        X, Y = b.mesh()
        u = np.cos(2 * X + Y)
        np.testing.assert_allclose(-laplacian(Field(b, u)).values, 5 * u, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), bc=st.sampled_from(BCS), n=st.sampled_from([4, 8, 12]))
def test_parseval_projection_property(seed, bc, n):
    b = SpectralBasis(bc, n, grid_points=n + 4)
    f = random_field(b, seed=seed, band_limited=False)
    total = b.quadrature(f.values**2)
    p = project(f, n // 2 * 2 if bc == PERIODIC else n // 2)
    rest = b.l2_norm_sq(f.coefficients - p.coefficients)
    assert b.l2_norm_sq(p.coefficients) + rest == pytest.approx(total, rel=1e-10)


@pytest.mark.parametrize("bc", BCS)
def test_snapshot_round_trip(tmp_path, bc):
    b = SpectralBasis(bc, 8, grid_points=12)
    f = random_field(b, seed=11)
    bin_path, meta_path = save_snapshot(f, tmp_path / "snap_t0p5", 0.5, seed=42)
    raw = bin_path.read_bytes()
    assert len(raw) == 8 * 12 * 12
    assert np.array_equal(np.frombuffer(raw, dtype="<f8").reshape(12, 12), f.values)
    meta = json.loads(meta_path.read_text())
    assert set(meta) == {"bc", "N", "M", "domain", "time", "seed"}
    assert (meta["N"], meta["M"], meta["time"], meta["seed"]) == (8, 12, 0.5, 42)
    g, meta2 = load_snapshot(bin_path)
    assert g.basis == b and np.array_equal(g.values, f.values) and meta2 == meta
