import numpy as np
import pytest

from swarmdc import (
    DiffusionMatrix,
    Grid,
    ScalarField,
    VectorField,
    divergence,
    gradient,
    jacobian,
    l2_norm,
    laplacian,
    read_grid_file,
    sample_bilinear,
    sigma_flux,
    write_grid_file,
)
from swarmdc.fields import GridMismatchError


def field(grid, fn):
    X, Y = grid.meshgrid()
    return ScalarField(grid, fn(X, Y))


class TestGradient:
    def test_affine_exact(self):
        g = Grid(20, 24)
        gf = gradient(field(g, lambda x, y: 2.0 * x + 3.0 * y))
        assert np.abs(gf.x.values - 2.0).max() < 1e-12
        assert np.abs(gf.y.values - 3.0).max() < 1e-12

    def test_constant_zero(self):
        g = Grid(16, 16)
        gf = gradient(field(g, lambda x, y: np.ones_like(x)))
        assert np.abs(gf.x.values).max() == 0.0
        assert np.abs(gf.y.values).max() == 0.0

    def test_sincos_truncation_bound(self):
        g = Grid(64, 64)
        X, Y = g.meshgrid()
        gf = gradient(field(g, lambda x, y: np.sin(np.pi * x) * np.cos(np.pi * y)))
        ex = np.pi * np.cos(np.pi * X) * np.cos(np.pi * Y)
        ey = -np.pi * np.sin(np.pi * X) * np.sin(np.pi * Y)
        bound = 5.0 * np.pi**3 * g.dx**2 / 6.0
        assert np.abs(gf.x.values - ex)[1:-1, 1:-1].max() <= bound
        assert np.abs(gf.y.values - ey)[1:-1, 1:-1].max() <= bound


class TestDivergence:
    def test_identity_field(self):
        g = Grid(16, 16)
        X, Y = g.meshgrid()
        div = divergence(VectorField.from_arrays(g, X, Y))
        assert np.abs(div.values[1:-1, 1:-1] - 2.0).max() < 1e-12

    def test_constant_zero(self):
        g = Grid(16, 16)
        c = np.full((16, 16), 0.7)
        div = divergence(VectorField.from_arrays(g, c, c))
        # one-sided boundary stencils leave rounding residue at scale 1/dx
        assert np.abs(div.values).max() < 1e-13

    def test_sin_analytic(self):
        g = Grid(64, 64)
        X, Y = g.meshgrid()
        div = divergence(VectorField.from_arrays(g, np.sin(np.pi * X), np.zeros_like(X)))
        err = np.abs(div.values - np.pi * np.cos(np.pi * X))[1:-1, 1:-1].max()
        assert err <= 1.1 * np.pi**3 * g.dx**2 / 6.0


class TestLaplacian:
    def test_affine_zero_interior(self):
        g = Grid(20, 20)
        lap = laplacian(field(g, lambda x, y: 1.0 + 2.0 * x - 0.5 * y))
        assert np.abs(lap.values[1:-1, 1:-1]).max() < 1e-10

    def test_cos_analytic(self):
        g = Grid(64, 64)
        X, _ = g.meshgrid()
        lap = laplacian(field(g, lambda x, y: np.cos(np.pi * x)))
        exact = -np.pi**2 * np.cos(np.pi * X)
        assert np.abs(lap.values - exact).max() / np.pi**2 <= 0.01

    def test_constant_zero_everywhere(self):
        g = Grid(16, 16)
        lap = laplacian(field(g, lambda x, y: np.full_like(x, 3.0)))
        assert np.abs(lap.values).max() == 0.0


class TestJacobian:
    def test_diagonal(self):
        g = Grid(16, 16)
        X, Y = g.meshgrid()
        jac = jacobian(VectorField.from_arrays(g, 2.0 * X, -3.0 * Y))
        inner = np.s_[1:-1, 1:-1]
        assert np.abs(jac.xx.values[inner] - 2.0).max() < 1e-12
        assert np.abs(jac.yy.values[inner] + 3.0).max() < 1e-12
        assert np.abs(jac.xy.values[inner]).max() < 1e-12
        assert np.abs(jac.yx.values[inner]).max() < 1e-12

    def test_constant_zero(self):
        g = Grid(16, 16)
        c = np.full((16, 16), 1.5)
        jac = jacobian(VectorField.from_arrays(g, c, c))
        for comp in (jac.xx, jac.xy, jac.yx, jac.yy):
            assert np.abs(comp.values).max() == 0.0

    def test_rotation_antisymmetric(self):
        g = Grid(16, 16)
        X, Y = g.meshgrid()
        jac = jacobian(VectorField.from_arrays(g, Y, -X))
        inner = np.s_[1:-1, 1:-1]
        assert np.abs(jac.xx.values[inner]).max() < 1e-12
        assert np.abs(jac.xy.values[inner] - 1.0).max() < 1e-12
        assert np.abs(jac.yx.values[inner] + 1.0).max() < 1e-12
        assert np.abs(jac.yy.values[inner]).max() < 1e-12


class TestSigmaFlux:
    def test_constant_density(self):
        g = Grid(16, 16)
        D = DiffusionMatrix.isotropic(1e-3)
        f = sigma_flux(field(g, lambda x, y: np.ones_like(x)), D)
        assert np.abs(f.x.values).max() == 0.0

    def test_isotropic_linear(self):
        g = Grid(16, 16)
        X, _ = g.meshgrid()
        D = DiffusionMatrix.isotropic(2e-3)
        f = sigma_flux(ScalarField(g, X), D)
        assert np.allclose(f.x.values[1:-1, 1:-1], 2e-3, atol=1e-15)
        assert np.abs(f.y.values).max() < 1e-15

    def test_full_matrix_hand_value(self):
        # sigma = [[2,1],[1,2]] * 1e-3 applied to grad(x1 + x2) = (1, 1)
        sigma = np.array([[2.0, 1.0], [1.0, 2.0]]) * 1e-3
        w, V = np.linalg.eigh(2.0 * sigma)
        g1 = V @ np.diag(np.sqrt(w)) @ V.T
        D = DiffusionMatrix(g1)
        assert np.allclose(D.sigma, sigma, atol=1e-18)
        g = Grid(16, 16)
        X, Y = g.meshgrid()
        f = sigma_flux(ScalarField(g, X + Y), D)
        assert np.allclose(f.x.values[1:-1, 1:-1], 3e-3, atol=1e-15)
        assert np.allclose(f.y.values[1:-1, 1:-1], 3e-3, atol=1e-15)


class TestSampleBilinear:
    def test_affine_exact_anywhere(self):
        g = Grid(12, 17)
        f = field(g, lambda x, y: 1.0 + 2.0 * x - 3.0 * y)
        rng = np.random.default_rng(0)
        pts = rng.random((200, 2))
        vals = sample_bilinear(f, pts)
        assert np.abs(vals - (1.0 + 2.0 * pts[:, 0] - 3.0 * pts[:, 1])).max() < 1e-12

    def test_node_exact(self):
        g = Grid(9, 7)
        rng = np.random.default_rng(1)
        f = ScalarField(g, rng.random((7, 9)))
        X, Y = g.meshgrid()
        pts = np.column_stack([X.ravel(), Y.ravel()])
        assert np.array_equal(sample_bilinear(f, pts), f.values.ravel())

    def test_sin_interpolation_remainder(self):
        g = Grid(64, 64)
        f = field(g, lambda x, y: np.sin(np.pi * x))
        rng = np.random.default_rng(2)
        # inside the hull of cell centers, where the bound applies
        pts = g.dx / 2 + rng.random((500, 2)) * (1.0 - g.dx)
        err = np.abs(sample_bilinear(f, pts) - np.sin(np.pi * pts[:, 0]))
        assert err.max() <= np.pi**2 * g.dx**2 / 8.0

    def test_vector_field_sampling(self):
        g = Grid(8, 8)
        X, Y = g.meshgrid()
        v = VectorField.from_arrays(g, X, Y)
        out = sample_bilinear(v, np.array([0.25, 0.75]))
        assert np.allclose(out, [0.25, 0.75])

    def test_outside_domain_rejected(self):
        g = Grid(8, 8)
        f = field(g, lambda x, y: x)
        with pytest.raises(ValueError):
            sample_bilinear(f, np.array([1.01, 0.5]))
        with pytest.raises(ValueError):
            sample_bilinear(f, np.array([[-0.1, 0.5]]))


class TestL2Norm:
    def test_unit(self):
        g = Grid(16, 16)
        assert l2_norm(field(g, lambda x, y: np.ones_like(x))) == 1.0

    def test_zero(self):
        g = Grid(16, 16)
        assert l2_norm(field(g, lambda x, y: np.zeros_like(x))) == 0.0

    def test_cos_quadrature(self):
        g = Grid(64, 64)
        n = l2_norm(field(g, lambda x, y: np.cos(np.pi * x)))
        assert abs(n - 1.0 / np.sqrt(2.0)) < 1e-3

    def test_scaling_homogeneity(self):
        g = Grid(16, 16)
        rng = np.random.default_rng(3)
        f = ScalarField(g, rng.normal(size=(16, 16)))
        fa = ScalarField(g, -2.5 * f.values)
        assert np.isclose(l2_norm(fa), 2.5 * l2_norm(f), rtol=1e-14)


class TestConvergenceOrder:
    def test_second_order_on_smooth_fields(self):
        def worst(grid):
            X, Y = grid.meshgrid()
            f = ScalarField(grid, np.sin(np.pi * X) * np.cos(2 * np.pi * Y))
            gf = gradient(f)
            ex = np.pi * np.cos(np.pi * X) * np.cos(2 * np.pi * Y)
            ey = -2 * np.pi * np.sin(np.pi * X) * np.sin(2 * np.pi * Y)
            lap = laplacian(f)
            el = -(np.pi**2 + 4 * np.pi**2) * f.values
            inner = np.s_[1:-1, 1:-1]
            return (
                np.abs(gf.x.values - ex)[inner].max(),
                np.abs(gf.y.values - ey)[inner].max(),
                np.abs(lap.values - el)[inner].max(),
            )

        coarse = worst(Grid(32, 32))
        fine = worst(Grid(64, 64))
        for c, f in zip(coarse, fine):
            assert c / f >= 3.5


class TestErrors:
    def test_grid_mismatch_rejected(self):
        a = ScalarField(Grid(8, 8), np.zeros((8, 8)))
        b = ScalarField(Grid(16, 16), np.zeros((16, 16)))
        with pytest.raises(GridMismatchError):
            VectorField(a, b)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            ScalarField(Grid(8, 8), np.full((8, 8), np.nan))

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            Grid(3, 8)


class TestGridFiles:
    def test_round_trip(self, tmp_path):
        g = Grid(9, 6)
        rng = np.random.default_rng(4)
        f = ScalarField(g, rng.random((6, 9)) * 3.0)
        path = tmp_path / "snap.grid"
        write_grid_file(path, f, t=1.23456789)
        back, t = read_grid_file(path)
        assert t == 1.23456789
        assert np.array_equal(back.values, f.values)
        assert (back.grid.nx, back.grid.ny) == (9, 6)

    def test_header_format(self, tmp_path):
        g = Grid(5, 4)
        f = ScalarField(g, np.ones((4, 5)))
        path = tmp_path / "snap.grid"
        write_grid_file(path, f, t=0.5)
        lines = path.read_text().splitlines()
        assert lines[0] == "# t=0.5 nx=5 ny=4"
        assert len(lines) == 1 + 4
        assert all(len(line.split()) == 5 for line in lines[1:])

    def test_malformed_rejected(self, tmp_path):
        path = tmp_path / "bad.grid"
        path.write_text("not a header\n1 2 3\n")
        with pytest.raises(ValueError):
            read_grid_file(path)
