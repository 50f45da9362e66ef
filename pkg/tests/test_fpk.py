import numpy as np
import pytest

from swarmdc import (
    CflViolation,
    DiffusionMatrix,
    FpkState,
    Grid,
    ScalarField,
    VectorField,
    check_cfl,
    density_feedback,
    fpk_step,
    l2_norm,
    mass,
    run_fpk,
)
from swarmdc.control import ControlParams


def uniform_state(grid):
    return FpkState(ScalarField(grid, np.ones((grid.ny, grid.nx))))


def zero_velocity(grid):
    z = np.zeros((grid.ny, grid.nx))
    return VectorField.from_arrays(grid, z, z)


def smooth_scenario(grid, seed=0):
    rng = np.random.default_rng(seed)
    X, Y = grid.meshgrid()
    p0 = 1.0 + 0.4 * np.sin(2 * np.pi * X) * np.sin(np.pi * Y) + 0.2 * np.cos(np.pi * Y)
    v = VectorField.from_arrays(
        grid,
        0.05 * np.sin(np.pi * X) * np.cos(np.pi * Y) + 0.02 * rng.random(),
        -0.04 * np.cos(np.pi * X) * np.sin(np.pi * Y),
    )
    return FpkState.from_density(ScalarField(grid, p0)), v


class TestFpkStep:
    def test_uniform_invariant_under_zero_velocity(self):
        g = Grid(16, 16)
        state = fpk_step(uniform_state(g), zero_velocity(g), DiffusionMatrix.isotropic(1e-3), 0.02)
        assert np.array_equal(state.p.values, np.ones((16, 16)))
        assert state.t == 0.02

    def test_mass_conserved_per_step(self):
        g = Grid(24, 20)
        state, v = smooth_scenario(g)
        D = DiffusionMatrix.isotropic(1e-3)
        for _ in range(100):
            state = fpk_step(state, v, D, 0.02)
            assert abs(mass(state.p) - 1.0) <= 1e-12

    def test_negative_density_guard_and_positivity(self):
        g = Grid(24, 24)
        state, v = smooth_scenario(g, seed=3)
        D = DiffusionMatrix.isotropic(5e-4)
        for _ in range(200):
            state = fpk_step(state, v, D, 0.02)
        assert state.p.values.min() >= -1e-12

    def test_symmetry_preserved(self):
        g = Grid(32, 32)
        X, Y = g.meshgrid()
        p0 = 1.0 + 0.3 * np.cos(np.pi * X) ** 2 * np.sin(np.pi * Y)
        state = FpkState.from_density(ScalarField(g, p0))
        # velocity symmetric under x1 -> 1 - x1 (vx odd, vy even)
        v = VectorField.from_arrays(
            g, 0.05 * np.sin(2 * np.pi * X), 0.03 * np.sin(np.pi * Y) * np.cos(np.pi * X) ** 2
        )
        D = DiffusionMatrix.isotropic(1e-3)
        for _ in range(50):
            state = fpk_step(state, v, D, 0.02)
        flipped = state.p.values[:, ::-1]
        assert np.abs(state.p.values - flipped).max() <= 1e-12


class TestCheckCfl:
    def test_paper_scale_diffusion_ok(self):
        g = Grid(30, 30)
        ok, _ = check_cfl(zero_velocity(g), DiffusionMatrix.isotropic(1e-3), 0.02)
        # advective term 0, diffusive term 0.02 * 2 * (2e-3 * 900) = 0.072
        assert ok

    def test_zero_noise_any_dt(self):
        g = Grid(16, 16)
        ok, max_dt = check_cfl(zero_velocity(g), DiffusionMatrix.isotropic(0.0), 1e9)
        assert ok and max_dt == np.inf

    def test_fast_advection_rejected_with_max_dt(self):
        g = Grid(30, 30)
        v = VectorField.from_arrays(g, np.full((30, 30), 30.0), np.zeros((30, 30)))
        ok, max_dt = check_cfl(v, DiffusionMatrix.isotropic(0.0), 0.02)
        # 0.02 * 30 * 30 = 18 > 0.5
        assert not ok
        assert np.isclose(max_dt, 0.5 / 900.0)
        with pytest.raises(CflViolation) as exc:
            fpk_step(uniform_state(g), v, DiffusionMatrix.isotropic(0.0), 0.02)
        assert np.isclose(exc.value.max_dt, 0.5 / 900.0)


class TestRunFpk:
    def test_equilibrium_stays_put(self):
        g = Grid(16, 16)
        p0 = ScalarField(g, np.ones((16, 16)))
        run = run_fpk(p0, lambda t, s: zero_velocity(g), DiffusionMatrix.isotropic(1e-3),
                      0.02, 1.0, p_star=p0)
        assert np.abs(run.l2_err).max() == 0.0

    def test_pure_diffusion_converges_to_uniform(self):
        g = Grid(32, 32)
        X, _ = g.meshgrid()
        p0 = ScalarField(g, 1.0 + 0.1 * np.cos(np.pi * X))
        sigma0 = 5e-3
        # time constant 1/(sigma0 pi^2) ~ 20 s; run well past it
        run = run_fpk(p0, lambda t, s: zero_velocity(g), DiffusionMatrix.isotropic(sigma0),
                      0.02, 90.0, p_star=ScalarField(g, np.ones((32, 32))))
        assert run.l2_err[-1] < 1e-3
        assert run.l2_err[0] > 0.06

    def test_closed_loop_monotone_decay(self):
        g = Grid(48, 48)
        X, Y = g.meshgrid()
        p_star = 1.0 + 0.5 * np.cos(np.pi * X) * np.cos(np.pi * Y)
        p_star = ScalarField(g, p_star / (p_star.sum() * g.cell_area))
        params = ControlParams(alpha=0.003, k=0.008, eps1=2.0, eps2=2.0, p_star=p_star)
        D = DiffusionMatrix.isotropic(0.0)

        def provider(t, state):
            return density_feedback(state.p, params, D)

        p0 = ScalarField(g, np.ones((48, 48)))
        run = run_fpk(p0, provider, D, 0.05, 30.0, p_star=p_star)
        ups = np.diff(run.l2_err)
        assert ups.max() <= 1e-9
        assert run.l2_err[-1] < run.l2_err[0]
