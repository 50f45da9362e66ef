import numpy as np
import pytest

from swarmdc import Grid, KdeConfig, kde_estimate, mass, sample_bilinear


class TestKdeBasics:
    def test_single_sample_mass_and_peak(self):
        g = Grid(31, 31)
        p = kde_estimate(np.array([[0.5, 0.5]]), KdeConfig(h=0.04), g)
        assert abs(mass(p) - 1.0) <= 1e-6
        j, i = np.unravel_index(np.argmax(p.values), p.values.shape)
        assert (i, j) == (15, 15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            kde_estimate(np.empty((0, 2)), KdeConfig(), Grid(16, 16))

    def test_outside_rejected(self):
        with pytest.raises(ValueError):
            kde_estimate(np.array([[1.2, 0.5]]), KdeConfig(), Grid(16, 16))

    def test_symmetric_samples_symmetric_field(self):
        g = Grid(30, 30)
        rng = np.random.default_rng(0)
        half = rng.random((100, 2))
        pos = np.vstack([half, np.column_stack([1.0 - half[:, 0], half[:, 1]])])
        p = kde_estimate(pos, KdeConfig(h=0.04), g)
        assert np.abs(p.values - p.values[:, ::-1]).max() <= 1e-12

    def test_mass_and_floor_for_any_input(self):
        g = Grid(30, 30)
        rng = np.random.default_rng(1)
        cfg = KdeConfig(h=0.04, p_min=1e-3)
        for n in (1, 7, 500):
            p = kde_estimate(rng.random((n, 2)), cfg, g)
            assert abs(mass(p) - 1.0) <= 1e-6
            assert p.values.min() > 0
            # floor survives the final renormalization up to its own mass
            assert p.values.min() >= cfg.p_min / (1.0 + cfg.p_min)

    def test_boundary_sample_keeps_unit_mass(self):
        g = Grid(30, 30)
        p = kde_estimate(np.array([[0.0, 0.0], [1.0, 0.3]]), KdeConfig(h=0.04), g)
        assert abs(mass(p) - 1.0) <= 1e-6


class TestKdeConsistency:
    def test_translation_consistency_in_interior(self):
        g = Grid(64, 64)
        rng = np.random.default_rng(2)
        cluster = np.array([0.35, 0.40]) + 0.03 * rng.normal(size=(60, 2))
        delta = np.array([0.18, 0.12])
        cfg = KdeConfig(h=0.05)
        p1 = kde_estimate(cluster, cfg, g)
        p2 = kde_estimate(cluster + delta, cfg, g)
        probes = cluster[:20] + 0.5 * delta
        v1 = sample_bilinear(p1, probes)
        v2 = sample_bilinear(p2, probes + delta)
        # shifted estimate matches up to interpolation error (field scale ~ 10)
        assert np.abs(v1 - v2).max() <= 0.02 * max(p1.values.max(), 1.0)

    def test_l1_error_nonincreasing_in_n(self):
        g = Grid(30, 30)
        rng = np.random.default_rng(3)
        cfg = KdeConfig(h=0.1)
        errs = []
        for n in (100, 1000, 10000):
            pos = rng.random((n, 2))
            p = kde_estimate(pos, cfg, g)
            errs.append(np.abs(p.values - 1.0).sum() * g.cell_area)
        assert errs[0] >= errs[1] >= errs[2]

    def test_uniform_100k_close_to_uniform(self):
        g = Grid(30, 30)
        rng = np.random.default_rng(4)
        p = kde_estimate(rng.random((100000, 2)), KdeConfig(h=0.1), g)
        l1 = np.abs(p.values - 1.0).sum() * g.cell_area
        assert l1 <= 0.05

    def test_config_validation(self):
        with pytest.raises(ValueError):
            KdeConfig(h=0.0)
        with pytest.raises(ValueError):
            KdeConfig(h=0.04, p_min=0.0)
        with pytest.raises(ValueError):
            KdeConfig(h=0.04, p_min=1.5)
