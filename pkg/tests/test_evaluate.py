"""Coupled error metrics, study harness, Wasserstein distances."""

import math

import numpy as np
import pytest

from snipdyn.evaluate import (
    StudyConfig,
    loglog_slope,
    rmse_terminal,
    rmse_trajectory,
    run_study,
    wasserstein_empirical,
    wasserstein_gaussian,
    write_armse_csv,
    write_rmse_csv,
)
from snipdyn.processes import GaussianProcessSpec
from snipdyn.reconstruct import PathEnsemble, TimeGrid

OU = GaussianProcessSpec("ou", theta=1.0, sigma=1.0)


def ensemble(paths, grid=None, x0=0.0):
    paths = np.asarray(paths, dtype=float)
    grid = grid or TimeGrid(0.0, 0.1, paths.shape[1] - 1)
    return PathEnsemble(grid, x0, paths)


class TestRmse:
    def test_identical_ensembles_score_zero(self):
        a = ensemble(np.zeros((40, 5)))
        assert rmse_terminal(a, a) == 0.0
        assert rmse_trajectory(a, a) == 0.0

    def test_constant_shift_scores_its_magnitude(self):
        rng = np.random.default_rng(0)
        base = np.column_stack([np.zeros(50), rng.normal(size=(50, 4))])
        a = ensemble(base)
        shifted = base.copy()
        shifted[:, -1] += -0.75
        b = ensemble(shifted)
        assert rmse_terminal(a, b) == pytest.approx(0.75, rel=1e-12)

    def test_mismatched_ensembles_rejected(self):
        a = ensemble(np.zeros((40, 5)))
        b = ensemble(np.zeros((30, 5)))
        with pytest.raises(ValueError, match="replicate"):
            rmse_terminal(a, b)
        c = ensemble(np.zeros((40, 4)), grid=TimeGrid(0.0, 0.1, 3))
        with pytest.raises(ValueError, match="grid"):
            rmse_terminal(a, c)

    def test_invariant_to_consistent_permutation(self):
        rng = np.random.default_rng(1)
        pa = np.column_stack([np.zeros(60), rng.normal(size=(60, 3))])
        pb = np.column_stack([np.zeros(60), rng.normal(size=(60, 3))])
        perm = rng.permutation(60)
        before = rmse_terminal(ensemble(pa), ensemble(pb))
        after = rmse_terminal(ensemble(pa[perm]), ensemble(pb[perm]))
        assert after == pytest.approx(before, rel=1e-12)


class TestStudy:
    def test_single_repetition_table_equals_its_rmse(self):
        cfg = StudyConfig(spec=OU, n_list=(60,), noise_list=(0.0,),
                          reps=1, paths=80, delta=0.1, seed=3)
        result = run_study(cfg)
        assert result.rmse.shape == (1, 1, 1)
        assert result.armse[0, 0] == result.rmse[0, 0, 0]
        assert not result.invalid.any()

    def test_threads_do_not_change_results(self):
        cfg = StudyConfig(spec=OU, n_list=(50, 80), noise_list=(0.0, 0.05),
                          reps=3, paths=60, delta=0.1, seed=4)
        serial = run_study(cfg, threads=1)
        parallel = run_study(cfg, threads=2)
        np.testing.assert_array_equal(serial.rmse, parallel.rmse)
        np.testing.assert_array_equal(serial.armse, parallel.armse)

    def test_failed_cells_are_flagged_invalid(self):
        # two subjects can never provide the minimum pair count for the fit
        cfg = StudyConfig(spec=OU, n_list=(2,), noise_list=(0.0,),
                          reps=4, paths=30, delta=0.1, seed=5)
        result = run_study(cfg)
        assert result.failures[0, 0] == 4
        assert result.invalid[0, 0]
        assert math.isnan(result.armse[0, 0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StudyConfig(spec=OU, n_list=(), noise_list=(0.0,), reps=1,
                        paths=10, delta=0.1)
        with pytest.raises(ValueError):
            StudyConfig(spec=OU, n_list=(10,), noise_list=(0.0,), reps=1,
                        paths=10, delta=0.3)
        with pytest.raises(ValueError):
            StudyConfig(spec=OU, n_list=(10,), noise_list=(-0.1,), reps=1,
                        paths=10, delta=0.1)

    def test_csv_layout(self, tmp_path):
        cfg = StudyConfig(spec=OU, n_list=(40, 60), noise_list=(0.0, 0.1),
                          reps=2, paths=40, delta=0.1, seed=6)
        result = run_study(cfg)
        armse = tmp_path / "armse.csv"
        rmse = tmp_path / "rmse.csv"
        write_armse_csv(result, armse, comment="study")
        write_rmse_csv(result, rmse)
        lines = armse.read_text().strip().splitlines()
        assert lines[0] == "# study"
        assert lines[1] == "n,nu=0,nu=0.1"
        assert len(lines) == 2 + 2
        long_lines = rmse.read_text().strip().splitlines()
        assert long_lines[0] == "n,noise,rep,rmse"
        assert len(long_lines) == 1 + 2 * 2 * 2

    def test_loglog_slope_recovers_power_law(self):
        ns = np.array([100, 200, 500, 1000])
        values = 3.0 * ns ** -0.5
        assert loglog_slope(ns, values) == pytest.approx(-0.5, abs=1e-12)


class TestWassersteinGaussian:
    def test_identical_distributions(self):
        assert wasserstein_gaussian(1.2, 0.7, 1.2, 0.7) == 0.0

    def test_unit_case(self):
        assert wasserstein_gaussian(1.0, 2.0, 0.0, 1.0) == pytest.approx(
            math.sqrt(2.0), rel=1e-15
        )

    def test_point_masses(self):
        assert wasserstein_gaussian(-3.5, 0.0, 0.0, 0.0) == 3.5

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError):
            wasserstein_gaussian(0.0, -1.0, 0.0, 1.0)

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a, b, c = [(rng.normal(), rng.uniform(0, 3)) for _ in range(3)]
            dab = wasserstein_gaussian(*a, *b)
            dba = wasserstein_gaussian(*b, *a)
            dac = wasserstein_gaussian(*a, *c)
            dcb = wasserstein_gaussian(*c, *b)
            assert dab == dba
            assert dab >= 0.0
            assert dab <= dac + dcb + 1e-12


class TestWassersteinEmpirical:
    def test_sample_against_itself(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=1000)
        assert wasserstein_empirical(x, x.copy()) == 0.0

    def test_two_standard_normal_samples_are_close(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=100_000)
        y = rng.normal(size=100_000)
        assert wasserstein_empirical(x, y) <= 0.02

    def test_matches_closed_form_for_gaussians(self):
        rng = np.random.default_rng(11)
        x = rng.normal(1.0, 2.0, size=100_000)
        y = rng.normal(0.0, 1.0, size=100_000)
        want = wasserstein_gaussian(1.0, 2.0, 0.0, 1.0)
        assert wasserstein_empirical(x, y) == pytest.approx(want, abs=0.03)

    def test_tracks_sample_moment_distance(self):
        rng = np.random.default_rng(12)
        m = 20_000
        x = rng.normal(0.3, 1.4, size=m)
        y = rng.normal(-0.2, 0.9, size=m)
        emp = wasserstein_empirical(x, y)
        of_moments = wasserstein_gaussian(
            x.mean(), x.std(ddof=1), y.mean(), y.std(ddof=1)
        )
        assert abs(emp - of_moments) < 10 / math.sqrt(m)

    def test_unequal_sizes_rejected(self):
        with pytest.raises(ValueError, match="equal sizes"):
            wasserstein_empirical(np.zeros(5), np.zeros(6))
