"""Conditional mean/variance fits: exactness, oracles, selection, clamping."""

import math

import numpy as np
import pytest

from snipdyn.dataset import InsufficientDataError, TrainingPair
from snipdyn.processes import GaussianProcessSpec
from snipdyn.regression import (
    BandwidthGrid,
    BandwidthGridError,
    ConditionalModel,
    SingularDesignError,
    fit_local_linear,
    fit_ols,
    load_model,
    loocv_score,
    save_model,
)
from snipdyn.synth import synth_snippets
from snipdyn import make_training_pairs

OU = GaussianProcessSpec("ou", theta=1.0, sigma=1.0)

# closed-form one-step law for the mean-reverting process at spacing 0.05
OU_SLOPE = math.exp(-0.05)                    # 0.951229424500714
OU_STEP_VAR = 0.5 * (1.0 - math.exp(-0.1))    # 0.04758129098202441


def pairs_from(z, y):
    return [TrainingPair(tuple(zi), float(yi), f"s{i}") for i, (zi, yi) in
            enumerate(zip(z, y))]


def linear_pairs(n=60, coefs=(1.0, 2.0, 3.0), seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    z = np.column_stack([rng.normal(size=n), rng.uniform(0, 1, size=n)])
    y = coefs[0] + coefs[1] * z[:, 0] + coefs[2] * z[:, 1]
    if noise:
        y = y + rng.normal(scale=noise, size=n)
    return pairs_from(z, y)


@pytest.fixture(scope="module")
def ou_pairs_large():
    ds = synth_snippets(OU, 100_000, 0.05, noise=0.0, seed=20)
    return make_training_pairs(ds, "regular")


class TestOls:
    def test_noiseless_linear_recovered_exactly(self):
        model = fit_ols(linear_pairs())
        np.testing.assert_allclose(model.mean_coef, [1.0, 2.0, 3.0], atol=1e-10)
        rng = np.random.default_rng(1)
        queries = np.column_stack([rng.normal(size=50), rng.uniform(size=50)])
        assert np.max(model.predict_var(queries)) <= 1e-12

    def test_ou_slope_approaches_step_decay(self, ou_pairs_large):
        # oracle: the one-step conditional mean has slope exp(-theta*delta)
        model = fit_ols(ou_pairs_large)
        assert model.mean_coef[1] == pytest.approx(OU_SLOPE, abs=0.01)
        assert model.predict_mean((1.0, 0.5)) == pytest.approx(OU_SLOPE, abs=0.02)

    def test_ou_variance_approaches_step_variance(self, ou_pairs_large):
        model = fit_ols(ou_pairs_large)
        for z in [(0.0, 0.3), (0.5, 0.5), (-0.4, 0.8)]:
            assert model.predict_var(z) == pytest.approx(OU_STEP_VAR, rel=0.10)

    def test_constant_responses(self):
        rng = np.random.default_rng(2)
        z = np.column_stack([rng.normal(size=30), rng.uniform(size=30)])
        model = fit_ols(pairs_from(z, np.full(30, 4.5)))
        np.testing.assert_allclose(model.mean_coef, [4.5, 0.0, 0.0], atol=1e-10)
        assert model.predict_var((0.2, 0.4)) == pytest.approx(0.0, abs=1e-12)

    def test_negative_variance_prediction_clamped(self):
        model = ConditionalModel(
            method="ols",
            predictor_dim=2,
            training_summary={"n_pairs": 0, "z_min": [0, 0], "z_max": [1, 1]},
            mean_coef=np.zeros(3),
            var_coef=np.array([-0.003, 0.0, 0.0]),
        )
        assert model.predict_var((0.5, 0.5)) == 0.0

    def test_collinear_design_names_columns(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=40)
        z = np.column_stack([x, x])  # t duplicates x
        with pytest.raises(SingularDesignError, match="t"):
            fit_ols(pairs_from(z, x))

    def test_too_few_pairs(self):
        with pytest.raises(InsufficientDataError):
            fit_ols(linear_pairs(n=3))

    def test_coefficients_within_standard_error_bands(self):
        n = 400
        coefs = np.array([0.5, -1.2, 2.0])
        pairs = linear_pairs(n=n, coefs=tuple(coefs), seed=7, noise=0.3)
        model = fit_ols(pairs)
        z = np.array([p.z for p in pairs])
        x = np.column_stack([np.ones(n), z])
        resid = np.array([p.y for p in pairs]) - x @ model.mean_coef
        sigma2 = resid @ resid / (n - 3)
        se = np.sqrt(sigma2 * np.diag(np.linalg.inv(x.T @ x)))
        np.testing.assert_array_less(np.abs(model.mean_coef - coefs), 4 * se)

    def test_fit_is_bitwise_deterministic(self):
        pairs = linear_pairs(n=200, seed=9, noise=0.5)
        a, b = fit_ols(pairs), fit_ols(pairs)
        assert np.array_equal(a.mean_coef, b.mean_coef)
        assert np.array_equal(a.var_coef, b.var_coef)

    def test_variance_fit_insensitive_to_mean_fit(self):
        # refitting the squared residuals around the true conditional mean
        # moves variance predictions by no more than twice the mean-fit RMSE
        ds = synth_snippets(OU, 4000, 0.05, noise=0.0, seed=77)
        pairs = make_training_pairs(ds, "regular")
        model = fit_ols(pairs)
        z = np.array([p.z for p in pairs])
        y = np.array([p.y for p in pairs])
        x = np.column_stack([np.ones(len(z)), z])
        true_resid_sq = (y - OU_SLOPE * z[:, 0]) ** 2
        gamma_true, *_ = np.linalg.lstsq(x, true_resid_sq, rcond=None)

        mean_rmse = float(np.sqrt(np.mean((x @ model.mean_coef
                                           - OU_SLOPE * z[:, 0]) ** 2)))
        queries = np.column_stack(
            [np.linspace(-1, 1, 21), np.linspace(0.05, 0.9, 21)]
        )
        qx = np.column_stack([np.ones(len(queries)), queries])
        diff = np.max(np.abs(np.maximum(qx @ gamma_true, 0.0)
                             - model.predict_var(queries)))
        assert diff <= 2 * mean_rmse

    def test_predictor_dim_mismatch_rejected(self):
        model = fit_ols(linear_pairs())
        with pytest.raises(ValueError, match="components"):
            model.predict_mean((1.0, 2.0, 3.0))


class TestLocalLinear:
    def test_reproduces_training_values_on_linear_data(self):
        pairs = linear_pairs(n=40)
        model = fit_local_linear(pairs, bandwidth=(0.5, 0.3))
        z = np.array([p.z for p in pairs])
        y = np.array([p.y for p in pairs])
        np.testing.assert_allclose(model.predict_mean(z), y, atol=1e-6)

    def test_reproduces_affine_functions_between_training_points(self):
        rng = np.random.default_rng(5)
        z = np.column_stack([rng.uniform(-1, 1, 80), rng.uniform(0, 1, 80)])
        y = 0.7 - 1.3 * z[:, 0] + 0.4 * z[:, 1]
        model = fit_local_linear(pairs_from(z, y), bandwidth=(0.4, 0.25))
        queries = np.column_stack(
            [rng.uniform(-0.9, 0.9, 60), rng.uniform(0.05, 0.95, 60)]
        )
        want = 0.7 - 1.3 * queries[:, 0] + 0.4 * queries[:, 1]
        np.testing.assert_allclose(model.predict_mean(queries), want, atol=1e-6)

    def test_growth_scale_bandwidth_accepted(self):
        # centimetres by years: a wide explicit bandwidth pair is valid input
        rng = np.random.default_rng(6)
        heights = rng.uniform(60, 120, 50)
        ages = rng.uniform(1, 8, 50)
        z = np.column_stack([heights, ages])
        y = heights + 6.0 + rng.normal(scale=1.0, size=50)
        model = fit_local_linear(pairs_from(z, y), bandwidth=(20.0, 0.5))
        np.testing.assert_array_equal(model.bandwidth_mean, [20.0, 0.5])
        np.testing.assert_array_equal(model.bandwidth_var, [20.0, 0.5])

    def test_singleton_grid_equals_explicit_fit(self):
        pairs = linear_pairs(n=40, noise=0.2, seed=8)
        grid = BandwidthGrid(((0.5,), (0.3,)))
        a = fit_local_linear(pairs, grid=grid)
        b = fit_local_linear(pairs, bandwidth=(0.5, 0.3))
        rng = np.random.default_rng(0)
        queries = np.column_stack([rng.normal(size=20), rng.uniform(size=20)])
        np.testing.assert_array_equal(a.predict_mean(queries),
                                      b.predict_mean(queries))
        np.testing.assert_array_equal(a.predict_var(queries),
                                      b.predict_var(queries))

    def test_variance_never_negative(self):
        ds = synth_snippets(OU, 400, 0.05, noise=0.05, seed=3)
        pairs = make_training_pairs(ds, "regular")
        model = fit_local_linear(pairs, bandwidth=(0.3, 0.2))
        rng = np.random.default_rng(12)
        queries = np.column_stack(
            [rng.uniform(-3, 3, 10_000), rng.uniform(-0.2, 1.2, 10_000)]
        )
        assert np.min(model.predict_var(queries)) >= 0.0

    def test_needs_ten_pairs(self):
        with pytest.raises(InsufficientDataError):
            fit_local_linear(linear_pairs(n=9), bandwidth=(0.5, 0.3))

    def test_infeasible_grid_raises(self):
        pairs = linear_pairs(n=20)
        with pytest.raises(BandwidthGridError):
            fit_local_linear(pairs, grid=BandwidthGrid(((1e-9,), (1e-9,))))

    def test_bad_bandwidth_rejected(self):
        pairs = linear_pairs(n=20)
        with pytest.raises(ValueError):
            fit_local_linear(pairs, bandwidth=(0.5,))
        with pytest.raises(ValueError):
            fit_local_linear(pairs, bandwidth=(0.5, -0.1))


class TestLoocv:
    def test_constant_data_scores_zero_everywhere(self):
        rng = np.random.default_rng(13)
        z = np.column_stack([rng.normal(size=25), rng.uniform(size=25)])
        pairs = pairs_from(z, np.full(25, 2.0))
        # feasible bandwidths only: tiny ones leave isolated points massless
        for h in [(0.5, 0.4), (1.0, 0.8), (2.0, 1.0)]:
            assert loocv_score(pairs, "local_linear", h) == pytest.approx(0.0, abs=1e-10)

    def test_noiseless_linear_scores_tiny(self):
        pairs = linear_pairs(n=40)
        for h in [(0.3, 0.2), (0.6, 0.5), (1.5, 1.0)]:
            assert loocv_score(pairs, "local_linear", h) < 1e-8
        assert loocv_score(pairs, "ols") < 1e-18

    def test_selected_bandwidth_beats_grid_endpoints_held_out(self):
        # oracle: direct held-out evaluation on an independent draw
        rng = np.random.default_rng(21)
        def make(n):
            z = np.column_stack(
                [rng.uniform(0, 1, n), rng.uniform(0, 1, n)]
            )
            y = np.sin(6.0 * z[:, 0]) + rng.normal(scale=0.25, size=n)
            return pairs_from(z, y)

        train, test = make(150), make(400)
        grid = BandwidthGrid.default(np.array([p.z for p in train]))
        model = fit_local_linear(train, grid=grid)

        test_z = np.array([p.z for p in test])
        test_y = np.array([p.y for p in test])

        def held_out_mse(h):
            m = fit_local_linear(train, bandwidth=h)
            return float(np.mean((m.predict_mean(test_z) - test_y) ** 2))

        chosen = held_out_mse(tuple(model.bandwidth_mean))
        smallest = held_out_mse(tuple(d[0] for d in grid.per_dim))
        largest = held_out_mse(tuple(d[-1] for d in grid.per_dim))
        assert chosen <= smallest
        assert chosen <= largest

    def test_infeasible_bandwidth_scores_inf(self):
        pairs = linear_pairs(n=20)
        assert loocv_score(pairs, "local_linear", (1e-9, 1e-9)) == math.inf


class TestSerialization:
    def test_ols_round_trip(self, tmp_path):
        model = fit_ols(linear_pairs(n=50, noise=0.1, seed=14))
        path = tmp_path / "model.json"
        save_model(model, path, metadata={"note": "round trip"})
        back, meta = load_model(path)
        assert meta["note"] == "round trip"
        rng = np.random.default_rng(1)
        queries = np.column_stack([rng.normal(size=30), rng.uniform(size=30)])
        np.testing.assert_array_equal(back.predict_mean(queries),
                                      model.predict_mean(queries))
        np.testing.assert_array_equal(back.predict_var(queries),
                                      model.predict_var(queries))

    def test_local_linear_round_trip(self, tmp_path):
        model = fit_local_linear(linear_pairs(n=30, noise=0.2, seed=15),
                                 bandwidth=(0.4, 0.3))
        path = tmp_path / "model.json"
        save_model(model, path)
        back, _ = load_model(path)
        rng = np.random.default_rng(2)
        queries = np.column_stack([rng.normal(size=30), rng.uniform(size=30)])
        np.testing.assert_array_equal(back.predict_mean(queries),
                                      model.predict_mean(queries))

    def test_version_checked(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format_version": 99, "method": "ols"}')
        with pytest.raises(ValueError, match="version"):
            load_model(path)


class TestRangeDiagnostics:
    def test_in_training_range(self):
        pairs = linear_pairs(n=50, seed=16)
        model = fit_ols(pairs)
        z = np.array([p.z for p in pairs])
        inside = z.mean(axis=0)
        outside = z.max(axis=0) + 10.0
        assert model.in_training_range(inside)
        assert not model.in_training_range(outside)
