"""Synthetic snippet generation: structure, noise, determinism."""

import math

import numpy as np
import pytest
from scipy import stats

from snipdyn.processes import GaussianProcessSpec
from snipdyn.synth import synth_snippets

OU = GaussianProcessSpec("ou", theta=1.0, sigma=1.0)


class TestStructure:
    def test_counts_and_grid_alignment(self):
        ds = synth_snippets(OU, 1000, 0.05, noise=0.0, seed=1)
        assert ds.n_subjects == 1000
        assert all(r.n_obs == 2 for r in ds.records)
        assert ds.regular
        assert ds.span_bound == pytest.approx(0.05, abs=1e-12)
        starts = np.array([r.times[0] for r in ds.records])
        grid = 0.05 * np.arange(20)
        assert np.all(np.min(np.abs(starts[:, None] - grid[None, :]), axis=1) < 1e-12)

    def test_zero_diffusion_zero_noise_lies_on_drift_curve(self):
        spec = GaussianProcessSpec("ho_lee", sigma=0.0, drift="cos")
        ds = synth_snippets(spec, 50, 0.1, noise=0.0, seed=2)
        for rec in ds.records:
            np.testing.assert_allclose(rec.values, np.sin(rec.times), atol=1e-14)

    def test_non_divisor_delta_rejected(self):
        with pytest.raises(ValueError, match="divide"):
            synth_snippets(OU, 10, 0.03, seed=0)
        with pytest.raises(ValueError, match="divide"):
            synth_snippets(OU, 10, 0.7, seed=0)

    def test_bad_counts_rejected(self):
        with pytest.raises(ValueError):
            synth_snippets(OU, 0, 0.05)
        with pytest.raises(ValueError):
            synth_snippets(OU, 10, 0.05, noise=-0.1)


class TestNoise:
    def test_noise_standard_deviation(self):
        n = 10_000
        clean = synth_snippets(OU, n, 0.05, noise=0.0, seed=5)
        noisy = synth_snippets(OU, n, 0.05, noise=0.1, seed=5)
        dev = np.concatenate(
            [b.values - a.values for a, b in zip(clean.records, noisy.records)]
        )
        assert dev.std() == pytest.approx(0.1, rel=0.05)

    def test_noise_levels_share_paths_and_windows(self):
        a = synth_snippets(OU, 200, 0.05, noise=0.0, seed=7)
        b = synth_snippets(OU, 200, 0.05, noise=0.01, seed=7)
        unit = synth_snippets(OU, 200, 0.05, noise=1.0, seed=7)
        for ra, rb, ru in zip(a.records, b.records, unit.records):
            np.testing.assert_array_equal(ra.times, rb.times)
            eps = ru.values - ra.values
            np.testing.assert_allclose(rb.values, ra.values + 0.01 * eps,
                                       atol=1e-12)


class TestRandomness:
    def test_start_times_uniform_over_grid(self):
        n = 20_000
        ds = synth_snippets(OU, n, 0.05, noise=0.0, seed=9)
        starts = np.array([r.times[0] for r in ds.records])
        counts = np.array([(np.abs(starts - 0.05 * k) < 1e-12).sum()
                           for k in range(20)])
        assert counts.sum() == n
        assert stats.chisquare(counts).pvalue > 0.001

    def test_seed_determinism(self):
        a = synth_snippets(OU, 100, 0.05, noise=0.1, seed=13)
        b = synth_snippets(OU, 100, 0.05, noise=0.1, seed=13)
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.times, rb.times)
            np.testing.assert_array_equal(ra.values, rb.values)

    def test_different_seeds_differ(self):
        a = synth_snippets(OU, 100, 0.05, seed=1)
        b = synth_snippets(OU, 100, 0.05, seed=2)
        assert any(
            not np.array_equal(ra.values, rb.values)
            for ra, rb in zip(a.records, b.records)
        )
