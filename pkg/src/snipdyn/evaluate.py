"""Reconstruction quality metrics.

Coupled error studies drive the fitted-model recursion and the exact
simulator with identical normal draws and initial value, so the terminal
root-mean-square error isolates estimation error.  One-dimensional
Wasserstein distances compare terminal distributions.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .dataset import make_training_pairs
from .processes import GaussianProcessSpec, exact_simulate
from .reconstruct import NormalDraws, PathEnsemble, TimeGrid, simulate_paths
from .regression import fit_local_linear, fit_ols
from .synth import synth_snippets

# Substream namespaces within one study repetition.
_SYNTH, _DRAWS = 0, 1

#: A study cell is flagged invalid when more than this fraction of its
#: repetitions fail to fit.
MAX_FAILURE_FRACTION = 0.05


def _check_coupled(est: PathEnsemble, truth: PathEnsemble) -> None:
    if est.grid != truth.grid:
        raise ValueError("ensembles live on different grids")
    if est.m != truth.m:
        raise ValueError(
            f"ensembles have different replicate counts ({est.m} vs {truth.m})"
        )


def rmse_terminal(est: PathEnsemble, truth: PathEnsemble) -> float:
    """Root-mean-square terminal error between coupled ensembles."""
    _check_coupled(est, truth)
    return float(np.sqrt(np.mean((est.terminal - truth.terminal) ** 2)))


def rmse_trajectory(est: PathEnsemble, truth: PathEnsemble) -> float:
    """Diagnostic variant pooling all post-initial grid points."""
    _check_coupled(est, truth)
    return float(np.sqrt(np.mean((est.paths[:, 1:] - truth.paths[:, 1:]) ** 2)))


@dataclass(frozen=True)
class StudyConfig:
    """One simulation study: a grid of sample sizes and noise levels.

    Every (n, noise) cell runs ``reps`` independent repetitions of
    synthesize, fit, and coupled simulation with ``paths`` replicates.
    """

    spec: GaussianProcessSpec
    n_list: tuple[int, ...]
    noise_list: tuple[float, ...]
    reps: int
    paths: int
    delta: float
    method: str = "ols"
    seed: int = 0
    bandwidth: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(
            self, "noise_list", tuple(float(v) for v in self.noise_list)
        )
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("sample sizes must be positive")
        if any(v < 0 for v in self.noise_list) or not self.noise_list:
            raise ValueError("noise levels must be nonnegative")
        if self.reps < 1 or self.paths < 1:
            raise ValueError("reps and paths must be positive")
        if self.method not in ("ols", "local_linear"):
            raise ValueError(f"unknown method {self.method!r}")
        k = round(1.0 / self.delta) if self.delta > 0 else 0
        if k < 1 or abs(k * self.delta - 1.0) > 1e-9:
            raise ValueError(
                f"delta={self.delta} must divide the unit interval"
            )

    @property
    def steps(self) -> int:
        return round(1.0 / self.delta)


@dataclass
class StudyResult:
    """Per-cell average RMSE plus the raw repetition samples.

    ``armse[i, j]`` averages the successful repetitions of cell
    ``(n_list[i], noise_list[j])``; cells with too many failures are NaN
    and flagged in ``invalid``.
    """

    n_list: tuple[int, ...]
    noise_list: tuple[float, ...]
    armse: np.ndarray
    rmse: np.ndarray
    failures: np.ndarray
    invalid: np.ndarray


def _study_rep(cfg: StudyConfig, i: int, j: int, q: int) -> float:
    """One repetition of cell (i, j): synthesize, fit, coupled simulate."""
    n = cfg.n_list[i]
    noise = cfg.noise_list[j]
    ds = synth_snippets(cfg.spec, n, cfg.delta, noise,
                        seed=rng.derive(cfg.seed, i, j, q, _SYNTH))
    pairs = make_training_pairs(ds, "regular")
    if cfg.method == "ols":
        model = fit_ols(pairs)
    else:
        model = fit_local_linear(pairs, bandwidth=cfg.bandwidth)
    grid = TimeGrid(0.0, cfg.delta, cfg.steps)
    draws = NormalDraws.generate(rng.derive(cfg.seed, i, j, q, _DRAWS),
                                 cfg.paths, cfg.steps)
    with warnings.catch_warnings():
        # small samples may not cover the first grid time; extrapolating
        # there by less than one spacing is routine in a study
        warnings.filterwarnings("ignore", message="grid times .* extend beyond")
        est = simulate_paths(model, grid, cfg.spec.x0, draws=draws)
    truth = exact_simulate(cfg.spec, grid, draws=draws)
    return rmse_terminal(est, truth)


def _rep_job(args) -> tuple[int, int, int, float, str | None]:
    cfg, i, j, q = args
    try:
        return i, j, q, _study_rep(cfg, i, j, q), None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return i, j, q, math.nan, str(exc)


def run_study(cfg: StudyConfig, threads: int = 1) -> StudyResult:
    """Run every cell of the study; results do not depend on ``threads``.

    Repetitions use disjoint derived seeds, so cells and repetitions are
    independent and the aggregation is order-free.
    """
    shape = (len(cfg.n_list), len(cfg.noise_list))
    rmse = np.full(shape + (cfg.reps,), math.nan)
    failures = np.zeros(shape, dtype=int)
    jobs = [
        (cfg, i, j, q)
        for i in range(shape[0])
        for j in range(shape[1])
        for q in range(cfg.reps)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_rep_job, jobs, chunksize=4))
    else:
        results = [_rep_job(job) for job in jobs]
    for i, j, q, value, error in results:
        rmse[i, j, q] = value
        if error is not None:
            failures[i, j] += 1

    invalid = failures > MAX_FAILURE_FRACTION * cfg.reps
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Mean of empty slice")
        armse = np.nanmean(rmse, axis=2)
    armse[invalid] = math.nan
    return StudyResult(cfg.n_list, cfg.noise_list, armse, rmse, failures, invalid)


def loglog_slope(n_list, values) -> float:
    """Slope of log(values) against log(n): the empirical convergence rate."""
    n = np.asarray(n_list, dtype=float)
    v = np.asarray(values, dtype=float)
    return float(np.polyfit(np.log(n), np.log(v), 1)[0])


# -- Wasserstein distances ---------------------------------------------------


def wasserstein_gaussian(m1: float, s1: float, m2: float, s2: float) -> float:
    """Quadratic Wasserstein distance between two univariate Gaussians:
    the Euclidean distance between their (mean, sd) parameters."""
    if s1 < 0 or s2 < 0:
        raise ValueError("standard deviations must be nonnegative")
    return float(math.hypot(m1 - m2, s1 - s2))


def wasserstein_empirical(sample1, sample2) -> float:
    """Quadratic Wasserstein distance between equally sized samples.

    Order statistics give the optimal coupling in one dimension, so the
    distance is the root-mean-square gap between sorted samples.
    """
    x = np.asarray(sample1, dtype=float).ravel()
    y = np.asarray(sample2, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(
            f"samples must have equal sizes, got {x.size} and {y.size}"
        )
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    return float(np.sqrt(np.mean((np.sort(x) - np.sort(y)) ** 2)))


# -- plain-CSV export --------------------------------------------------------


def _write_comment(fh, comment: str | None) -> None:
    if comment:
        for line in comment.splitlines():
            fh.write(line if line.startswith("#") else f"# {line}")
            fh.write("\n")


def write_armse_csv(result: StudyResult, path, comment: str | None = None) -> None:
    """Average-RMSE table: one row per sample size, one column per noise."""
    with open(path, "w", newline="") as fh:
        _write_comment(fh, comment)
        writer = csv.writer(fh)
        writer.writerow(["n"] + [f"nu={v:g}" for v in result.noise_list])
        for i, n in enumerate(result.n_list):
            writer.writerow(
                [n] + [repr(float(v)) for v in result.armse[i]]
            )


def write_rmse_csv(result: StudyResult, path, comment: str | None = None) -> None:
    """Long-format per-repetition RMSE samples (for boxplots)."""
    with open(path, "w", newline="") as fh:
        _write_comment(fh, comment)
        writer = csv.writer(fh)
        writer.writerow(["n", "noise", "rep", "rmse"])
        for i, n in enumerate(result.n_list):
            for j, nu in enumerate(result.noise_list):
                for q in range(result.rmse.shape[2]):
                    writer.writerow(
                        [n, repr(float(nu)), q,
                         repr(float(result.rmse[i, j, q]))]
                    )
