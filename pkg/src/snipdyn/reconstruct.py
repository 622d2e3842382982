"""Forward path reconstruction.

Starting from an initial state, each step draws the next value from a
normal law whose mean and variance come from a conditional model evaluated
at the current (value, time) state.  Ensembles of such paths are then
summarized by percentile curves, against which fresh observations can be
flagged.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rng


class EnsembleError(RuntimeError):
    """Too many replicates aborted on non-finite predictions."""


@dataclass(frozen=True)
class TimeGrid:
    """Simulation lattice ``t0 + k * delta`` for ``k = 0..steps``."""

    t0: float
    delta: float
    steps: int

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.steps + 1)


class NormalDraws:
    """Matrix of standard normal variates, one row per replicate.

    Row ``l`` is generated from the substream ``(seed, l)``, so entry
    ``(l, k)`` is reproducible from the seed and its position alone and
    replicates stay independent whether generated serially or in parallel.
    """

    def __init__(self, matrix: np.ndarray, seed_key: tuple = ()):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("draws must be a 2-d matrix (replicates x steps)")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("draws must be finite")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        self.matrix = matrix
        self.seed_key = seed_key

    @classmethod
    def generate(cls, seed: rng.Seed, m: int, k: int) -> "NormalDraws":
        if m < 1 or k < 1:
            raise ValueError("need at least one replicate and one step")
        matrix = np.empty((m, k))
        for l in range(m):
            matrix[l] = rng.generator(seed, l).standard_normal(k)
        return cls(matrix, seed_key=rng.seed_key(seed))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated trajectories on a grid; column 0 is the initial value.

    ``aborted`` lists ``(replicate, step)`` for replicates dropped after a
    non-finite prediction; the retained rows are all finite.
    """

    grid: TimeGrid
    x0: float
    paths: np.ndarray
    draws: NormalDraws | None = None
    aborted: tuple[tuple[int, int], ...] = ()
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 2 or paths.shape[1] != self.grid.steps + 1:
            raise ValueError(
                f"paths must be (replicates, {self.grid.steps + 1}), "
                f"got {paths.shape}"
            )
        if not np.all(paths[:, 0] == self.x0):
            raise ValueError("every path must start at x0")
        if not np.all(np.isfinite(paths)):
            raise ValueError("paths must be finite")
        paths = paths.copy()
        paths.setflags(write=False)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "x0", float(self.x0))

    @property
    def m(self) -> int:
        return self.paths.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1]


def _resolve_draws(grid: TimeGrid, m: int | None, draws: NormalDraws | None,
                   seed: rng.Seed | None) -> NormalDraws:
    if draws is None:
        if seed is None or m is None:
            raise ValueError("pass either a NormalDraws object or both m and seed")
        return NormalDraws.generate(seed, m, grid.steps)
    if draws.k != grid.steps:
        raise ValueError(
            f"draws cover {draws.k} steps but the grid has {grid.steps}"
        )
    if m is not None and m != draws.m:
        raise ValueError(f"m={m} disagrees with draws of {draws.m} replicates")
    return draws


def simulate_paths(
    model,
    grid: TimeGrid,
    x0: float,
    m: int | None = None,
    draws: NormalDraws | None = None,
    seed: rng.Seed | None = None,
) -> PathEnsemble:
    """Iterate the one-step conditional law along the grid.

    At step ``k`` the state ``(x, t_{k-1})`` (plus the target time for
    three-component models) is fed to the model, and the next value is
    ``mean + sqrt(max(var, 0)) * W[l, k]``.  A zero-variance step
    degenerates to the deterministic mean update.

    Replicates hitting a non-finite prediction are aborted and reported;
    more than 1% aborted raises :class:`EnsembleError`.
    """
    draws = _resolve_draws(grid, m, draws, seed)
    m = draws.m
    if model.predictor_dim not in (2, 3):
        raise ValueError(f"model predictor_dim must be 2 or 3, got {model.predictor_dim}")

    times = grid.times
    t_range = _model_time_range(model)
    if t_range is not None:
        lo, hi = t_range
        queried = times[:-1] if model.predictor_dim == 2 else times
        if queried.min() < lo - 1e-12 or queried.max() > hi + 1e-12:
            warnings.warn(
                f"grid times [{queried.min():g}, {queried.max():g}] extend "
                f"beyond the training time range [{lo:g}, {hi:g}]; "
                f"predictions there are extrapolations",
                stacklevel=2,
            )

    x = np.full(m, float(x0))
    paths = np.empty((m, grid.steps + 1))
    paths[:, 0] = x
    alive = np.ones(m, dtype=bool)
    abort_step = np.zeros(m, dtype=int)
    out_of_range = 0
    has_ranges = getattr(model, "training_summary", None) is not None

    for k in range(1, grid.steps + 1):
        if model.predictor_dim == 2:
            z = np.column_stack([x, np.full(m, times[k - 1])])
        else:
            z = np.column_stack(
                [x, np.full(m, times[k - 1]), np.full(m, times[k])]
            )
        mean = np.asarray(model.predict_mean(z), dtype=float)
        var = np.maximum(np.asarray(model.predict_var(z), dtype=float), 0.0)
        x_next = mean + np.sqrt(var) * draws.matrix[:, k - 1]
        if has_ranges:
            out_of_range += int(np.count_nonzero(~model.in_training_range(z) & alive))
        bad = alive & ~np.isfinite(x_next)
        if np.any(bad):
            abort_step[bad] = k
            alive &= ~bad
        # aborted replicates are frozen at their last finite value so later
        # model evaluations stay well-defined; their rows are dropped below
        x = np.where(alive, x_next, x)
        paths[:, k] = x

    n_aborted = int(m - alive.sum())
    aborted = tuple(
        (int(i), int(abort_step[i])) for i in np.flatnonzero(~alive)
    )
    if n_aborted > 0.01 * m:
        raise EnsembleError(
            f"{n_aborted}/{m} replicates aborted on non-finite predictions "
            f"(first at steps {[s for _, s in aborted[:5]]})"
        )
    diagnostics = {"aborted": n_aborted}
    if has_ranges:
        diagnostics["out_of_range_queries"] = out_of_range
    return PathEnsemble(
        grid, x0, paths[alive], draws=draws, aborted=aborted,
        diagnostics=diagnostics,
    )


def _model_time_range(model) -> tuple[float, float] | None:
    summary = getattr(model, "training_summary", None)
    if not summary:
        return None
    return float(summary["z_min"][1]), float(summary["z_max"][1])


@dataclass(frozen=True)
class PercentileCurves:
    """Empirical percentile curves of an ensemble, one row per probability."""

    probs: tuple[float, ...]
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.probs), times.size):
            raise ValueError("values must be (len(probs), len(times))")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)


def percentile_curves(ens: PathEnsemble, probs: Sequence[float]) -> PercentileCurves:
    """Per-time empirical quantiles (linear interpolation of order stats)."""
    probs = [float(p) for p in probs]
    if not probs or any(not 0.0 < p < 1.0 for p in probs):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    if ens.m < 20:
        warnings.warn(
            f"only {ens.m} replicates; tail percentiles are unstable",
            stacklevel=2,
        )
    values = np.quantile(ens.paths, probs, axis=0)
    return PercentileCurves(tuple(probs), ens.grid.times, values)


def flag_observation(curves: PercentileCurves, time: float, value: float) -> str:
    """Classify an observation against the outermost percentile curves.

    The observation is matched to the nearest grid time (at most half a
    grid spacing away) and compared with the lowest and highest requested
    percentile curves there.  Returns ``"below_low"``, ``"within"`` or
    ``"above_high"``.
    """
    times = curves.times
    j = int(np.argmin(np.abs(times - time)))
    spacing = float(times[1] - times[0]) if times.size > 1 else np.inf
    if abs(times[j] - time) > spacing / 2 + 1e-12:
        raise ValueError(
            f"time {time} is outside the grid [{times[0]}, {times[-1]}]"
        )
    low = curves.values[int(np.argmin(curves.probs)), j]
    high = curves.values[int(np.argmax(curves.probs)), j]
    if value < low:
        return "below_low"
    if value > high:
        return "above_high"
    return "within"


# -- plain-CSV export --------------------------------------------------------


def _write_comment(fh, comment: str | None) -> None:
    if comment:
        for line in comment.splitlines():
            fh.write(line if line.startswith("#") else f"# {line}")
            fh.write("\n")


def write_paths_csv(ens: PathEnsemble, path, comment: str | None = None,
                    times: np.ndarray | None = None) -> None:
    """Long-format export: one row per (replicate, step)."""
    times = ens.grid.times if times is None else np.asarray(times, dtype=float)
    with open(path, "w", newline="") as fh:
        _write_comment(fh, comment)
        writer = csv.writer(fh)
        writer.writerow(["replicate", "step", "time", "value"])
        for l in range(ens.m):
            for k in range(ens.grid.steps + 1):
                writer.writerow(
                    [l, k, repr(float(times[k])), repr(float(ens.paths[l, k]))]
                )


def write_percentiles_csv(curves: PercentileCurves, path,
                          comment: str | None = None,
                          times: np.ndarray | None = None) -> None:
    """Export percentile curves as (prob, time, value) rows."""
    times = curves.times if times is None else np.asarray(times, dtype=float)
    with open(path, "w", newline="") as fh:
        _write_comment(fh, comment)
        writer = csv.writer(fh)
        writer.writerow(["prob", "time", "value"])
        for i, p in enumerate(curves.probs):
            for k in range(times.size):
                writer.writerow(
                    [repr(float(p)), repr(float(times[k])),
                     repr(float(curves.values[i, k]))]
                )
