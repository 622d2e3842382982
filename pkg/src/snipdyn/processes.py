"""Reference Gaussian processes with closed-form moments.

Three standard diffusions serve as ground truth: standard Brownian motion,
the constant-diffusion drift model (Ho-Lee), and the mean-reverting
Ornstein-Uhlenbeck process.  Each provides exact mean/covariance
functions, Gaussian conditional moments, a transition-exact simulator, and
the Lipschitz constant of its one-step conditional mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import rng
from .reconstruct import NormalDraws, PathEnsemble, TimeGrid, _resolve_draws

KINDS = ("brownian", "ho_lee", "ou")

#: Built-in drift functions g(t) with antiderivatives G (G(0) = 0).
DRIFTS: dict[str, tuple[Callable, Callable]] = {
    "cos": (np.cos, np.sin),
    "sin": (np.sin, lambda t: 1.0 - np.cos(t)),
    "zero": (lambda t: np.zeros_like(np.asarray(t, dtype=float)),
             lambda t: np.zeros_like(np.asarray(t, dtype=float))),
    "one": (lambda t: np.ones_like(np.asarray(t, dtype=float)),
            lambda t: np.asarray(t, dtype=float)),
}


class InconsistentConditioningError(ValueError):
    """Conditioning on a deterministic state with the wrong value."""


@dataclass(frozen=True)
class GaussianProcessSpec:
    """Parameters of a reference process.

    ``brownian`` is standard Brownian motion (unit diffusion, start 0).
    ``ho_lee`` has deterministic drift ``drift`` (a built-in name or a
    callable, integrated by adaptive quadrature when no antiderivative is
    known) and diffusion ``sigma >= 0``; zero diffusion gives the
    deterministic drift curve.  ``ou`` reverts to zero at rate ``theta``.
    The start value ``x0`` is deterministic.
    """

    kind: str
    sigma: float = 1.0
    theta: float | None = None
    drift: str | Callable = "cos"
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "ou":
            if self.theta is None or not self.theta > 0:
                raise ValueError("ou requires theta > 0")
            if not self.sigma > 0:
                raise ValueError("ou requires sigma > 0")
        else:
            if self.theta is not None:
                raise ValueError("theta only applies to the ou kind")
        if self.kind == "ho_lee":
            if self.sigma < 0:
                raise ValueError("ho_lee requires sigma >= 0")
            if isinstance(self.drift, str) and self.drift not in DRIFTS:
                raise ValueError(
                    f"unknown drift {self.drift!r}; built-ins: {sorted(DRIFTS)}"
                )
        if self.kind == "brownian":
            if self.sigma != 1.0 or self.x0 != 0.0:
                raise ValueError(
                    "brownian is standard (sigma=1, x0=0); use ho_lee with "
                    "drift='zero' for other diffusions or start values"
                )


def _drift_antiderivative(spec: GaussianProcessSpec, t):
    """Integral of the drift from 0 to t (analytic for built-ins,
    adaptive quadrature at tolerance 1e-10 otherwise)."""
    t = np.asarray(t, dtype=float)
    if isinstance(spec.drift, str):
        _, anti = DRIFTS[spec.drift]
        return anti(t)
    out = np.empty(t.shape)
    for i, ti in np.ndenumerate(t):
        out[i], _ = integrate.quad(spec.drift, 0.0, ti,
                                   epsabs=1e-10, epsrel=1e-10)
    return out


def _scalar_in(*args) -> bool:
    return all(np.ndim(a) == 0 for a in args)


def mean_fn(spec: GaussianProcessSpec, t):
    """Marginal mean at time t (process started at x0 at time 0)."""
    t = np.asarray(t, dtype=float)
    if spec.kind == "brownian":
        out = np.zeros_like(t)
    elif spec.kind == "ho_lee":
        out = spec.x0 + _drift_antiderivative(spec, t)
    else:
        out = spec.x0 * np.exp(-spec.theta * t)
    return float(out) if out.ndim == 0 else out


def cov_fn(spec: GaussianProcessSpec, s, t):
    """Covariance of the process values at times s and t."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if spec.kind == "brownian":
        out = np.minimum(s, t)
    elif spec.kind == "ho_lee":
        out = spec.sigma**2 * np.minimum(s, t)
    else:
        c = spec.sigma**2 / (2.0 * spec.theta)
        out = c * (np.exp(-spec.theta * np.abs(s - t))
                   - np.exp(-spec.theta * (s + t)))
    return float(out) if out.ndim == 0 else out


def _conditional_moments_arr(spec: GaussianProcessSpec, t, s, x):
    """Vectorized Gaussian conditioning of the value at s on the value at t.

    Where the variance at t is zero the state is deterministic, so x must
    equal the marginal mean there and the answer is the marginal law at s.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t < 0):
        raise ValueError("conditioning time must be nonnegative")
    if np.any(s <= t):
        raise ValueError("target time must exceed the conditioning time")
    var_t = np.asarray(cov_fn(spec, t, t))
    mu_t = np.asarray(mean_fn(spec, t))
    zero = var_t <= 0.0
    if np.any(zero):
        bad = zero & (np.abs(x - mu_t) > 1e-9 * np.maximum(1.0, np.abs(mu_t)))
        if np.any(bad):
            raise InconsistentConditioningError(
                "the state at the conditioning time is deterministic and "
                "does not match the supplied value"
            )
    cross = np.asarray(cov_fn(spec, s, t))
    slope = np.where(zero, 0.0, cross / np.where(zero, 1.0, var_t))
    mean = np.asarray(mean_fn(spec, s)) + slope * (x - mu_t)
    var = np.maximum(np.asarray(cov_fn(spec, s, s)) - slope * cross, 0.0)
    return mean, var


def conditional_moments(spec: GaussianProcessSpec, t: float, s: float,
                        x: float) -> tuple[float, float]:
    """Conditional mean and variance of the value at s given value x at t."""
    mean, var = _conditional_moments_arr(spec, t, s, x)
    return float(mean), float(var)


def exact_simulate(
    spec: GaussianProcessSpec,
    grid: TimeGrid,
    m: int | None = None,
    draws: NormalDraws | None = None,
    seed: rng.Seed | None = None,
) -> PathEnsemble:
    """Simulate paths whose joint law at the grid points is exact.

    The recursion starts from the deterministic state ``x0`` at ``grid.t0``
    and applies the one-step transition law, so no discretization error is
    introduced.  Draw column ``k`` produces path column ``k + 1``, the same
    alignment as :func:`snipdyn.reconstruct.simulate_paths`, which lets
    coupled comparisons share the same variates.
    """
    draws = _resolve_draws(grid, m, draws, seed)
    m = draws.m
    k = grid.steps
    times = grid.times
    paths = np.empty((m, k + 1))
    paths[:, 0] = spec.x0

    if spec.kind == "ou":
        decay = math.exp(-spec.theta * grid.delta)
        sd = math.sqrt(
            spec.sigma**2 / (2.0 * spec.theta)
            * (1.0 - math.exp(-2.0 * spec.theta * grid.delta))
        )
        for j in range(k):
            paths[:, j + 1] = decay * paths[:, j] + sd * draws.matrix[:, j]
    else:
        sigma = 1.0 if spec.kind == "brownian" else spec.sigma
        if spec.kind == "brownian":
            increments = np.zeros(k)
        else:
            anti = _drift_antiderivative(spec, times)
            increments = np.diff(anti)
        sd = sigma * math.sqrt(grid.delta)
        for j in range(k):
            paths[:, j + 1] = paths[:, j] + increments[j] + sd * draws.matrix[:, j]

    return PathEnsemble(grid, spec.x0, paths, draws=draws)


def lipschitz_constant(spec: GaussianProcessSpec, grid: TimeGrid,
                       delta: float) -> float:
    """Largest slope of the one-step conditional mean in the value variable,
    over the interior grid points."""
    interior = grid.times[1:-1]
    if interior.size == 0:
        raise ValueError("grid has no interior points")
    var_t = np.asarray(cov_fn(spec, interior, interior))
    if np.any(var_t <= 0):
        raise ValueError("variance must be positive at interior grid points")
    cross = np.asarray(cov_fn(spec, interior + delta, interior))
    return float(np.max(np.abs(cross / var_t)))


class AnalyticConditionalModel:
    """Conditional-moment model backed by a process's closed forms.

    Drop-in replacement for a fitted model in the path recursion: with the
    true moments the recursion samples the exact process law at the grid
    points.  Two-component predictors ``(x, t)`` look ahead by the fixed
    ``step``; three-component predictors carry the target time themselves.
    """

    def __init__(self, spec: GaussianProcessSpec, step: float | None = None,
                 predictor_dim: int = 2):
        if predictor_dim not in (2, 3):
            raise ValueError("predictor_dim must be 2 or 3")
        if predictor_dim == 2:
            if step is None or not step > 0:
                raise ValueError("two-component predictors need a positive step")
            step = float(step)
        self.spec = spec
        self.step = step
        self.predictor_dim = predictor_dim
        self.training_summary = None  # closed form: no training range

    def _split(self, z):
        q = np.atleast_2d(np.asarray(z, dtype=float))
        if q.shape[1] != self.predictor_dim:
            raise ValueError(
                f"predictor has {q.shape[1]} components, expected "
                f"{self.predictor_dim}"
            )
        x, t = q[:, 0], q[:, 1]
        s = t + self.step if self.predictor_dim == 2 else q[:, 2]
        return x, t, s

    def predict_mean(self, z):
        scalar = np.asarray(z).ndim == 1
        x, t, s = self._split(z)
        mean, _ = _conditional_moments_arr(self.spec, t, s, x)
        return float(mean[0]) if scalar else mean

    def predict_var(self, z):
        scalar = np.asarray(z).ndim == 1
        x, t, s = self._split(z)
        _, var = _conditional_moments_arr(self.spec, t, s, x)
        return float(var[0]) if scalar else var
