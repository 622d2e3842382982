"""Conditional mean and variance regression on training pairs.

Two families are supported: multiple linear regression with an intercept,
and local linear smoothing with a product Gaussian kernel (one bandwidth
per predictor dimension, leave-one-out cross-validation for selection).
The conditional variance is estimated by regressing the squared residuals
of the mean fit on the same predictors; negative variance predictions are
clamped to zero.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .dataset import InsufficientDataError, TrainingPair

#: Ridge jitter added to the local weighted normal equations so boundary
#: queries with near-degenerate weight mass stay solvable.
RIDGE = 1e-10

#: A bandwidth is infeasible when the leave-one-out kernel mass at some
#: training point falls below this threshold.  Kept well above the ridge
#: jitter so feasible fits are never ridge-dominated.
MIN_KERNEL_MASS = 1e-4

MODEL_FORMAT_VERSION = 1

_COLUMN_LABELS = {2: ("intercept", "x", "t"), 3: ("intercept", "x", "t", "s")}


class SingularDesignError(ValueError):
    """The regression design matrix is rank deficient."""


class BandwidthGridError(ValueError):
    """No bandwidth candidate in the grid is feasible."""


@dataclass(frozen=True)
class BandwidthGrid:
    """Per-dimension bandwidth candidates for cross-validated selection."""

    per_dim: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.per_dim or any(len(dim) == 0 for dim in self.per_dim):
            raise ValueError("bandwidth grid must be nonempty in every dimension")
        if any(h <= 0 for dim in self.per_dim for h in dim):
            raise ValueError("bandwidth candidates must be positive")
        object.__setattr__(
            self,
            "per_dim",
            tuple(tuple(float(h) for h in dim) for dim in self.per_dim),
        )

    @classmethod
    def default(cls, z: np.ndarray, n_candidates: int = 8,
                span: tuple[float, float] = (0.05, 1.0)) -> "BandwidthGrid":
        """Scale-aware default: log-spaced candidates per dimension spanning
        ``span`` times the per-dimension sample standard deviation."""
        z = np.asarray(z, dtype=float)
        dims = []
        for d in range(z.shape[1]):
            sd = float(np.std(z[:, d], ddof=1)) if len(z) > 1 else 0.0
            if sd <= 0:
                sd = 1.0  # constant predictor: any bandwidth is equivalent
            dims.append(tuple(np.geomspace(span[0] * sd, span[1] * sd, n_candidates)))
        return cls(tuple(dims))


@dataclass
class ConditionalModel:
    """Fitted conditional mean m(z) and conditional variance v2(z).

    For the ``ols`` method the components are coefficient vectors on the
    design ``(1, z)``; for ``local_linear`` the training sample is retained
    together with one bandwidth vector for the mean and one for the
    variance.  Models are immutable in practice (arrays are read-only) and
    predictions are reentrant.
    """

    method: str
    predictor_dim: int
    training_summary: dict
    mean_coef: np.ndarray | None = None
    var_coef: np.ndarray | None = None
    train_z: np.ndarray | None = None
    train_y: np.ndarray | None = None
    train_resid_sq: np.ndarray | None = None
    bandwidth_mean: np.ndarray | None = None
    bandwidth_var: np.ndarray | None = None

    def __post_init__(self):
        for name in ("mean_coef", "var_coef", "train_z", "train_y",
                     "train_resid_sq", "bandwidth_mean", "bandwidth_var"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                arr.setflags(write=False)
                setattr(self, name, arr)

    # -- prediction ------------------------------------------------------

    def _queries(self, z) -> tuple[np.ndarray, bool]:
        q = np.asarray(z, dtype=float)
        scalar = q.ndim == 1
        q = np.atleast_2d(q)
        if q.shape[1] != self.predictor_dim:
            raise ValueError(
                f"predictor has {q.shape[1]} components, model expects "
                f"{self.predictor_dim}"
            )
        if not np.all(np.isfinite(q)):
            raise ValueError("non-finite predictor")
        return q, scalar

    def predict_mean(self, z):
        """Conditional mean at ``z`` (a single predictor or a stack)."""
        q, scalar = self._queries(z)
        if self.method == "ols":
            out = _design(q) @ self.mean_coef
        else:
            out = _local_linear_predict(self.train_z, self.train_y,
                                        self.bandwidth_mean, q)
        return float(out[0]) if scalar else out

    def predict_var(self, z):
        """Conditional variance at ``z``, clamped at zero."""
        q, scalar = self._queries(z)
        if self.method == "ols":
            out = _design(q) @ self.var_coef
        else:
            out = _local_linear_predict(self.train_z, self.train_resid_sq,
                                        self.bandwidth_var, q)
        out = np.maximum(out, 0.0)
        return float(out[0]) if scalar else out

    def in_training_range(self, z):
        """Whether queries fall inside the per-dimension training ranges.

        Extrapolation is allowed; this is the diagnostic signal for it.
        """
        q, scalar = self._queries(z)
        lo = np.asarray(self.training_summary["z_min"])
        hi = np.asarray(self.training_summary["z_max"])
        ok = np.all((q >= lo) & (q <= hi), axis=1)
        return bool(ok[0]) if scalar else ok

    @property
    def time_range(self) -> tuple[float, float]:
        """Training range of the start-time predictor."""
        return (
            float(self.training_summary["z_min"][1]),
            float(self.training_summary["z_max"][1]),
        )


def _design(z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(z)), z])


def _pairs_to_arrays(pairs: Sequence[TrainingPair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise InsufficientDataError("no training pairs")
    dim = len(pairs[0].z)
    if any(len(p.z) != dim for p in pairs):
        raise ValueError("training pairs mix predictor dimensions")
    z = np.array([p.z for p in pairs], dtype=float)
    y = np.array([p.y for p in pairs], dtype=float)
    return z, y


def _summary(z: np.ndarray) -> dict:
    return {
        "n_pairs": int(len(z)),
        "z_min": [float(v) for v in z.min(axis=0)],
        "z_max": [float(v) for v in z.max(axis=0)],
    }


def _check_full_rank(x: np.ndarray, dim: int) -> None:
    # QR with column pivoting: near-zero diagonal entries of R identify the
    # dependent columns, which the error names.
    r, perm = linalg.qr(x, mode="r", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(x.shape) * np.finfo(float).eps
    bad = [perm[i] for i in range(len(diag)) if diag[i] <= tol]
    if len(diag) < x.shape[1]:
        bad += list(perm[len(diag):])
    if bad:
        labels = _COLUMN_LABELS[dim]
        names = ", ".join(labels[j] for j in sorted(bad))
        raise SingularDesignError(
            f"design matrix is rank deficient; collinear column(s): {names}"
        )


def fit_ols(pairs: Sequence[TrainingPair]) -> ConditionalModel:
    """Least-squares fit of the mean on ``(1, z)`` and of the squared
    residuals on the same design.

    Requires at least ``dim + 2`` pairs and a full-rank design.
    """
    z, y = _pairs_to_arrays(pairs)
    dim = z.shape[1]
    if len(z) < dim + 2:
        raise InsufficientDataError(
            f"need at least {dim + 2} pairs for a {dim}-predictor fit, "
            f"got {len(z)}"
        )
    x = _design(z)
    _check_full_rank(x, dim)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid_sq = (y - x @ beta) ** 2
    gamma, *_ = np.linalg.lstsq(x, resid_sq, rcond=None)
    return ConditionalModel(
        method="ols",
        predictor_dim=dim,
        training_summary=_summary(z),
        mean_coef=beta,
        var_coef=gamma,
    )


# -- local linear smoothing ------------------------------------------------


def _weights(diff_scaled: np.ndarray) -> np.ndarray:
    # Product Gaussian kernel, renormalized so the largest weight per query
    # is one: the weighted least-squares solution is invariant to positive
    # rescaling, and this keeps far-field queries from underflowing to an
    # all-zero weight vector.
    logw = -0.5 * np.einsum("qnd,qnd->qn", diff_scaled, diff_scaled)
    return np.exp(logw - logw.max(axis=1, keepdims=True))


def _wls_intercepts(w: np.ndarray, diff: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Solve, per query, the kernel-weighted least-squares plane on the
    # centered design [1, Z - z] and return its intercept.
    nq, _, d = diff.shape
    s0 = w.sum(axis=1)
    s1 = np.einsum("qn,qnd->qd", w, diff)
    s2 = np.einsum("qn,qnd,qne->qde", w, diff, diff)
    t0 = w @ y
    t1 = np.einsum("qn,n,qnd->qd", w, y, diff)
    a = np.empty((nq, d + 1, d + 1))
    a[:, 0, 0] = s0
    a[:, 0, 1:] = s1
    a[:, 1:, 0] = s1
    a[:, 1:, 1:] = s2
    # jitter only the slope block: the intercept stays unpenalized, so a
    # query with degenerate neighbor geometry falls back to the weighted
    # mean instead of shrinking toward zero
    jitter = RIDGE * np.eye(d + 1)
    jitter[0, 0] = 0.0
    a += jitter
    b = np.empty((nq, d + 1, 1))
    b[:, 0, 0] = t0
    b[:, 1:, 0] = t1
    return np.linalg.solve(a, b)[:, 0, 0]


def _chunks(n_queries: int, n_train: int) -> int:
    return max(1, int(2_000_000 // max(n_train, 1)))


def _local_linear_predict(zt: np.ndarray, yt: np.ndarray, h: np.ndarray,
                          zq: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    out = np.empty(len(zq))
    step = _chunks(len(zq), len(zt))
    for start in range(0, len(zq), step):
        q = zq[start:start + step]
        diff = zt[None, :, :] - q[:, None, :]
        w = _weights(diff / h)
        out[start:start + len(q)] = _wls_intercepts(w, diff, yt)
    return out


def _loo_predictions(zt: np.ndarray, yt: np.ndarray,
                     h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out predictions at every training point, plus the
    leave-one-out kernel mass there.

    The held-out point only contributes to the zeroth-order moments (its
    centered regressor is zero), so excluding it amounts to subtracting
    the self weight from those moments.
    """
    h = np.asarray(h, dtype=float)
    n = len(zt)
    preds = np.empty(n)
    masses = np.empty(n)
    step = _chunks(n, n)
    dim = zt.shape[1]
    for start in range(0, n, step):
        q = zt[start:start + step]
        nq = len(q)
        diff = zt[None, :, :] - q[:, None, :]
        w = _weights(diff / h)
        rows = np.arange(nq)
        w[rows, start + rows] = 0.0
        chunk_mass = w.sum(axis=1)
        masses[start:start + nq] = chunk_mass
        # points left without kernel mass make the system singular; skip
        # them, the caller treats the bandwidth as infeasible
        ok = chunk_mass >= MIN_KERNEL_MASS
        chunk_preds = np.full(nq, np.nan)
        if np.any(ok):
            chunk_preds[ok] = _wls_intercepts(w[ok], diff[ok], yt)
        preds[start:start + nq] = chunk_preds
    return preds, masses


def _select_bandwidth(zt: np.ndarray, yt: np.ndarray,
                      grid: BandwidthGrid) -> tuple[np.ndarray, float]:
    if len(grid.per_dim) != zt.shape[1]:
        raise ValueError(
            f"grid has {len(grid.per_dim)} dimensions, predictors have "
            f"{zt.shape[1]}"
        )
    best_h, best_key = None, None
    for combo in itertools.product(*grid.per_dim):
        h = np.array(combo)
        preds, masses = _loo_predictions(zt, yt, h)
        if masses.min() < MIN_KERNEL_MASS:
            continue  # infeasible: some training point sees no neighbors
        score = float(np.mean((yt - preds) ** 2))
        key = (score, -float(np.prod(h)))  # ties go to the larger bandwidth
        if best_key is None or key < best_key:
            best_key, best_h = key, h
    if best_h is None:
        raise BandwidthGridError(
            "every bandwidth candidate leaves some training point without "
            "kernel mass; enlarge the grid"
        )
    return best_h, best_key[0]


def fit_local_linear(
    pairs: Sequence[TrainingPair],
    bandwidth: Sequence[float] | None = None,
    grid: BandwidthGrid | None = None,
) -> ConditionalModel:
    """Local linear fit of the mean, then of the squared residuals.

    Pass an explicit ``bandwidth`` vector (one entry per predictor
    dimension, used for both components) or a ``grid`` for leave-one-out
    selection, performed independently for the mean and the variance.
    With neither, a scale-aware default grid is searched.
    """
    if bandwidth is not None and grid is not None:
        raise ValueError("pass either an explicit bandwidth or a grid, not both")
    z, y = _pairs_to_arrays(pairs)
    dim = z.shape[1]
    if len(z) < 10:
        raise InsufficientDataError(
            f"local linear fit needs at least 10 pairs, got {len(z)}"
        )

    if bandwidth is not None:
        h_mean = np.asarray(bandwidth, dtype=float)
        if h_mean.shape != (dim,):
            raise ValueError(
                f"bandwidth must have {dim} components, got {h_mean.shape}"
            )
        if np.any(h_mean <= 0):
            raise ValueError("bandwidth components must be positive")
        h_var = h_mean.copy()
    else:
        if grid is None:
            grid = BandwidthGrid.default(z)
        h_mean, _ = _select_bandwidth(z, y, grid)

    resid_sq = (y - _local_linear_predict(z, y, h_mean, z)) ** 2
    if bandwidth is None:
        h_var, _ = _select_bandwidth(z, resid_sq, grid)

    return ConditionalModel(
        method="local_linear",
        predictor_dim=dim,
        training_summary=_summary(z),
        train_z=z,
        train_y=y,
        train_resid_sq=resid_sq,
        bandwidth_mean=h_mean,
        bandwidth_var=h_var,
    )


def loocv_score(pairs: Sequence[TrainingPair], method: str,
                bandwidth: Sequence[float] | None = None) -> float:
    """Mean squared leave-one-out prediction error of the mean fit.

    Returns ``inf`` for an infeasible local-linear bandwidth (some training
    point left without kernel mass).
    """
    z, y = _pairs_to_arrays(pairs)
    if method == "ols":
        x = _design(z)
        _check_full_rank(x, z.shape[1])
        beta, *_ = np.linalg.lstsq(x, y, rcond=None)
        q, _ = np.linalg.qr(x)
        hat = np.einsum("ij,ij->i", q, q)
        denom = 1.0 - hat
        if np.any(denom <= 0):
            return math.inf
        return float(np.mean(((y - x @ beta) / denom) ** 2))
    if method == "local_linear":
        if bandwidth is None:
            raise ValueError("local_linear scoring needs a bandwidth")
        h = np.asarray(bandwidth, dtype=float)
        preds, masses = _loo_predictions(z, y, h)
        if masses.min() < MIN_KERNEL_MASS:
            return math.inf
        return float(np.mean((y - preds) ** 2))
    raise ValueError(f"unknown method {method!r}")


# -- serialization -----------------------------------------------------------


def save_model(model: ConditionalModel, path, metadata: dict | None = None) -> None:
    """Write a model to a versioned JSON file."""
    payload: dict = {
        "format_version": MODEL_FORMAT_VERSION,
        "method": model.method,
        "predictor_dim": model.predictor_dim,
        "training_summary": model.training_summary,
        "metadata": metadata or {},
    }
    if model.method == "ols":
        payload["mean_coef"] = [float(v) for v in model.mean_coef]
        payload["var_coef"] = [float(v) for v in model.var_coef]
    else:
        payload["train_z"] = [[float(v) for v in row] for row in model.train_z]
        payload["train_y"] = [float(v) for v in model.train_y]
        payload["train_resid_sq"] = [float(v) for v in model.train_resid_sq]
        payload["bandwidth_mean"] = [float(v) for v in model.bandwidth_mean]
        payload["bandwidth_var"] = [float(v) for v in model.bandwidth_var]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_model(path) -> tuple[ConditionalModel, dict]:
    """Read a model file; returns the model and its metadata dict."""
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(
            f"unsupported model format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    common = dict(
        method=payload["method"],
        predictor_dim=int(payload["predictor_dim"]),
        training_summary=payload["training_summary"],
    )
    if payload["method"] == "ols":
        model = ConditionalModel(
            **common,
            mean_coef=np.array(payload["mean_coef"]),
            var_coef=np.array(payload["var_coef"]),
        )
    else:
        model = ConditionalModel(
            **common,
            train_z=np.array(payload["train_z"]),
            train_y=np.array(payload["train_y"]),
            train_resid_sq=np.array(payload["train_resid_sq"]),
            bandwidth_mean=np.array(payload["bandwidth_mean"]),
            bandwidth_var=np.array(payload["bandwidth_var"]),
        )
    return model, payload.get("metadata", {})
