"""Snippet datasets: short per-subject observation records, file I/O, and
conversion into one-step regression training pairs.

A snippet is a subject observed on a narrow time window relative to the
study domain.  Subjects with at least two measurements are usable for
model training; single-measurement subjects are kept for validation and
overlay only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

#: Consecutive within-subject gaps must agree to this tolerance (on the
#: stored time scale) for a dataset to count as regularly spaced.
GAP_TOLERANCE = 1e-9


class SchemaError(ValueError):
    """A required column is missing from the input file."""


class ParseError(ValueError):
    """A cell could not be parsed as a number."""


class ValidationError(ValueError):
    """The data violate the snippet structure."""


class ModeMismatchError(ValueError):
    """Pairing mode incompatible with the dataset design."""


class InsufficientDataError(ValueError):
    """Not enough usable observations for the requested operation."""


@dataclass(frozen=True)
class TimeMap:
    """Invertible affine map between stored and original time units.

    ``original = offset + scale * stored``.  The identity map means times
    are stored exactly as read.
    """

    offset: float = 0.0
    scale: float = 1.0

    def to_original(self, t):
        return self.offset + self.scale * np.asarray(t, dtype=float)

    def to_stored(self, t):
        return (np.asarray(t, dtype=float) - self.offset) / self.scale

    @property
    def is_identity(self) -> bool:
        return self.offset == 0.0 and self.scale == 1.0


@dataclass(frozen=True)
class SnippetRecord:
    """One subject's measurements: times strictly increasing, values finite.

    Records with two or more observations are trainable; records with a
    single observation are validation-only.
    """

    subject_id: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float)).copy()
        v = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        if t.ndim != 1 or t.shape != v.shape:
            raise ValidationError(
                f"subject {self.subject_id!r}: times and values must be "
                f"1-d arrays of equal length"
            )
        if t.size == 0:
            raise ValidationError(
                f"subject {self.subject_id!r}: at least one observation required"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValidationError(
                f"subject {self.subject_id!r}: non-finite time or value"
            )
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError(
                f"subject {self.subject_id!r}: observation times must be "
                f"strictly increasing with no duplicates"
            )
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def n_obs(self) -> int:
        return int(self.times.size)

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def trainable(self) -> bool:
        return self.n_obs >= 2


@dataclass(frozen=True)
class TrainingPair:
    """One regression observation built from two consecutive measurements.

    ``z`` is ``(value, time)`` for regular designs or
    ``(value, start_time, end_time)`` for irregular designs; ``y`` is the
    value at the later time.
    """

    z: tuple[float, ...]
    y: float
    subject_id: str

    def __post_init__(self):
        if len(self.z) not in (2, 3):
            raise ValidationError("predictor must have 2 or 3 components")
        if not all(np.isfinite(self.z)) or not np.isfinite(self.y):
            raise ValidationError("non-finite training pair")


@dataclass(frozen=True)
class SnippetDataset:
    """Cohort of snippet records plus design metadata.

    ``span_bound`` is the largest within-subject time span.  ``regular``
    is true when every consecutive within-subject gap equals the common
    spacing (within :data:`GAP_TOLERANCE`); ``spacing`` then holds that
    gap.  Immutable after construction and safe to share across threads.
    """

    records: tuple[SnippetRecord, ...]
    domain: tuple[float, float]
    span_bound: float
    regular: bool
    spacing: float | None
    time_map: TimeMap = field(default_factory=TimeMap)

    @classmethod
    def from_records(
        cls,
        records: Sequence[SnippetRecord],
        normalize: bool = False,
        domain: tuple[float, float] | None = None,
    ) -> "SnippetDataset":
        """Assemble a dataset, optionally rescaling times to [0, 1].

        When ``normalize`` is true, observation times are affinely mapped
        onto [0, 1] and the inverse map is recorded so that original units
        remain recoverable.  ``domain`` overrides the observed time range
        (original units); it must contain every observation.
        """
        records = tuple(records)
        if not records:
            raise ValidationError("dataset needs at least one record")
        lo = min(float(r.times[0]) for r in records)
        hi = max(float(r.times[-1]) for r in records)
        if domain is not None:
            a, b = float(domain[0]), float(domain[1])
            if lo < a - 1e-12 or hi > b + 1e-12:
                raise ValidationError(
                    f"observations in [{lo}, {hi}] exceed domain ({a}, {b})"
                )
        else:
            a, b = lo, hi
        if not a < b:
            raise ValidationError("dataset time range is degenerate (a == b)")

        time_map = TimeMap()
        if normalize:
            time_map = TimeMap(offset=a, scale=b - a)
            records = tuple(
                SnippetRecord(r.subject_id, time_map.to_stored(r.times), r.values)
                for r in records
            )
            a, b = 0.0, 1.0

        span_bound = max(r.span for r in records)
        gaps = np.concatenate(
            [np.diff(r.times) for r in records if r.n_obs >= 2] or [np.empty(0)]
        )
        regular = gaps.size > 0 and bool(
            np.max(np.abs(gaps - gaps[0])) <= GAP_TOLERANCE
        )
        spacing = float(gaps.mean()) if regular else None
        return cls(records, (a, b), float(span_bound), regular, spacing, time_map)

    @property
    def n_subjects(self) -> int:
        return len(self.records)

    def trainable_records(self) -> tuple[SnippetRecord, ...]:
        return tuple(r for r in self.records if r.trainable)

    def validation_only_records(self) -> tuple[SnippetRecord, ...]:
        return tuple(r for r in self.records if not r.trainable)

    def consecutive_gaps(self) -> np.ndarray:
        """All consecutive within-subject gaps (stored time scale).

        Irregular designs are accepted with any positive gaps; this is the
        empirical gap distribution to inspect instead of filtering.
        """
        parts = [np.diff(r.times) for r in self.records if r.n_obs >= 2]
        return np.concatenate(parts) if parts else np.empty(0)


_DEFAULT_COLUMNS = {"subject_id": "subject_id", "time": "time", "value": "value"}


def load_snippets(
    path,
    schema: Mapping[str, str] | None = None,
    normalize: bool = False,
    delimiter: str = ",",
) -> SnippetDataset:
    """Read a delimiter-separated snippet file into a dataset.

    The file needs a header row; lines starting with ``#`` are ignored.
    ``schema`` maps the logical names ``subject_id``/``time``/``value`` to
    actual column names.  One record is built per distinct subject, with
    observations sorted by time.

    Raises
    ------
    SchemaError
        If a required column is missing.
    ParseError
        If a time or value cell is not numeric (the message carries the
        data row index).
    ValidationError
        If a subject has duplicate observation times.
    """
    columns = dict(_DEFAULT_COLUMNS)
    if schema:
        unknown = set(schema) - set(columns)
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        columns.update(schema)

    with open(path, "r", newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines, delimiter=delimiter)
    try:
        header = [cell.strip() for cell in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None

    idx = {}
    for logical, actual in columns.items():
        if actual not in header:
            raise SchemaError(f"{path}: missing column {actual!r}")
        idx[logical] = header.index(actual)

    by_subject: dict[str, list[tuple[float, float]]] = {}
    for row_no, row in enumerate(reader, start=1):
        sid = row[idx["subject_id"]].strip()
        try:
            t = float(row[idx["time"]])
            v = float(row[idx["value"]])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: row {row_no}: {exc}") from None
        by_subject.setdefault(sid, []).append((t, v))

    records = []
    for sid, obs in by_subject.items():
        obs.sort(key=lambda tv: tv[0])
        times = np.array([t for t, _ in obs])
        if times.size > 1 and np.any(np.diff(times) == 0):
            dup = times[np.flatnonzero(np.diff(times) == 0)[0]]
            raise ValidationError(
                f"{path}: duplicate time {dup!r} for subject {sid!r}"
            )
        records.append(SnippetRecord(sid, times, np.array([v for _, v in obs])))
    return SnippetDataset.from_records(records, normalize=normalize)


def save_snippets(ds: SnippetDataset, path, comment: str | None = None) -> None:
    """Write a dataset as CSV in its original time units.

    Round trip: saving and re-loading (with the same ``normalize`` choice)
    reproduces the records to within float round-off.
    """
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(line if line.startswith("#") else f"# {line}")
                fh.write("\n")
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "time", "value"])
        for rec in ds.records:
            for t, v in zip(ds.time_map.to_original(rec.times), rec.values):
                writer.writerow([rec.subject_id, repr(float(t)), repr(float(v))])


def make_training_pairs(ds: SnippetDataset, mode: str = "regular") -> list[TrainingPair]:
    """Turn every pair of consecutive measurements into a training pair.

    Each record with ``N`` observations contributes exactly ``N - 1``
    pairs.  Regular mode emits two-component predictors ``(value, time)``
    and requires a regularly spaced dataset; irregular mode carries both
    endpoint times, ``(value, start_time, end_time)``.
    """
    if mode not in ("regular", "irregular"):
        raise ValueError(f"mode must be 'regular' or 'irregular', got {mode!r}")
    trainable = ds.trainable_records()
    if not trainable:
        raise InsufficientDataError(
            "no subject has two or more measurements; cannot build training pairs"
        )
    if mode == "regular" and not ds.regular:
        raise ModeMismatchError(
            "regular pairing requested but within-subject gaps are not "
            "constant; use mode='irregular'"
        )
    pairs = []
    for rec in trainable:
        for j in range(rec.n_obs - 1):
            x, t = float(rec.values[j]), float(rec.times[j])
            y, s = float(rec.values[j + 1]), float(rec.times[j + 1])
            z = (x, t) if mode == "regular" else (x, t, s)
            pairs.append(TrainingPair(z, y, rec.subject_id))
    return pairs
