"""Synthetic snippet generation from a reference process.

Each subject gets one full exact path on the unit-interval grid, from
which a single random two-observation window is kept and optionally
contaminated with Gaussian measurement noise.
"""

from __future__ import annotations

import json

import numpy as np

from . import rng
from .dataset import SnippetDataset, SnippetRecord, save_snippets
from .processes import GaussianProcessSpec, exact_simulate
from .reconstruct import NormalDraws, TimeGrid

# Substream namespaces relative to the caller's seed: path noise, window
# starts, measurement noise.  Fixed so parallel generation equals serial.
_PATHS, _WINDOWS, _NOISE = 0, 1, 2


def synth_snippets(
    spec: GaussianProcessSpec,
    n: int,
    delta: float,
    noise: float = 0.0,
    seed: rng.Seed = 0,
) -> SnippetDataset:
    """Generate ``n`` two-observation snippets with window spacing ``delta``.

    The grid is ``t_k = k * delta`` with ``1 / delta`` steps (``delta`` must
    divide the unit interval).  Subject ``i`` keeps the window starting at a
    uniformly chosen grid point below 1, and both measurements receive
    independent N(0, noise^2) errors.  The same seed yields the same
    underlying paths and windows at every noise level.
    """
    if n < 1:
        raise ValueError("need at least one subject")
    if noise < 0:
        raise ValueError("noise standard deviation must be nonnegative")
    k = round(1.0 / delta) if delta > 0 else 0
    if k < 1 or abs(k * delta - 1.0) > 1e-9:
        raise ValueError(
            f"delta={delta} must divide the unit interval into a whole "
            f"number of steps"
        )

    grid = TimeGrid(0.0, delta, k)
    draws = NormalDraws.generate(rng.derive(seed, _PATHS), n, k)
    ens = exact_simulate(spec, grid, draws=draws)
    starts = rng.generator(seed, _WINDOWS).integers(0, k, size=n)
    eps = noise * rng.generator(seed, _NOISE).standard_normal((n, 2))

    times = grid.times
    width = max(6, len(str(n - 1)))
    records = []
    for i in range(n):
        j = int(starts[i])
        records.append(
            SnippetRecord(
                f"s{i:0{width}d}",
                np.array([times[j], times[j + 1]]),
                np.array([ens.paths[i, j] + eps[i, 0],
                          ens.paths[i, j + 1] + eps[i, 1]]),
            )
        )
    return SnippetDataset.from_records(records, domain=(0.0, 1.0))


def write_dataset_with_metadata(ds: SnippetDataset, path, metadata: dict,
                                comment: str | None = None) -> None:
    """Write the snippet CSV plus a ``<path>.meta.json`` provenance sidecar."""
    save_snippets(ds, path, comment=comment)
    with open(f"{path}.meta.json", "w") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
