"""Command-line front end.

Subcommands: ``synth`` (generate snippet data), ``fit`` (train a
conditional model), ``reconstruct`` (simulate paths and percentile bands),
``evaluate`` (error study across sample sizes and noise levels),
``wasserstein`` (distribution distance), ``flag`` (classify an observation
against percentile bands).

Exit codes: 0 on success, 2 on argument errors, 1 on runtime errors.
Every command is deterministic given ``--seed``; numeric outputs are
byte-identical across reruns and across ``--threads`` settings.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .dataset import load_snippets, make_training_pairs
from .evaluate import (
    StudyConfig,
    run_study,
    wasserstein_empirical,
    wasserstein_gaussian,
    write_armse_csv,
    write_rmse_csv,
)
from .processes import DRIFTS, GaussianProcessSpec
from .reconstruct import (
    PercentileCurves,
    TimeGrid,
    flag_observation,
    percentile_curves,
    simulate_paths,
    write_paths_csv,
    write_percentiles_csv,
)
from .regression import BandwidthGrid, fit_local_linear, fit_ols, load_model, save_model
from .synth import synth_snippets, write_dataset_with_metadata


class _ArgumentError(Exception):
    """Bad flag values detected after parsing; exits with code 2."""


# Execution-only flags that do not affect the numbers; excluded from the
# header echo so outputs stay byte-identical across thread counts.
_ECHO_EXCLUDE = {"func", "command", "threads", "config"}


def _header(args: argparse.Namespace) -> str:
    parts = []
    for key in sorted(vars(args)):
        if key in _ECHO_EXCLUDE:
            continue
        value = getattr(args, key)
        parts.append(f"{key}={value!r}" if isinstance(value, float)
                     else f"{key}={value}")
    return f"# snipdyn {__version__} | {args.command} | " + " ".join(parts)


def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise _ArgumentError(f"{flag} expects comma-separated numbers, got {text!r}")


def _build_spec(args) -> GaussianProcessSpec:
    try:
        return GaussianProcessSpec(
            kind=args.process,
            sigma=args.sigma,
            theta=args.theta if args.process == "ou" else None,
            drift=args.g,
            x0=args.x0,
        )
    except ValueError as exc:
        raise _ArgumentError(str(exc))


def _check_unit_divisor(delta: float, flag: str = "--delta") -> None:
    k = round(1.0 / delta) if delta > 0 else 0
    if k < 1 or abs(k * delta - 1.0) > 1e-9:
        raise _ArgumentError(
            f"{flag}={delta:g} must divide the unit interval [0, 1] into a "
            f"whole number of steps (e.g. 0.05, 0.02, 0.1)"
        )


# -- subcommands -------------------------------------------------------------


def _cmd_synth(args) -> int:
    _check_unit_divisor(args.delta)
    spec = _build_spec(args)
    ds = synth_snippets(spec, args.n, args.delta, noise=args.noise, seed=args.seed)
    metadata = {
        "version": __version__,
        "process": args.process,
        "theta": args.theta,
        "sigma": args.sigma,
        "g": args.g,
        "x0": args.x0,
        "n": args.n,
        "delta": args.delta,
        "noise": args.noise,
        "seed": args.seed,
    }
    write_dataset_with_metadata(ds, args.out, metadata, comment=_header(args))
    print(f"wrote {ds.n_subjects} subjects to {args.out}")
    return 0


def _parse_cv_grid(text: str, z: np.ndarray) -> BandwidthGrid:
    """Either per-dimension absolute lists ('0.1,0.2;0.05,0.1') or a
    'lo:hi:count' rule relative to the per-dimension sample deviation."""
    if ";" in text:
        dims = tuple(tuple(_floats(part, "--cv-grid")) for part in text.split(";"))
        if len(dims) != z.shape[1]:
            raise _ArgumentError(
                f"--cv-grid lists {len(dims)} dimensions, data has {z.shape[1]}"
            )
        return BandwidthGrid(dims)
    try:
        lo, hi, count = text.split(":")
        return BandwidthGrid.default(z, n_candidates=int(count),
                                     span=(float(lo), float(hi)))
    except ValueError:
        raise _ArgumentError(
            f"--cv-grid expects 'lo:hi:count' or per-dimension lists joined "
            f"by ';', got {text!r}"
        )


def _cmd_fit(args) -> int:
    schema = {"subject_id": args.col_id, "time": args.col_time,
              "value": args.col_value}
    ds = load_snippets(args.data, schema=schema, normalize=not args.no_normalize,
                       delimiter=args.delimiter)
    pairs = make_training_pairs(ds, args.mode)
    print(f"n_pairs={len(pairs)}")
    if args.mode == "irregular":
        gaps = ds.time_map.scale * ds.consecutive_gaps()
        print(
            f"gaps: min={gaps.min():g} median={np.median(gaps):g} "
            f"max={gaps.max():g}"
        )

    if args.method == "ols":
        model = fit_ols(pairs)
    else:
        z = np.array([p.z for p in pairs])
        bandwidth = grid = None
        if args.bandwidth and args.cv_grid:
            raise _ArgumentError("pass --bandwidth or --cv-grid, not both")
        if args.bandwidth:
            bandwidth = _floats(args.bandwidth, "--bandwidth")
            if len(bandwidth) != z.shape[1]:
                raise _ArgumentError(
                    f"--bandwidth needs {z.shape[1]} components for "
                    f"{args.mode} mode, got {len(bandwidth)}"
                )
        elif args.cv_grid:
            grid = _parse_cv_grid(args.cv_grid, z)
        model = fit_local_linear(pairs, bandwidth=bandwidth, grid=grid)
        print(
            "bandwidth_mean=" + ",".join(repr(float(h)) for h in model.bandwidth_mean)
        )
        print(
            "bandwidth_var=" + ",".join(repr(float(h)) for h in model.bandwidth_var)
        )

    metadata = {
        "version": __version__,
        "command": _header(args),
        "time_offset": ds.time_map.offset,
        "time_scale": ds.time_map.scale,
        "spacing": ds.spacing,
        "mode": args.mode,
    }
    save_model(model, args.out, metadata=metadata)
    print(f"wrote model to {args.out}")
    return 0


def _cmd_reconstruct(args) -> int:
    model, meta = load_model(args.model)
    offset = float(meta.get("time_offset", 0.0))
    scale = float(meta.get("time_scale", 1.0))

    delta = args.delta
    if delta is None:
        spacing = meta.get("spacing")
        if spacing is None:
            raise _ArgumentError(
                "--delta is required (the model records no training spacing)"
            )
        delta = float(spacing) * scale
    if delta <= 0:
        raise _ArgumentError(f"--delta must be positive, got {delta:g}")

    percents = _floats(args.percentiles, "--percentiles")
    if any(not 0.0 < p < 100.0 for p in percents):
        raise _ArgumentError("--percentiles must lie strictly between 0 and 100")
    if args.paths < 1:
        raise _ArgumentError("--paths must be at least 1")

    grid = TimeGrid((args.t0 - offset) / scale, delta / scale, args.steps)
    ens = simulate_paths(model, grid, args.x0, m=args.paths, seed=args.seed)
    curves = percentile_curves(ens, [p / 100.0 for p in percents])
    user_times = offset + scale * grid.times

    header = _header(args)
    paths_file = f"{args.out_prefix}_paths.csv"
    bands_file = f"{args.out_prefix}_percentiles.csv"
    write_paths_csv(ens, paths_file, comment=header, times=user_times)
    write_percentiles_csv(curves, bands_file, comment=header, times=user_times)
    print(f"wrote {paths_file} and {bands_file}")
    return 0


def _cmd_evaluate(args) -> int:
    _check_unit_divisor(args.delta)
    spec = _build_spec(args)
    n_list = [int(v) for v in _floats(args.n_list, "--n-list")]
    noise_list = _floats(args.noise_list, "--noise-list")
    if not n_list or not noise_list:
        raise _ArgumentError("--n-list and --noise-list must be nonempty")
    method = {"ols": "ols", "loclin": "local_linear"}[args.method]
    bandwidth = (
        tuple(_floats(args.bandwidth, "--bandwidth")) if args.bandwidth else None
    )
    try:
        cfg = StudyConfig(
            spec=spec,
            n_list=tuple(n_list),
            noise_list=tuple(noise_list),
            reps=args.reps,
            paths=args.paths,
            delta=args.delta,
            method=method,
            seed=args.seed,
            bandwidth=bandwidth,
        )
    except ValueError as exc:
        raise _ArgumentError(str(exc))

    result = run_study(cfg, threads=args.threads)
    header = _header(args)
    armse_file = f"{args.out_prefix}_armse.csv"
    rmse_file = f"{args.out_prefix}_rmse.csv"
    write_armse_csv(result, armse_file, comment=header)
    write_rmse_csv(result, rmse_file, comment=header)

    labels = " ".join(f"nu={v:g}" for v in noise_list)
    print(f"n {labels}")
    for i, n in enumerate(n_list):
        cells = " ".join(f"{v:.4f}" for v in result.armse[i])
        print(f"{n} {cells}")
    print(f"wrote {armse_file} and {rmse_file}")
    return 0


def _cmd_wasserstein(args) -> int:
    if (args.gaussian is None) == (args.samples is None):
        raise _ArgumentError("pass exactly one of --gaussian or --samples")
    if args.gaussian:
        params = _floats(args.gaussian, "--gaussian")
        if len(params) != 4:
            raise _ArgumentError("--gaussian expects m1,s1,m2,s2")
        try:
            d = wasserstein_gaussian(*params)
        except ValueError as exc:
            raise _ArgumentError(str(exc))
    else:
        a = np.loadtxt(args.samples[0], comments="#", ndmin=1)
        b = np.loadtxt(args.samples[1], comments="#", ndmin=1)
        d = wasserstein_empirical(a, b)
    print(repr(float(d)))
    return 0


def _read_percentiles_csv(path) -> PercentileCurves:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("prob,"):
                continue
            p, t, v = line.split(",")
            rows.append((float(p), float(t), float(v)))
    if not rows:
        raise ValueError(f"{path}: no percentile rows")
    probs = sorted({p for p, _, _ in rows})
    times = sorted({t for _, t, _ in rows})
    values = np.full((len(probs), len(times)), np.nan)
    for p, t, v in rows:
        values[probs.index(p), times.index(t)] = v
    if np.any(np.isnan(values)):
        raise ValueError(f"{path}: incomplete percentile grid")
    return PercentileCurves(tuple(probs), np.array(times), values)


def _cmd_flag(args) -> int:
    curves = _read_percentiles_csv(args.percentiles)
    print(flag_observation(curves, args.time, args.value))
    return 0


# -- parser ------------------------------------------------------------------


def _add_process_flags(sub) -> None:
    sub.add_argument("--process", required=True, choices=["brownian", "ho_lee", "ou"],
                     help="reference process kind")
    sub.add_argument("--theta", type=float, default=None,
                     help="mean-reversion rate (ou only)")
    sub.add_argument("--sigma", type=float, default=1.0, help="diffusion scale")
    sub.add_argument("--g", default="cos",
                     help=f"drift name for ho_lee (built-ins: {sorted(DRIFTS)})")
    sub.add_argument("--x0", type=float, default=0.0, help="start value")


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="snipdyn",
        description="Reconstruct process dynamics from longitudinal snippets.",
    )
    parser.add_argument("--version", action="version",
                        version=f"snipdyn {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    subs = {}

    synth = commands.add_parser("synth", help="generate synthetic snippets")
    _add_process_flags(synth)
    synth.add_argument("--n", type=int, required=True, help="number of subjects")
    synth.add_argument("--delta", type=float, required=True,
                       help="window spacing; must divide the unit interval")
    synth.add_argument("--noise", type=float, default=0.0,
                       help="measurement noise standard deviation")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.set_defaults(func=_cmd_synth)
    subs["synth"] = synth

    fit = commands.add_parser("fit", help="fit a conditional model")
    fit.add_argument("--data", required=True, help="snippet CSV path")
    fit.add_argument("--method", choices=["ols", "loclin"], default="ols")
    fit.add_argument("--bandwidth", default=None,
                     help="explicit bandwidth components, e.g. 20,0.5 (loclin)")
    fit.add_argument("--cv-grid", default=None,
                     help="bandwidth search grid: 'lo:hi:count' relative to the "
                          "per-dimension deviation, or absolute lists joined by ';'")
    fit.add_argument("--mode", choices=["regular", "irregular"], default="regular")
    fit.add_argument("--col-id", default="subject_id", help="subject column name")
    fit.add_argument("--col-time", default="time", help="time column name")
    fit.add_argument("--col-value", default="value", help="value column name")
    fit.add_argument("--delimiter", default=",")
    fit.add_argument("--no-normalize", action="store_true",
                     help="keep times as-is instead of rescaling to [0, 1]")
    fit.add_argument("--out", required=True, help="output model JSON path")
    fit.set_defaults(func=_cmd_fit)
    subs["fit"] = fit

    rec = commands.add_parser("reconstruct",
                              help="simulate paths and percentile bands")
    rec.add_argument("--model", required=True, help="model JSON path")
    rec.add_argument("--x0", type=float, required=True, help="starting value")
    rec.add_argument("--t0", type=float, required=True,
                     help="starting time (original units)")
    rec.add_argument("--delta", type=float, default=None,
                     help="time spacing (defaults to the training spacing)")
    rec.add_argument("--steps", type=int, required=True)
    rec.add_argument("--paths", type=int, default=100,
                     help="number of simulated paths")
    rec.add_argument("--percentiles", default="5,50,95",
                     help="percent levels for the band curves")
    rec.add_argument("--seed", type=int, default=0)
    rec.add_argument("--out-prefix", required=True)
    rec.set_defaults(func=_cmd_reconstruct)
    subs["reconstruct"] = rec

    ev = commands.add_parser("evaluate",
                             help="coupled error study over (n, noise) cells")
    _add_process_flags(ev)
    ev.add_argument("--n-list", required=True, help="sample sizes, e.g. 100,1000")
    ev.add_argument("--noise-list", required=True, help="noise levels, e.g. 0,0.1")
    ev.add_argument("--reps", type=int, default=100,
                    help="repetitions per study cell")
    ev.add_argument("--paths", type=int, default=1000,
                    help="simulated paths per repetition")
    ev.add_argument("--delta", type=float, default=0.05)
    ev.add_argument("--method", choices=["ols", "loclin"], default="ols")
    ev.add_argument("--bandwidth", default=None,
                    help="explicit bandwidth for loclin, e.g. 0.5,0.1")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--threads", type=int, default=1,
                    help="worker processes; results do not depend on this")
    ev.add_argument("--out-prefix", required=True)
    ev.set_defaults(func=_cmd_evaluate)
    subs["evaluate"] = ev

    was = commands.add_parser("wasserstein",
                              help="distance between two distributions")
    was.add_argument("--gaussian", default=None, help="m1,s1,m2,s2")
    was.add_argument("--samples", nargs=2, default=None,
                     metavar=("FILE1", "FILE2"),
                     help="two single-column sample files of equal length")
    was.set_defaults(func=_cmd_wasserstein)
    subs["wasserstein"] = was

    flag = commands.add_parser("flag",
                               help="classify an observation against bands")
    flag.add_argument("--percentiles", required=True,
                      help="percentile CSV written by reconstruct")
    flag.add_argument("--time", type=float, required=True)
    flag.add_argument("--value", type=float, required=True)
    flag.set_defaults(func=_cmd_flag)
    subs["flag"] = flag

    for sub in subs.values():
        sub.add_argument("--config", default=None,
                         help="JSON file with per-command default sections; "
                              "explicit flags override it")
    return parser, subs


def main(argv=None) -> int:
    parser, subs = _build_parser()
    args = parser.parse_args(argv)

    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read --config: {exc}", file=sys.stderr)
            return 2
        section = config.get(args.command, {})
        known = set(vars(args))
        unknown = set(section) - known
        if unknown:
            print(
                f"error: --config has unknown keys for {args.command}: "
                f"{sorted(unknown)}",
                file=sys.stderr,
            )
            return 2
        subs[args.command].set_defaults(**section)
        args = parser.parse_args(argv)

    try:
        return args.func(args)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures: data, fitting, simulation
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
