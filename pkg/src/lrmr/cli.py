"""Command line front end for the benchmark figures.

Usage:
    lrmr-bench <figure> [--config FILE] [overrides...]

where <figure> is one of fig-optimal-d, fig-observations, fig-coherence,
fig-benchmark, fig-rank-mode.  Settings come from an optional flat key=value
config file; command line flags win over the file.  The output directory is
resolved as --out, then $LRMR_OUT_DIR, then the config value.  Exit codes:
0 success, 1 configuration error, 2 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import bench

FIGURES = {
    "fig-optimal-d": (bench.fig_optimal_d, "optimal_d"),
    "fig-observations": (bench.fig_two_step_observations, "observations"),
    "fig-coherence": (bench.fig_coherence, "coherence"),
    "fig-benchmark": (bench.fig_benchmark, "benchmark"),
    "fig-rank-mode": (bench.fig_rank_mode, "rank_mode"),
}


def _parse_float_list(text):
    return tuple(float(tok) for tok in str(text).replace(",", " ").split())


def _parse_int_list(text):
    return tuple(int(tok) for tok in str(text).replace(",", " ").split())


def _parse_methods(text):
    return tuple(tok for tok in str(text).replace(",", " ").split())


# config-file key -> (ExperimentConfig field, parser)
CONFIG_KEYS = {
    "M": ("m_rows", int),
    "N": ("n_cols", int),
    "r": ("rank", int),
    "m": ("m", int),
    "sigma2": ("sigma2_grid", _parse_float_list),
    "p": ("p_grid", _parse_int_list),
    "P1": ("p1_power", float),
    "P2": ("p2_power", float),
    "trials": ("trials", int),
    "seed": ("seed", int),
    "methods": ("methods", _parse_methods),
    "rank_mode": ("rank_mode", str),
    "map_draws": ("map_draws", int),
    "jobs": ("jobs", int),
    "out": ("out_dir", str),
}


class ConfigError(ValueError):
    pass


def read_config_file(path):
    """Parse a flat key = value file; '#' starts a comment."""
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in CONFIG_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                field, parser = CONFIG_KEYS[key]
                try:
                    values[field] = parser(val.strip())
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lrmr-bench",
        description="Monte-Carlo benchmarks for subspace-aware low-rank matrix reconstruction",
    )
    parser.add_argument("figure", choices=sorted(FIGURES))
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--M", type=int, dest="m_rows")
    parser.add_argument("--N", type=int, dest="n_cols")
    parser.add_argument("--r", type=int, dest="rank")
    parser.add_argument("--m", type=int)
    parser.add_argument("--sigma2", type=_parse_float_list, dest="sigma2_grid",
                        help="comma separated noise levels")
    parser.add_argument("--p", type=_parse_int_list, dest="p_grid",
                        help="comma separated observation counts")
    parser.add_argument("--P1", type=float, dest="p1_power")
    parser.add_argument("--P2", type=float, dest="p2_power")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--methods", type=_parse_methods)
    parser.add_argument("--rank-mode", dest="rank_mode", choices=["true", "estimated"])
    parser.add_argument("--map-draws", type=int, dest="map_draws")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--out", help="output directory")
    return parser


def resolve_config(args):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for field in (
        "m_rows", "n_cols", "rank", "m", "sigma2_grid", "p_grid", "p1_power",
        "p2_power", "trials", "seed", "methods", "rank_mode", "map_draws", "jobs",
    ):
        cli_val = getattr(args, field, None)
        if cli_val is not None:
            values[field] = cli_val
    try:
        config = bench.ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    out_dir = bench.resolve_out_dir(config, args.out)
    fig_fn, stem = FIGURES[args.figure]
    try:
        rows = fig_fn(config)
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # parameter combinations rejected inside a sweep (e.g. an observation
        # count the sampling scheme cannot realize) are configuration errors
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        bench.write_figure_csv(csv_path, rows)
        bench.write_manifest(os.path.join(out_dir, f"{stem}_manifest.txt"), config, args.figure)
    except OSError as exc:
        print(f"config error: cannot write outputs: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
