"""Command line: ``bdsde run --config PATH``, ``bdsde catalog``, ``bdsde dump-paths``.

Errors end the process with a single line ``<category>: <message>`` on
stderr and exit status 2 (configuration), 3 (numerical) or 4 (I/O).
"""

import argparse
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .catalog import list_catalog
from .config import load_config
from .exceptions import BDSDEError, ConfigurationError, NumericalError
from .experiments import RUNNERS
from .io import write_csv, write_outputs
from .paths import make_grid, sample_brownian

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4


def _fail(category, message, code):
    text = " ".join(str(message).split())
    print(f"{category}: {text}", file=sys.stderr)
    return code


def _guarded(fn):
    try:
        return fn()
    except (ConfigurationError, ValueError, TypeError) as exc:
        return _fail("config-error", exc, EXIT_CONFIG)
    except (NumericalError, MemoryError, ArithmeticError, FloatingPointError) as exc:
        return _fail("numerical-error", exc, EXIT_NUMERICAL)
    except BDSDEError as exc:
        return _fail(exc.category, exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail("io-error", exc, EXIT_IO)


def run(config_file, output_dir=None, threads=None, seed=None, quiet=False):
    """Execute one experiment config; returns the exit status."""

    def body():
        if threads is not None and threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg = load_config(config_file, output_dir=output_dir, seed=seed)
        with threadpool_limits(limits=threads or 1):
            name, report, tables = RUNNERS[cfg.command](cfg, threads=threads)
        for path in write_outputs(cfg, name, report, tables):
            if not quiet:
                print(path)
        return 0

    return _guarded(body)


def dump_paths(horizon_T, steps_N, paths_M, seed, driver, output, dim=1, binary=False):
    """Write one driver as rows = paths, columns = time nodes."""

    def body():
        grid = make_grid(horizon_T, steps_N)
        bundle = sample_brownian(grid, paths_M, dim, dim, seed)
        arr = (bundle.W if driver == "W" else bundle.B)[:, :, 0]
        if binary:
            np.ascontiguousarray(arr, dtype="<f8").tofile(output)
        else:
            meta = {"driver": driver, "master_seed": seed, "steps_N": steps_N, "horizon_T": horizon_T}
            write_csv(output, [f"t{i}" for i in range(steps_N + 1)], arr.tolist(), meta)
        return 0

    return _guarded(body)


def build_parser():
    parser = argparse.ArgumentParser(prog="bdsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("--config", required=True, type=Path)
    p_run.add_argument("--output-dir", type=Path)
    p_run.add_argument("--threads", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--quiet", action="store_true")
    sub.add_parser("catalog", help="list built-in problems")
    p_dump = sub.add_parser("dump-paths", help="dump W or B paths for debugging")
    p_dump.add_argument("--T", type=float, default=1.0)
    p_dump.add_argument("--N", type=int, default=16)
    p_dump.add_argument("--M", type=int, default=10)
    p_dump.add_argument("--seed", type=int, default=0)
    p_dump.add_argument("--driver", choices=("W", "B"), default="W")
    p_dump.add_argument("--binary", action="store_true", help="raw little-endian float64")
    p_dump.add_argument("--output", type=Path, required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "run":
        return run(args.config, args.output_dir, args.threads, args.seed, args.quiet)
    if args.cmd == "catalog":
        print(list_catalog())
        return 0
    return dump_paths(args.T, args.N, args.M, args.seed, args.driver, args.output,
                      binary=args.binary)


if __name__ == "__main__":
    sys.exit(main())
