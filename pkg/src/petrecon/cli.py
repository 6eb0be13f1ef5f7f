"""Command-line entry point.

    recon run CONFIG [--seed N] [--out-dir DIR] [--desk-scale]
    recon reference CONFIG [--seed N] [--out-dir DIR] [--desk-scale]
    recon validate CONFIG
    recon phantom CONFIG --out FILE [--desk-scale]

CONFIG is a YAML file path or the name of a packaged preset (for example
"uniform-high-count"). Exit codes: 0 success, 2 invalid config, 3 numerical
failure during iteration, 4 missing or mismatched reference checkpoint.
"""

from __future__ import annotations

import argparse
import sys

from .errors import NumericalError, ReconError, ReferenceMissingError, ValidationError
from .experiments import (emit_reference, load_config, run_experiment,
                          to_desk_scale, write_phantom_file)

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING_REFERENCE = 4


def _add_common(sub: argparse.ArgumentParser, with_overrides: bool = True) -> None:
    sub.add_argument("config", help="config file path or packaged preset name")
    if with_overrides:
        sub.add_argument("--seed", type=int, default=None,
                         help="override the simulation seed")
        sub.add_argument("--out-dir", default=None,
                         help="override the output directory")
        sub.add_argument("--desk-scale", action="store_true",
                         help="shrink the problem to the 64x64 desk geometry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recon",
        description="Ordered-subsets PET reconstruction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run every configured algorithm")
    _add_common(run_p)

    ref_p = sub.add_parser("reference",
                           help="compute and store the converged reference")
    _add_common(ref_p)

    val_p = sub.add_parser("validate", help="check a config and report problems")
    _add_common(val_p, with_overrides=False)

    ph_p = sub.add_parser("phantom", help="write the config's phantom as text")
    ph_p.add_argument("config", help="config file path or packaged preset name")
    ph_p.add_argument("--out", required=True, help="output phantom file")
    ph_p.add_argument("--desk-scale", action="store_true",
                      help="shrink the problem to the 64x64 desk geometry")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            load_config(args.config)
            print("config ok")
            return EXIT_OK
        cfg = load_config(args.config)
        if args.command == "run":
            products = run_experiment(cfg, out_dir=args.out_dir, seed=args.seed,
                                      desk_scale=args.desk_scale)
            print(f"wrote {products.manifest_path}")
            for name, recorder in products.recorders.items():
                last = recorder.objective[-1] if recorder.objective else float("nan")
                print(f"  {name}: {len(recorder.iterations)} iterations, "
                      f"final objective {last:.6f}")
            return EXIT_OK
        if args.command == "reference":
            path = emit_reference(cfg, out_dir=args.out_dir, seed=args.seed,
                                  desk_scale=args.desk_scale)
            print(f"wrote {path}")
            return EXIT_OK
        if args.command == "phantom":
            if args.desk_scale:
                cfg = to_desk_scale(cfg)
            path = write_phantom_file(cfg, args.out)
            print(f"wrote {path}")
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command}")
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except ReferenceMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_REFERENCE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG


if __name__ == "__main__":
    sys.exit(main())
