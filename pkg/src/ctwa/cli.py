"""Command-line entry point.

Two modes share one executable: `run` integrates an ensemble described
by a TOML config and writes data files plus a manifest; `compare` reads
two output directories and reports their deviation in units of combined
standard error.  `run` is implied when the first argument is a flag, so
`ctwa --config x.toml` works as-is.

Exit codes: 0 success, 2 config error, 3 numerical failure (too many
dropped trajectories), 4 comparison failure or mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from ._version import __version__
from .model import PRESETS
from . import runner

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_COMPARISON = 4


def _print_presets() -> None:
    for name, build in PRESETS.items():
        preset = build()
        model = preset.model
        print(f"{name}: {preset.description}")
        print(f"    n_sites={model.n_sites} periodic={model.periodic} "
              f"initial={preset.initial.kind} "
              f"observables={', '.join(preset.observables)}")


def _run_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ctwa",
        description="cluster-ensemble spin dynamics: run experiments from a config file",
    )
    p.add_argument("--config", metavar="PATH", help="TOML run configuration")
    p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    p.add_argument("--samples", type=int, metavar="N", help="override the sample count")
    p.add_argument("--backend", metavar="NAME", help="override the backend")
    p.add_argument("--output", metavar="DIR", help="override the output directory")
    p.add_argument("--workers", type=int, default=1, metavar="N",
                   help="worker processes (output is identical for any value)")
    p.add_argument("--list-presets", action="store_true", help="list model presets and exit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _compare_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ctwa compare",
        description="compare two run output directories observable by observable",
    )
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--max-se", type=float, default=None, metavar="X",
                   help="fail if any |difference| exceeds X combined standard errors")
    p.add_argument("--max-abs", type=float, default=None, metavar="X",
                   help="fail if any |difference| exceeds X absolutely")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    return p


def _cmd_run(argv: list[str]) -> int:
    args = _run_parser().parse_args(argv)
    if args.list_presets:
        _print_presets()
        return EXIT_OK
    if args.config is None:
        print("error: --config is required (or --list-presets)", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = runner.load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.samples is not None:
            cfg = replace(cfg, samples=args.samples)
        if args.backend is not None:
            cfg = replace(cfg, backend=args.backend)
        if args.output is not None:
            cfg = replace(cfg, output=args.output)
        cfg = runner.validate_config(cfg)
        if cfg.output is None:
            print("error: no output directory (config [output] or --output)",
                  file=sys.stderr)
            return EXIT_CONFIG
        result = runner.run(cfg, workers=max(1, args.workers))
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except runner.DropFractionError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    m = result.manifest
    print(f"wrote {len(m['observables'])} observable files to {result.output_dir}")
    print(f"samples/offset={m['samples_per_offset']} offsets={m['n_offsets']} "
          f"dropped={m['dropped_trajectories']} wall={m['wall_time_s']:.2f}s")
    return EXIT_OK


def _cmd_compare(argv: list[str]) -> int:
    args = _compare_parser().parse_args(argv)
    try:
        report = runner.compare_runs(args.dir_a, args.dir_b,
                                     max_se=args.max_se, max_abs=args.max_abs)
    except runner.ComparisonError as exc:
        print(f"comparison error: {exc}", file=sys.stderr)
        return EXIT_COMPARISON

    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for name, m in report["observables"].items():
            print(f"{name}: max_abs={m['max_abs']:.3e} rms={m['rms']:.3e} "
                  f"max_se_units={m['max_se_units']:.3f} "
                  f"{'ok' if m['pass'] else 'FAIL'}")
        print("PASS" if report["pass"] else "FAIL")
    return EXIT_OK if report["pass"] else EXIT_COMPARISON


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "compare":
        return _cmd_compare(argv[1:])
    if argv and argv[0] == "run":
        argv = argv[1:]
    return _cmd_run(argv)


if __name__ == "__main__":
    sys.exit(main())
