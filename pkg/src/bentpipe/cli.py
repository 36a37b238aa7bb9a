"""Command-line entry point: ``bentpipe run``, ``bentpipe sweep`` and ``bentpipe scenario``.

Exit status: 0 on success, 2 for invalid input (scenario, sweep spec,
arguments), 3 when the optimizer fails, 4 when a sweep finished with some
failed runs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import SweepError, SweepSpec, SweepVariable, load_sweep_spec, run_single, run_sweep
from .optimizer import Algorithm, InnerSolveError
from .scenario import ScenarioError, dump_scenario, load_scenario_file

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_PARTIAL = 4

log = logging.getLogger("bentpipe")


def _algorithm(value: str) -> Algorithm:
    for a in Algorithm:
        if a.value.lower() == value.lower():
            return a
    raise argparse.ArgumentTypeError(f"unknown algorithm {value!r} (choose from {', '.join(a.value for a in Algorithm)})")


def _grid(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must be comma-separated numbers: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="scenario YAML (default: $BENTPIPE_SCENARIO or the built-in default scenario)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(prog="bentpipe", description="Energy-efficient bent-pipe satellite precoding benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="solve one channel realization")
    run.add_argument("-a", "--algorithm", type=_algorithm, default=Algorithm.JPFBM)
    run.add_argument("--offset", type=int, default=0, help="realization index (seed offset)")
    run.add_argument("-o", "--outdir", type=Path, default=Path("out"))

    sweep = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    sweep.add_argument("--spec", type=Path, help="sweep spec YAML; flags below override its fields")
    sweep.add_argument("--variable", choices=[v.value for v in SweepVariable])
    sweep.add_argument("--grid", type=_grid)
    sweep.add_argument("--algorithms", type=lambda s: [_algorithm(a) for a in s.split(",")])
    sweep.add_argument("--realizations", type=int)
    sweep.add_argument("--no-continuation", dest="continuation", action="store_const", const=False,
                       help="solve every grid point from scratch")  # fmt: skip
    sweep.add_argument("-o", "--outdir", type=Path, default=Path("out"))
    sweep.add_argument("-j", "--workers", type=int, default=1)

    show = sub.add_parser("scenario", parents=[common], help="print the effective scenario as YAML")
    del show
    return parser


def _sweep_spec(args) -> SweepSpec:
    base = {}
    if args.spec is not None:
        spec = load_sweep_spec(args.spec.read_text())
        base = {"variable": spec.variable, "grid": spec.grid, "algorithms": spec.algorithms,
                "realizations": spec.realizations, "seed": spec.seed, "continuation": spec.continuation}  # fmt: skip
    for key in ("variable", "grid", "algorithms", "realizations", "continuation"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    if args.seed is not None:
        base["seed"] = args.seed
    if "variable" not in base or "grid" not in base:
        raise SweepError("a sweep needs --spec or both --variable and --grid")
    return SweepSpec(**base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_scenario_file(args.scenario)
        if args.command == "scenario":
            if args.seed is not None:
                scenario = scenario.with_seed(args.seed)
            sys.stdout.write(dump_scenario(scenario))
            return EXIT_OK
        if args.command == "run":
            if args.seed is not None:
                scenario = scenario.with_seed(args.seed)
            record, _ = run_single(scenario, args.algorithm, args.offset, args.outdir)
            print(f"{record.algorithm}: SWEE {record.swee:.6g} bit/J, rate {record.rate:.6g} bit/s, "
                  f"power {record.p_total_weighted:.6g} W, {record.active_links:g} feeder links -> {args.outdir}")  # fmt: skip
            return EXIT_OK
        spec = _sweep_spec(args)
        result = run_sweep(spec, scenario, workers=args.workers, outdir=args.outdir)
        for m in result.means:
            print(f"{m.variable}={m.value:g} {m.algorithm:8s} SWEE {m.swee:.6g} ({m.status})")
        if result.failures:
            log.error("%d of %d runs failed", result.failures, len(result.records))
            return EXIT_PARTIAL
        return EXIT_OK
    except (ScenarioError, SweepError, FileNotFoundError, IsADirectoryError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except InnerSolveError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
