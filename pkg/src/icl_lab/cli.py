"""Command-line entry point.

Subcommands: run (a config file or preset), gradcheck (finite-difference
suite), plot (render CSV results), list-presets. Exit codes: 0 success,
1 validation error, 2 runtime failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; here 2 means runtime failure, so remap
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="icl-lab",
        description="Context-scaling vs task-scaling experiments for in-context learning.",
        epilog="Result directories default to $ICL_LAB_RESULTS or ./results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config file or a named preset")
    p_run.add_argument("config", help="path to a YAML config, or a preset name")
    p_run.add_argument("--output", help="result root directory (default: "
                                        "$ICL_LAB_RESULTS or ./results)")
    p_run.add_argument("--quiet", action="store_true", help="suppress per-cell progress")
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck", help="finite-difference checks for every "
                                              "op and model")
    p_grad.add_argument("--rounds", type=int, default=10,
                        help="random points per check (default 10)")
    p_grad.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_plot = sub.add_parser("plot", help="render normalized-error curves from a results CSV")
    p_plot.add_argument("csv", help="results.csv produced by `run`")
    p_plot.add_argument("--x", choices=["N", "T", "both"], default="both",
                        help="sweep axis to plot (default both)")
    p_plot.add_argument("--family", help="only plot families whose label contains "
                                         "this substring")
    p_plot.add_argument("--out", help="output directory (default: plots/ next to the CSV)")
    p_plot.set_defaults(func=cmd_plot)

    p_list = sub.add_parser("list-presets", help="show available experiment presets")
    p_list.set_defaults(func=cmd_list_presets)
    return parser


def cmd_run(args) -> int:
    from .presets import PRESETS, preset_config
    from .runner import run_experiment

    target = Path(args.config)
    if target.exists():
        cfg = load_config(target)
    elif args.config in PRESETS:
        cfg = preset_config(args.config)
    else:
        print(f"icl-lab run: {args.config!r} is neither a config file nor a preset "
              f"(see `icl-lab list-presets`)", file=sys.stderr)
        return EXIT_VALIDATION
    progress = None if args.quiet else lambda msg: print(f"  {msg}", file=sys.stderr, flush=True)
    store = run_experiment(cfg, output=args.output, progress=progress)
    report_rows = sum(1 for _ in open(store.csv_path)) - 1
    print(f"wrote {report_rows} result rows to {store.csv_path}")
    print(f"manifest: {store.manifest_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import model_checks, op_checks

    worst: dict = {}
    order: list = []
    for r in range(args.rounds):
        seed = args.seed + r
        for res in op_checks(seed) + model_checks(seed):
            if res.name not in worst:
                order.append(res.name)
                worst[res.name] = res
            elif res.max_rel_err > worst[res.name].max_rel_err:
                worst[res.name] = res
    failures = 0
    for name in order:
        print(worst[name].line())
        failures += 0 if worst[name].passed else 1
    print(f"gradcheck: {len(order) - failures}/{len(order)} checks passed "
          f"({args.rounds} random points each)")
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    csv_path = Path(args.csv)
    out_dir = Path(args.out) if args.out else csv_path.parent / "plots"
    axes = ("N", "T") if args.x == "both" else (args.x,)
    try:
        written = plot_csv(csv_path, out_dir, axes=axes, family=args.family)
    except (ValueError, FileNotFoundError) as exc:
        print(f"icl-lab plot: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for path in written:
        print(path)
    return EXIT_OK


def cmd_list_presets(args) -> int:
    from .presets import summary_lines

    for line in summary_lines():
        print(line)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"icl-lab: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"icl-lab: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"icl-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
