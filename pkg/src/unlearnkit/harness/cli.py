"""Command-line entry point: ``unlearnkit {run,ablate,report,plot,validate-data}``.

Exit codes: 0 success, 1 invalid data or config, 3 finished but some
(method, seed) cells failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import load_manifest, validate_bundle
from ..errors import UnlearnKitError
from .config import load_config
from .plots import emit_plots, load_epoch_records
from .report import emit_grid_report, emit_report, load_summary, render_table, write_summary_files
from .runner import run_ablation_grid, run_experiment

log = logging.getLogger("unlearnkit")
EXIT_BAD_INPUT = 1
EXIT_PARTIAL = 3


def _number(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _apply_overrides(config, args):
    if args.seed:
        config = config.with_changes(seeds=tuple(args.seed))
    if args.method:
        unknown = set(args.method) - set(config.method_names)
        if unknown:
            raise UnlearnKitError(f"--method {sorted(unknown)} not in config; available: {config.method_names}")
        config = config.with_changes(methods=tuple(m for m in config.methods if m.name in args.method))
    return config


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = config.resolve_output_dir(args.output)
    log.info("writing to %s", out)
    result = run_experiment(config, out)
    emit_report(result, out)
    if not args.no_plots:
        emit_plots(result.epoch_records(), out / "plots")
    print((out / "table.txt").read_text(), end="")
    if result.single_seed:
        log.warning("single seed: standard deviations are reported as 0")
    if result.failed() or result.pretrain_errors:
        for c in result.failed():
            log.error("failed cell %s seed %d: %s", c.method, c.seed, c.error)
        return EXIT_PARTIAL
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config)
    if args.seed:
        config = config.with_changes(seeds=tuple(args.seed))
    out = config.resolve_output_dir(args.output) / f"ablation-{args.method}-{args.parameter}"
    grid = run_ablation_grid(config, args.method, args.parameter, args.values, out)
    emit_grid_report(grid, out)
    print((out / "ablation.txt").read_text(), end="")
    return EXIT_PARTIAL if any(r.failed() for r in grid.results) else 0


def cmd_report(args) -> int:
    summary = load_summary(args.dir)
    write_summary_files(summary, args.dir)
    print(render_table(summary, title=summary["config"].get("name")), end="")
    return 0


def cmd_plot(args) -> int:
    records = load_epoch_records(Path(args.dir) / "epochs.jsonl")
    for p in emit_plots(records, args.output or Path(args.dir) / "plots"):
        print(p)
    return 0


def cmd_validate(args) -> int:
    if args.config:
        bundle = load_config(args.config).load_dataset()
    else:
        bundle = load_manifest(args.manifest, args.image_root)
    report = validate_bundle(bundle)
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.to_text())
    return 0 if report.passed else EXIT_BAD_INPUT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unlearnkit", description="Machine unlearning benchmark for small Vision Transformers.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a multi-seed experiment from a config file")
    r.add_argument("--config", required=True, help="experiment YAML")
    r.add_argument("--seed", type=int, action="append", help="override the seed list (repeatable)")
    r.add_argument("--method", action="append", help="run only this method name (repeatable)")
    r.add_argument("--output", help="output directory (default from config)")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="sweep one hyperparameter of one method")
    a.add_argument("--config", required=True)
    a.add_argument("--method", required=True, help="method to sweep, e.g. cf_k")
    a.add_argument("--parameter", required=True, help="e.g. k, pruning_ratio, coefficient")
    a.add_argument("--values", required=True, nargs="+", type=_number)
    a.add_argument("--seed", type=int, action="append")
    a.add_argument("--output", help="output root; the grid goes in ablation-<method>-<parameter>/")
    a.set_defaults(func=cmd_ablate)

    rep = sub.add_parser("report", help="rebuild table.txt and summary.csv from summary.json")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)

    pl = sub.add_parser("plot", help="draw plots from a run's epochs.jsonl")
    pl.add_argument("dir")
    pl.add_argument("--output", help="plot directory (default <dir>/plots)")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("validate-data", help="check split bookkeeping of a dataset")
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--config")
    v.add_argument("--image-root")
    v.add_argument("--json", action="store_true", help="structured output")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UnlearnKitError, ValueError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
