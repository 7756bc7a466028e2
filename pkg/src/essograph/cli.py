"""Command-line front end: ``essograph learn``, ``essograph synth`` and ``essograph audit``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .citest import audit_closure, parse_dump
from .data import DataFormatError, Dataset, load_count_table, load_table
from .learner import LearnConfig, run_m3pc, run_mmpc
from .orient import UnrecoverableConflict
from .synth import ConfigError, parse_experiment_config, run_experiment

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_DATA = 2
EXIT_CONFLICT = 3


@dataclass
class RunConfig:
    alpha: float = 0.05
    max_cond: int = 3
    consistency: bool | None = None  # None: on for m3pc, off for the mmpc baseline
    algorithm: str = "m3pc"
    order: list[str] | None = None
    seed: int = 0
    output_format: str = "dot"
    report_path: str | None = None

    def validate(self) -> "RunConfig":
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"--alpha must lie in (0, 1), got {self.alpha}")
        if self.max_cond < 0:
            raise ValueError(f"--max-cond must be >= 0, got {self.max_cond}")
        if self.algorithm not in ("m3pc", "mmpc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.output_format not in ("dot", "json"):
            raise ValueError(f"unknown format {self.output_format!r}")
        if self.order is not None and len(set(self.order)) != len(self.order):
            raise ValueError("--order repeats a variable")
        if self.consistency is None:
            self.consistency = self.algorithm == "m3pc"
        return self


def _err(msg: str) -> None:
    print(f"essograph: {msg}", file=sys.stderr)


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _apply_order(ds: Dataset, order: list[str] | None) -> Dataset:
    if order is None:
        return ds
    if sorted(order) != sorted(ds.names):
        raise DataFormatError(f"--order must list every column exactly once: {ds.names}")
    return ds.reorder([ds.index(name) for name in order])


def cmd_learn(config: RunConfig, input_path: str, *, counts: bool = False, output: str | None = None,
              ledger_path: str | None = None) -> int:
    try:
        config.validate()
    except ValueError as exc:
        _err(str(exc))
        return EXIT_DATA
    try:
        ds = load_count_table(input_path) if counts else load_table(input_path)
        ds = _apply_order(ds, config.order)
    except (OSError, DataFormatError, UnicodeDecodeError) as exc:
        _err(f"cannot read {input_path}: {exc}")
        return EXIT_DATA
    lc = LearnConfig(alpha=config.alpha, max_cond=config.max_cond, consistency=config.consistency)
    run = run_m3pc if config.algorithm == "m3pc" else run_mmpc
    try:
        result = run(ds, lc)
    except UnrecoverableConflict as exc:
        _err(f"unrecoverable conflict: cycle {[ds.names[v] for v in exc.cycle]}")
        return EXIT_CONFLICT
    g = result.graph
    text = g.to_dot(ds.names) if config.output_format == "dot" else g.to_json(ds.names) + "\n"
    _write(output, text)
    if config.report_path:
        settings = {k: v for k, v in asdict(config).items() if k != "report_path"}
        report = {"config": settings, "input": str(input_path), "rows": ds.n_rows, **result.report(ds.names)}
        Path(config.report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if ledger_path:
        Path(ledger_path).write_text(result.ledger.dump())
    return EXIT_OK


def cmd_synth(experiment_config: str, output: str | None = None) -> int:
    try:
        cfg = parse_experiment_config(Path(experiment_config).read_text())
    except (OSError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_DATA
    if output is None or output == "-":
        run_experiment(cfg, sys.stdout)
    else:
        with open(output, "w") as fh:
            run_experiment(cfg, fh)
    return EXIT_OK


def cmd_audit(ledger_dump: str) -> int:
    try:
        entries = parse_dump(Path(ledger_dump).read_text())
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DATA
    found = audit_closure(entries)
    for high, side, low in found:
        print(f"violation: A{high} = 0 and A{side} = 0 but A{low} = 1")
    print(f"{len(entries)} entries, {len(found)} violations")
    return EXIT_VIOLATIONS if found else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="essograph", description="Learn essential graphs from categorical data.")
    sub = parser.add_subparsers(dest="command", required=True)

    learn = sub.add_parser("learn", help="learn a graph from a delimited data file")
    learn.add_argument("input", help="comma- or tab-separated file with a header row")
    learn.add_argument("--counts", action="store_true", help="input is a frequency table with a 'count' column")
    learn.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    learn.add_argument("--max-cond", type=int, default=3, help="largest conditioning set (default 3)")
    learn.add_argument("--consistency", action=argparse.BooleanOptionalAction, default=None,
                       help="consistency-checked CI decisions (default: on for m3pc, off for mmpc)")
    learn.add_argument("--algorithm", choices=("m3pc", "mmpc"), default="m3pc")
    learn.add_argument("--order", help="comma-separated column processing order")
    learn.add_argument("--seed", type=int, default=0, help="run seed recorded in the report")
    learn.add_argument("--format", choices=("dot", "json"), default="dot")
    learn.add_argument("--report", help="write a JSON run report here")
    learn.add_argument("--ledger", help="write the CI ledger dump here")
    learn.add_argument("-o", "--output", help="graph output file (default stdout)")

    synth = sub.add_parser("synth", help="run synthetic trials from a key = value config")
    synth.add_argument("config")
    synth.add_argument("-o", "--output", help="JSON-lines output (default stdout)")

    audit = sub.add_parser("audit", help="check a ledger dump for closure violations")
    audit.add_argument("dump")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "learn":
        config = RunConfig(
            alpha=args.alpha,
            max_cond=args.max_cond,
            consistency=args.consistency,
            algorithm=args.algorithm,
            order=[s.strip() for s in args.order.split(",")] if args.order else None,
            seed=args.seed,
            output_format=args.format,
            report_path=args.report,
        )
        return cmd_learn(config, args.input, counts=args.counts, output=args.output, ledger_path=args.ledger)
    if args.command == "synth":
        return cmd_synth(args.config, args.output)
    return cmd_audit(args.dump)


if __name__ == "__main__":
    sys.exit(main())
