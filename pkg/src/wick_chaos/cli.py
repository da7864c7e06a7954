"""Command line driver: ``wick-chaos run | list-checks | demo``."""

from __future__ import annotations

import argparse
import json
import sys

from .runner import (
    DEMO_CONFIG,
    REGISTRY,
    ConfigError,
    dumps_report,
    exit_code,
    load_config,
    parse_config,
    report_csv,
    run_experiment,
)

EXIT_OK, EXIT_INPUT, EXIT_VIOLATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wick-chaos", description="Wick-Poincare inequality verifier")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the checks of a JSON experiment config")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="write the JSON report here (default: stdout)")
    run.add_argument("--csv", help="also write a flat CSV table")
    run.add_argument("--timing", action="store_true", help="record wall-clock time in the report")

    lst = sub.add_parser("list-checks", help="list registered checks")
    lst.add_argument("--json", action="store_true")

    demo = sub.add_parser("demo", help="run the built-in example corpus")
    demo.add_argument("-o", "--output")
    demo.add_argument("--csv")
    demo.add_argument("--timing", action="store_true")
    return parser


def _write(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _execute(exp, args) -> int:
    report = run_experiment(exp, timing=args.timing)
    _write(dumps_report(report), args.output)
    if args.csv:
        _write(report_csv(report), args.csv)
    s = report["summary"]
    print(
        f"holds={s['holds']} equality={s['equality']} violated={s['violated']} "
        f"inconclusive={s['inconclusive']}",
        file=sys.stderr,
    )
    return exit_code(report)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-checks":
            if args.json:
                print(json.dumps([{"name": c.name, "params": c.params} for c in REGISTRY.values()], indent=2))
            else:
                for c in REGISTRY.values():
                    print(f"{c.name:<20} {c.params}")
            return EXIT_OK
        if args.command == "run":
            exp = load_config(args.config)
        else:
            exp = parse_config(DEMO_CONFIG)
        return _execute(exp, args)
    except ConfigError as exc:
        print(f"wick-chaos: config error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
