"""Command-line entry point.

``swssb <kind> --spec FILE [--out DIR] [--threads N] [--seed S]`` runs one
experiment; ``swssb run --spec FILE`` takes the kind from the file.
Exit codes: 0 success, 1 physics or numerical error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import runner

EXIT_OK, EXIT_PHYSICS, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("swssb")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swssb", description="Run a declarative experiment spec.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", *runner.KINDS):
        sp = sub.add_parser(name, help="run a spec of any kind" if name == "run" else f"{name} experiment")
        sp.add_argument("--spec", required=True, help="YAML or JSON experiment spec")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for independent units")
        sp.add_argument("--seed", type=int, default=None, help="override the spec seed")
    sub.add_parser("schema", help="print the JSON schema of a kind").add_argument("kind", choices=runner.KINDS)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "schema":
        import json

        print(json.dumps(runner.schema_for(args.kind), indent=1))
        return EXIT_OK
    if args.threads < 1 or (args.seed is not None and args.seed < 0):
        print("swssb: --threads must be >= 1 and --seed >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        spec = runner.load_spec(args.spec)
        if args.command != "run" and spec["kind"] != args.command:
            raise runner.SpecError(f"spec kind {spec['kind']!r} does not match subcommand {args.command!r}")
    except runner.SpecError as exc:
        print(f"swssb: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        files = runner.run(spec, args.out, threads=args.threads, seed=args.seed)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"swssb: {spec['kind']} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
