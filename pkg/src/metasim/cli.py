"""Command line entry point.

    metasim run --scenario demo --seed 42 --transcript out.log [--verbose]
    metasim verify --transcript out.log --scenario demo --seed 42

Exit codes: 0 run completed / transcript matches, 1 scenario or transcript
could not be loaded, 2 invariant breach (including a transcript mismatch
on ``verify``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .encoding import U64_MAX
from .errors import InvariantBreach, MetasimError, ScenarioError
from .runner import Transcript, run_scenario
from .scenario import load_scenario

EXIT_OK = 0
EXIT_LOAD = 1
EXIT_BREACH = 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metasim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its transcript")
    run.add_argument("--scenario", required=True, help="scenario file, or a bundled name such as 'demo'")
    run.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
    run.add_argument("--transcript", required=True, type=Path)
    run.add_argument("--verbose", action="store_true")

    verify = sub.add_parser("verify", help="re-run a scenario and compare with a stored transcript")
    verify.add_argument("--transcript", required=True, type=Path)
    verify.add_argument("--scenario", required=True)
    verify.add_argument("--seed", type=_u64, default=None)
    verify.add_argument("--verbose", action="store_true")
    return parser


def _execute(scenario_ref: str, seed: int | None) -> Transcript:
    scenario = load_scenario(scenario_ref)
    return run_scenario(scenario, seed)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            transcript = _execute(args.scenario, args.seed)
            args.transcript.write_text(transcript.to_text(), encoding="utf-8")
            print(f"{len(transcript)} records -> {args.transcript}")
            return EXIT_OK

        try:
            stored = args.transcript.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot read transcript {args.transcript}: {exc.strerror}", file=sys.stderr)
            return EXIT_LOAD
        fresh = _execute(args.scenario, args.seed).to_text()
        if fresh != stored:
            fresh_lines, stored_lines = fresh.splitlines(), stored.splitlines()
            first = next(
                (i for i, (a, b) in enumerate(zip(fresh_lines, stored_lines)) if a != b),
                min(len(fresh_lines), len(stored_lines)),
            )
            print(f"error: transcript mismatch at record {first + 1}", file=sys.stderr)
            return EXIT_BREACH
        print(f"transcript matches ({len(stored.splitlines())} records)")
        return EXIT_OK
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except InvariantBreach as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except MetasimError as exc:
        # a protocol error escaping the runner is itself a broken invariant
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH


if __name__ == "__main__":
    sys.exit(main())
