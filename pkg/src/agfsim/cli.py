"""``agf-sim`` command line.

Exit codes: 0 success, 1 failed self-check, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .harness import ScenarioError, emit_results, list_scenarios, load_scenario, run_scenario

EXIT_CONFIG = 2
EXIT_IO = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="agf-sim", description="Blind-combining AGF multi-user detection link simulator")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a BLER campaign")
    run.add_argument("--scenario", required=True, help="scenario .ini file or preset name")
    run.add_argument("--snr-db", type=_floats, help="comma-separated SNR points (dB)")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output file (default: stdout)")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--workers", type=int, default=1, help="worker processes")

    sub.add_parser("list-scenarios", help="list shipped scenario presets")
    ver = sub.add_parser("verify", help="run the closed-form self-checks")
    ver.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "list-scenarios":
        for p in list_scenarios():
            s = load_scenario(p)
            print(f"{p.stem:26s} {s.receiver:13s} K={s.K:<3d} m={s.m} trials={s.trials}")
        return 0
    if args.cmd == "verify":
        from .verify import run_checks

        return 0 if run_checks(args.seed) else 1

    try:
        s = load_scenario(args.scenario).with_overrides(snr_db=args.snr_db, trials=args.trials, seed=args.seed)
    except ScenarioError as exc:
        print(f"agf-sim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    points = run_scenario(s, workers=max(1, args.workers))
    try:
        text = emit_results(points, args.format, args.out, scenario=s)
    except OSError as exc:
        print(f"agf-sim: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.out is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
