"""Command line: run, sweep, fuzz and verify.

Exit codes: 0 when every check passes, 1 on a property violation (the
counterexample or report is written), 2 on a configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

from . import campaign
from . import protocol_crash as pc
from .errors import ConfigError, DispersionError, ParseError
from .sim_engine import load_config, read_trace, write_trace
from .verify import validate_trace

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, DispersionError, ValueError) as exc:
        return _fail(str(exc))
    if args.trace:
        cfg = dataclasses.replace(cfg, trace=True)
    report, state = campaign.checked_run_with_state(cfg)
    _write_json(args.report, report.to_dict())
    if args.trace:
        write_trace(args.trace, report, state.trace)
    status = "pass" if not report.violations else "fail"
    print(f"{status}: rounds={report.rounds_used} mem_bits={report.max_memory_bits} violations={len(report.violations)}")
    return EXIT_OK if not report.violations else EXIT_VIOLATION


def _split(text: str) -> list[str]:
    return [t for t in text.split(",") if t.strip()]


def cmd_sweep(args) -> int:
    try:
        grids = [campaign.parse_size(s) for s in _split(args.sizes)]
    except (ValueError, DispersionError) as exc:
        return _fail(f"--sizes: {exc}")
    modes = _split(args.modes)
    for m in modes:
        if m not in pc.MODES:
            return _fail(f"--modes: unknown mode {m!r}")
        if m.startswith("Square") and any(not g.is_square for g in grids):
            return _fail(f"--sizes: {m} needs square sizes")
    if args.seeds < 1:
        return _fail("--seeds must be positive")
    rows, failed = [], []
    for g in grids:
        for m in modes:
            for seed in range(args.seeds):
                row, cfg = campaign.sweep_row(g, m, seed)
                rows.append(row)
                if row[-1] != "pass":
                    failed.append(cfg)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(campaign.SWEEP_HEADER)
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    if failed:
        path = args.counterexample or ((args.out or "sweep") + ".counterexample.json")
        _write_json(path, failed[0].to_dict())
        print(f"{len(failed)} failing rows; first counterexample in {path}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_fuzz(args) -> int:
    if args.mode not in pc.MODES:
        return _fail(f"--mode: unknown mode {args.mode!r}")
    if args.max_n < 4 or args.trials < 1 or args.seed < 0:
        return _fail("--max-n must be at least 4, --trials positive, --seed non-negative")
    result = campaign.fuzz(args.mode, args.max_n, args.trials, args.seed)
    if result.counterexample is None:
        print(f"pass: {result.trials} trials")
        return EXIT_OK
    payload = {"config": result.counterexample.to_dict(), "violations": result.violations}
    _write_json(args.out, payload)
    print(f"fail after {result.trials} trials; counterexample in {args.out}", file=sys.stderr)
    return EXIT_VIOLATION


def cmd_verify(args) -> int:
    try:
        cfg = load_config(args.config)
        header, records = read_trace(args.trace)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    except (ConfigError, ParseError, DispersionError, ValueError, OSError) as exc:
        return _fail(str(exc))
    violations = validate_trace(records, cfg, header.get("trace_hash"))
    for v in violations:
        print(json.dumps(v.to_dict(), sort_keys=True))
    if violations:
        return EXIT_VIOLATION
    print(f"pass: {len(records)} records")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="griddisperse", description="Simulate and check robot dispersion on grids.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--report", required=True)
    r.add_argument("--trace")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="summary table over sizes, modes and seeds")
    s.add_argument("--sizes", required=True, help="comma list of n (squares) or HxW")
    s.add_argument("--modes", default="SquareCrash", help=f"comma list from {', '.join(pc.MODES)}")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", help="CSV path (stdout when omitted)")
    s.add_argument("--counterexample", help="where to write the first failing config")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fuzz", help="randomized configs with schedule shrinking")
    f.add_argument("--mode", required=True)
    f.add_argument("--max-n", type=int, default=64)
    f.add_argument("--trials", type=int, default=100)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default="counterexample.json")
    f.set_defaults(func=cmd_fuzz)

    v = sub.add_parser("verify", help="validate a trace against its config")
    v.add_argument("--trace", required=True)
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
