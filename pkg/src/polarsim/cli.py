"""Command-line entry points for the simulator harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from polarsim import harness


def _read_rows(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        row = {}
        for key, val in zip(header, parts):
            row[key] = val if key in ("source", "param") else float(val)
        rows.append(row)
    return rows


def cmd_run(args) -> int:
    cfg = harness.parse_config(args.config)
    summary = harness.run_experiment(cfg, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def cmd_compare(args) -> int:
    pme_rows = _read_rows(args.pme)
    oracle_rows = [r for r in _read_rows(args.oracle) if r.get("source") == "oracle"]
    if not oracle_rows:  # a plain oracle-only file without the tag filter
        oracle_rows = _read_rows(args.oracle)
    by_tag: dict[str, list] = {}
    for row in pme_rows:
        if str(row.get("source", "")).startswith("pme"):
            by_tag.setdefault(row["source"], []).append(row)
    if not by_tag:
        by_tag = {"pme": pme_rows}
    report = {tag: harness.compare_report(rows, oracle_rows)
              for tag, rows in by_tag.items()}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = harness.parse_config(args.config)
    values = [float(v) for v in args.values.split(",")]
    report = harness.run_sweep(cfg, args.out, args.param, values)
    print(json.dumps({"param": report["param"], "values": report["values"]},
                     indent=2))
    return 0


def cmd_convergence(args) -> int:
    cfg = harness.parse_config(args.config)
    report = harness.run_convergence(cfg, args.out, halvings=args.halvings)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarsim",
        description="Polaron-frame master equation vs influence-functional "
                    "benchmark for the spin-boson model")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare PME and oracle CSV output")
    p_cmp.add_argument("--pme", required=True)
    p_cmp.add_argument("--oracle", required=True)
    p_cmp.add_argument("--out")
    p_cmp.set_defaults(func=cmd_compare)

    p_sw = sub.add_parser("sweep", help="re-run a scenario over config values")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--param", required=True,
                      help="dotted config path, e.g. bath.alpha")
    p_sw.add_argument("--values", required=True, help="comma-separated list")
    p_sw.add_argument("--out", required=True)
    p_sw.set_defaults(func=cmd_sweep)

    p_cv = sub.add_parser("convergence", help="oracle step/threshold scan")
    p_cv.add_argument("--config", required=True)
    p_cv.add_argument("--halvings", type=int, default=1)
    p_cv.add_argument("--out", required=True)
    p_cv.set_defaults(func=cmd_convergence)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
