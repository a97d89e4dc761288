"""Command-line front end.

Subcommands: ``run`` (one discrete experiment), ``flow`` (one integration),
``suite`` (a batch from a config matrix), ``rates`` (slope fit of an
existing trace), ``check`` (invariant audit of existing artifacts).
Exit codes: 0 success, 2 invariant-audit failure, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .audit import audit_discrete, audit_flow, render_checks
from .harness import (
    ExperimentConfig,
    apply_overrides,
    fit_rate,
    format_table,
    load_artifact,
    load_config,
    read_trace_csv,
    run_experiment,
    run_suite,
    suite_configs_from_dict,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML experiment config")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument(
        "--set",
        dest="overrides",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override a config scalar, e.g. solver.sigma_l=0.4 (repeatable)",
    )


def _resolve(args: argparse.Namespace, kind: str) -> ExperimentConfig:
    overrides = list(args.overrides)
    overrides.append(f"kind={kind}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output={args.out}")
    return load_config(args.config, overrides)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "discrete")
    summary = run_experiment(cfg)
    return _report(summary)


def _cmd_flow(args: argparse.Namespace) -> int:
    cfg = _resolve(args, "flow")
    summary = run_experiment(cfg)
    return _report(summary)


def _report(summary: dict) -> int:
    if summary["error"] is not None:
        print(f"error in {summary['name']}: {summary['error']['message']}", file=sys.stderr)
        return 1
    res = summary["results"]
    print(
        f"{summary['name']}: {res['termination']} "
        f"final_gap={res['final_gap']:.3e} "
        f"final_grad_norm_sq={res['final_grad_norm_sq']:.3e} "
        f"audit={'pass' if summary['audit']['passed'] else 'FAIL'}"
    )
    print(f"artifacts: {summary['config']['output']}/{summary['csv']}")
    return 0


def _cmd_suite(args: argparse.Namespace) -> int:
    raw: dict = {}
    if args.config:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
    raw = apply_overrides(raw, args.overrides)
    if args.seed is not None:
        raw["seed"] = args.seed
    out = args.out or raw.get("output", "out")
    configs = suite_configs_from_dict(raw)
    for cfg in configs:
        cfg.output = out
    summaries, rows = run_suite(configs, out)
    print(format_table(rows))
    failed = [s["name"] for s in summaries if s["error"] is not None]
    if failed:
        print(f"failed runs: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_rates(args: argparse.Namespace) -> int:
    rows = read_trace_csv(Path(args.csv))
    index_col = args.index or ("t" if "t" in rows[0] else "k")
    pairs = [(r[index_col], r[args.column]) for r in rows]
    pairs = [(i, v) for i, v in pairs if v > 0.0 and i > 0.0]
    window = None
    if args.window:
        lo, hi = args.window.split(",")
        window = (float(lo), float(hi))
    fit = fit_rate(pairs, window)
    print(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_check(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for target in args.artifacts:
        p = Path(target)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    if not paths:
        print("no artifacts to check", file=sys.stderr)
        return 1
    all_ok = True
    for path in paths:
        summary, rows = load_artifact(path)
        if summary.get("error"):
            print(f"== {summary['name']}: recorded error, skipping audit")
            all_ok = False
            continue
        if not rows:
            print(f"== {summary['name']}: empty trace, nothing to audit")
            continue
        checks = (
            audit_discrete(rows, summary["meta"])
            if summary["kind"] == "discrete"
            else audit_flow(rows, summary["meta"])
        )
        ok = all(c.passed for c in checks)
        all_ok = all_ok and ok
        print(f"== {summary['name']}")
        print(render_checks(checks))
    return 0 if all_ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accelflow",
        description="High-order acceleration drivers, closed-loop flow integration, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one discrete experiment")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_flow = sub.add_parser("flow", help="integrate the closed-loop system once")
    _add_common(p_flow)
    p_flow.set_defaults(func=_cmd_flow)

    p_suite = sub.add_parser("suite", help="run an experiment matrix")
    _add_common(p_suite)
    p_suite.set_defaults(func=_cmd_suite)

    p_rates = sub.add_parser("rates", help="fit a power-law slope from a trace CSV")
    p_rates.add_argument("--csv", required=True, help="trace CSV path")
    p_rates.add_argument("--column", default="f_gap", help="value column (default f_gap)")
    p_rates.add_argument("--index", help="index column (default k, or t for flow traces)")
    p_rates.add_argument("--window", metavar="LO,HI", help="index window, inclusive")
    p_rates.set_defaults(func=_cmd_rates)

    p_check = sub.add_parser("check", help="audit existing artifacts")
    p_check.add_argument(
        "artifacts", nargs="+", help="summary JSON files or directories of them"
    )
    p_check.set_defaults(func=_cmd_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
