"""Command-line entry point: ``dampflow <command> ...``.

Exit codes: 0 when every evaluated check passes, 2 when a check fails,
3 when the integration itself fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .damping import certify, from_config


def _load_scenario(arg):
    path = Path(arg)
    if not path.exists():
        path = harness.bundled_path(arg)
    return harness.ScenarioConfig.from_json(path)


def _print_report(report, stream=None):
    stream = stream or sys.stdout
    if report.banner:
        print(f"== {report.banner} ==", file=stream)
    print(f"scenario {report.scenario}: {report.status}", file=stream)
    if report.error:
        print(f"  error: {report.error}", file=stream)
    for c in report.checks:
        value = c["value"]
        shown = f"{value:.3e}" if isinstance(value, float) else str(value)
        print(f"  {c['verdict']:26s} {c['name']:32s} {shown}", file=stream)


def cmd_certify(args):
    path = Path(args.damping)
    with open(path) as fh:
        cfg = json.load(fh)
    cert = certify(from_config(cfg, path.parent))
    print(json.dumps(cert.to_dict(), indent=2))
    return 0


def cmd_run(args):
    cfg = _load_scenario(args.scenario)
    report = harness.run_scenario(cfg, args.out)
    _print_report(report)
    return report.exit_code


def cmd_sweep(args):
    cfg = _load_scenario(args.scenario)
    Ks = [float(k) for k in args.K.split(",") if k.strip()]
    out = args.out or Path("runs") / f"{cfg.id}-sweep"
    rows = harness.sweep_K(cfg, Ks, workers=args.workers, out_dir=out)
    print(",".join(harness.SWEEP_COLUMNS))
    for r in rows:
        print(",".join("" if r[k] is None else str(r[k]) for k in harness.SWEEP_COLUMNS))
    return harness.EXIT_INTEGRATION_FAILED if any(r["status"] != "ok" for r in rows) else 0


def cmd_limit(args):
    cfg = _load_scenario(args.scenario)
    report = harness.explore_limit_case(cfg, args.out)
    _print_report(report)
    if report.decay:
        print("  decay (no pass/fail claim): " + json.dumps(report.decay))
    return report.exit_code


def cmd_oracle(args):
    cfg = _load_scenario(args.scenario)
    res = harness.compare_oracle(cfg, h=args.h)
    print(json.dumps(res, indent=2))
    return 0


def cmd_selftest(args):
    from .acceptance import AcceptanceSuite

    suite = AcceptanceSuite(args.workdir)
    failed = 0
    for outcome in suite.run_all():
        print(outcome.line(), flush=True)
        failed += not outcome.passed
    return harness.EXIT_CHECK_FAILED if failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dampflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="certify a damping descriptor (JSON)")
    p.add_argument("damping")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("run", help="run a scenario and write its artifacts")
    p.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat a scenario for several K")
    p.add_argument("scenario")
    p.add_argument("--K", required=True, help="comma-separated K values, e.g. 3.5,4,6,10")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("limit-k3", help="run a scenario with K = 3 (exploratory)")
    p.add_argument("scenario")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("oracle", help="compare the adaptive solver with fixed-step RK4")
    p.add_argument("scenario")
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="run the acceptance suite on the bundled scenarios")
    p.add_argument("--workdir", type=Path, default=None)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
