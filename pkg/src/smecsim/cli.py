"""Command line: ``smec-sim run | compare | estimator-report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import EDGE_POLICIES, RAN_POLICIES, ConfigError, load_scenario, with_overrides
from .metrics import compare, estimator_report, format_compare, load_summary, write_outputs
from .sim import simulate
from .simcore import ContractViolation

logger = logging.getLogger("smecsim")


def _cmd_run(args) -> int:
    sc = with_overrides(load_scenario(args.scenario), args.seed, args.duration)
    early_drop = False if args.no_early_drop else None
    result = simulate(sc, args.policy, args.edge_policy, early_drop=early_drop,
                      grant_trace=args.grant_trace)
    out = Path(args.out or f"runs/{sc.name}-{args.policy}-{args.edge_policy}-s{sc.seed}")
    summary = write_outputs(result, out)
    for app, st in summary["apps"].items():
        print(f"{app:<3} requests={st['requests']:<6} slo_satisfaction={st['slo_satisfaction']:.3f} "
              f"dropped={st['dropped']:<5} e2e_p99_us={st['e2e_us']['p99']}")
    print(f"wrote {out}")
    return 0


def _cmd_compare(args) -> int:
    cmp = compare([load_summary(d) for d in args.runs])
    print(json.dumps(cmp, indent=2, sort_keys=True) if args.json else format_compare(cmp))
    return 0


def _cmd_estimator_report(args) -> int:
    print(json.dumps(estimator_report(args.run), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smec-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario under one policy pair")
    r.add_argument("--scenario", required=True,
                   help="scenario YAML path, or a bundled name (static, static_scaled, dynamic)")
    r.add_argument("--policy", choices=RAN_POLICIES, default="smec")
    r.add_argument("--edge-policy", choices=EDGE_POLICIES, default="smec_edge")
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="simulated seconds")
    r.add_argument("--out", help="output directory")
    r.add_argument("--grant-trace", action="store_true", help="also write grants.csv")
    r.add_argument("--no-early-drop", action="store_true", help="disable early drop at the edge")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="side-by-side headline metrics of finished runs")
    c.add_argument("runs", nargs="+", help="run output directories")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=_cmd_compare)

    e = sub.add_parser("estimator-report", help="start-time, network and processing estimate errors")
    e.add_argument("run", help="run output directory")
    e.set_defaults(func=_cmd_estimator_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
