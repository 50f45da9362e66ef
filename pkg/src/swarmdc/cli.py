"""Command line interface: simulate, fpk, compare, verify."""

from __future__ import annotations

import argparse
import sys

from .scenario import (
    ScenarioError,
    compare_mc_fpk,
    parse_config,
    run_fpk_scenario,
    run_scenario,
)
from .verify import run_verify


def _add_config_out(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True,
                   help="scenario config file (bundled name like paper.cfg also works)")
    p.add_argument("--out", required=True, help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="swarmdc",
        description="Density control laboratory for stochastic swarms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the agent-based closed loop")
    _add_config_out(p_sim)
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override the seed from the config file")

    p_fpk = sub.add_parser("fpk", help="run the mean-field PDE under ideal feedback")
    _add_config_out(p_fpk)

    p_cmp = sub.add_parser("compare",
                           help="uncontrolled agents vs the PDE from one initial density")
    _add_config_out(p_cmp)

    sub.add_parser("verify", help="run the built-in invariant checks")

    args = parser.parse_args(argv)

    if args.command == "verify":
        return run_verify()

    cfg = parse_config(args.config)
    try:
        if args.command == "simulate":
            records = run_scenario(cfg, out_dir=args.out, seed=args.seed)
            last = records[-1]
            print(f"simulate: {len(records)} records, "
                  f"l2_err {records[0].l2_err:.4f} -> {last.l2_err:.4f}, "
                  f"outputs in {args.out}")
        elif args.command == "fpk":
            records = run_fpk_scenario(cfg, out_dir=args.out)
            print(f"fpk: {len(records)} records, "
                  f"l2_err {records[0].l2_err:.4f} -> {records[-1].l2_err:.4f}, "
                  f"outputs in {args.out}")
        elif args.command == "compare":
            records = compare_mc_fpk(cfg, out_dir=args.out)
            print(f"compare: {len(records)} snapshots, "
                  f"final L1 distance {records[-1].l1_dist:.4f}, outputs in {args.out}")
    except ScenarioError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
