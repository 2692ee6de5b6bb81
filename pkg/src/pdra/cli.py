"""Command-line experiment runner.

Subcommands map one-to-one onto the experiment scenarios; `smoke` runs
all four at a tiny scale to exercise the plumbing.  With --check the
process exits 0 only if every acceptance assertion of the scenario holds
(1 on assertion failure, 2 on configuration errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (SCALE_PARAMS, ExperimentSpec, all_checks_pass,
                          run_experiment, run_from_manifest)

_SCENARIO_BY_COMMAND = {
    "bandwidth-ccdf": "bandwidth_ccdf",
    "joint-curve": "joint_bandwidth_curve",
    "convergence": "convergence_table",
    "water-filling": "water_filling_check",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="TOML file overriding the default system constants")
    p.add_argument("--trials", type=int, default=None,
                   help="override the scale's trial count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=sorted(SCALE_PARAMS), default="desk")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--check", action="store_true",
                   help="exit nonzero unless all acceptance assertions pass")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdra", description="Primal-dual resource-allocation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in _SCENARIO_BY_COMMAND:
        _add_common(sub.add_parser(cmd, help=f"run the {cmd} experiment"))
    smoke = sub.add_parser("smoke", help="tiny end-to-end run of all scenarios")
    _add_common(smoke)
    rerun = sub.add_parser("rerun", help="re-run an experiment from its manifest")
    rerun.add_argument("--manifest", type=Path, required=True)
    rerun.add_argument("--check", action="store_true")
    return parser


def _run_one(scenario: str, args) -> dict:
    spec = ExperimentSpec(
        scenario=scenario,
        trials=args.trials,
        seed=args.seed,
        scale=args.scale,
        output_dir=args.out,
        config_path=args.config,
    )
    result = run_experiment(spec)
    print(f"{scenario}: wrote {result['manifest']}")
    for key, val in result["checks"].items():
        print(f"  {key}: {val}")
    return result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            result = run_from_manifest(args.manifest)
            manifest = json.loads(Path(args.manifest).read_text())
            print(f"re-ran {manifest['experiment']} from manifest")
            return 0 if (not args.check or all_checks_pass(result["checks"])) else 1
        if args.command == "smoke":
            args.scale = "smoke"
            ok = True
            for scenario in _SCENARIO_BY_COMMAND.values():
                result = _run_one(scenario, args)
                ok = ok and all_checks_pass(result["checks"])
            # smoke mode exercises plumbing; statistical checks are not binding
            return 0
        result = _run_one(_SCENARIO_BY_COMMAND[args.command], args)
        if args.check and not all_checks_pass(result["checks"]):
            return 1
        return 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
