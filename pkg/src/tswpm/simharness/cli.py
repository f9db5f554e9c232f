"""Command line entry point: ``tswpm run|bounds|validate``."""

import argparse
import csv
import logging
import math
import sys

from ..errors import LocalizationError, ParseError, ValidationError
from ..geometry import dop_rating
from .outputs import emit_outputs
from .runner import drop_bounds, run_monte_carlo
from .scenario import SOLVER_NAMES, load_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

log = logging.getLogger("tswpm")


def _solver_list(text):
    names = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in names if s not in SOLVER_NAMES]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown solvers {unknown}; choose from {SOLVER_NAMES}")
    return names


def build_parser():
    parser = argparse.ArgumentParser(prog="tswpm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log defaults and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the Monte Carlo evaluation")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--solvers", type=_solver_list, help="comma separated solver names")
    run.add_argument("--channel", choices=("awgn", "multipath"))
    run.add_argument("--tx-power", type=float, help="dBm")
    run.add_argument("--workers", type=int, default=1, help="worker processes")

    bounds = sub.add_parser("bounds", help="print GDOP/PEB per UE drop")
    bounds.add_argument("--scenario", required=True)
    bounds.add_argument("--drops", type=int, default=20)

    validate = sub.add_parser("validate", help="check a scenario file")
    validate.add_argument("--scenario", required=True)
    return parser


def _load(args):
    scn = load_scenario(args.scenario)
    if args.command == "run":
        if args.trials is not None and args.trials < 1:
            raise ValidationError("must be at least 1", field="trials")
        scn = scn.with_overrides(
            trials=args.trials,
            seed=args.seed,
            solvers=args.solvers,
            channel=args.channel,
            tx_power=args.tx_power,
        )
    return scn


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        scn = _load(args)
    except (ParseError, ValidationError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID

    try:
        if args.command == "validate":
            print(f"{args.scenario}: ok ({len(scn.anchors)} anchors, tag={scn.geometry_tag})")
        elif args.command == "bounds":
            writer = csv.writer(sys.stdout, lineterminator="\n")
            writer.writerow(("drop", "x", "y", "gdop", "rating", "peb_m", "ref_snr_db"))
            for row in drop_bounds(scn, args.drops):
                rating = dop_rating(row["gdop"]) if math.isfinite(row["gdop"]) else "Undefined"
                writer.writerow(
                    (
                        row["drop"],
                        f"{row['x']:.3f}",
                        f"{row['y']:.3f}",
                        f"{row['gdop']:.4f}",
                        rating,
                        f"{row['peb_m']:.6g}",
                        f"{row['ref_snr_db']:.2f}",
                    )
                )
        else:
            records, summary = run_monte_carlo(scn, workers=max(1, args.workers))
            out = emit_outputs(records, summary, args.out, scn)
            for name, s in summary.solvers.items():
                print(
                    f"{name:9s} median={s.median_error_m:.4g} m  p90={s.p90_error_m:.4g} m  "
                    f"iters={s.mean_iterations:.1f}  failures={s.failure_rate:.1%}"
                )
            print(f"outputs written to {out}")
    except LocalizationError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
