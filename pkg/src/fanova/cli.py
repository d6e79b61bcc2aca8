"""Command line entry point: ``fanova <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .closure import pairwise_followup
from .curves import load_dataset, smooth_dataset, write_fitted_csv
from .errors import FanovaError
from .permute import generate_plan, null_matrix
from .pipeline import AnalysisConfig, load_intervals, run_analysis
from .report import plot_means, plot_power, render_report
from .simulate import STUDY_BETAS, SimConfig, gen_demo_erythrograms, run_power
from .stats import IntervalPartition

log = logging.getLogger("fanova")


def _lam(text):
    return text if text == "gcv" else float(text)


def _knots(text):
    return text if text == "observed" else int(text)


def _gate(text):
    if text is None or text == "strict":
        return None
    if text.startswith("marginal:"):
        return float(text.split(":", 1)[1])
    raise argparse.ArgumentTypeError("gate must be 'strict' or 'marginal:<p>'")


def _add_smoothing(p):
    p.add_argument("--knots", type=_knots, default="observed",
                   help="'observed' (knot at every time point) or a count of equispaced knots")
    p.add_argument("--lambda", dest="lam", type=_lam, default="gcv",
                   help="roughness penalty weight, or 'gcv' (default) for per-curve selection")
    p.add_argument("--gcv-gamma", type=float, default=1.4, help="GCV cost per effective degree of freedom")


def _add_perm(p):
    p.add_argument("--permutations", "-B", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fanova", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="gatekept dataset/interval/pairwise analysis")
    p.add_argument("--data", nargs="+", required=True, help="one CSV per dataset")
    p.add_argument("--intervals", required=True, help="JSON list of {name, a, b}")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_perm(p)
    p.add_argument("--method", choices=["full", "shortcut", "combined"], default="combined")
    p.add_argument("--gate", type=_gate, default=None,
                   help="pairwise gate: 'strict' (alpha) or 'marginal:<p>'")
    p.add_argument("--raw-proportion", action="store_true",
                   help="p = #{null >= observed}/B instead of the add-one estimator")
    _add_smoothing(p)
    p.add_argument("--out", help="report file (stdout if omitted)")
    p.add_argument("--format", choices=["json", "text", "csv"], default=None,
                   help="default: from --out extension, else text")
    p.add_argument("--null-out", help="directory for per-dataset null statistic CSVs")

    p = sub.add_parser("pairwise", help="closed pairwise comparisons within one interval")
    p.add_argument("--data", required=True)
    p.add_argument("--intervals", required=True)
    p.add_argument("--interval", required=True, help="name of the interval to examine")
    p.add_argument("--interval-p", type=float, required=True,
                   help="adjusted p-value of that interval (used for the all-groups node)")
    p.add_argument("--alpha", type=float, default=0.05)
    _add_perm(p)
    _add_smoothing(p)
    p.add_argument("--out")

    p = sub.add_parser("smooth", help="fit curves and export them on the common grid")
    p.add_argument("--data", required=True)
    _add_smoothing(p)
    p.add_argument("--out", required=True, help="CSV of fitted values (grid x curves)")
    p.add_argument("--plot", help="optional SVG of the group means")
    p.add_argument("--intervals", help="interval rules for the plot")

    p = sub.add_parser("plot", help="SVG of group mean curves with interval rules")
    p.add_argument("--data", required=True)
    p.add_argument("--intervals")
    _add_smoothing(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo power study on the M1/M2 models")
    p.add_argument("--model", choices=["M1", "M2"], default="M2")
    p.add_argument("--m", type=int, choices=[5, 10], default=5)
    p.add_argument("--nsim", type=int, default=200)
    p.add_argument("--permutations", "-B", type=int, default=200)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--betas", type=float, nargs="+", default=list(STUDY_BETAS))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--pairwise", action="store_true")
    p.add_argument("--smoothing", choices=["interpolate", "gcv"], default="interpolate")
    p.add_argument("--full-scale", action="store_true", help="nsim = permutations = 1000")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="power table CSV")
    p.add_argument("--plot", help="optional SVG power curves")

    p = sub.add_parser("demo", help="write the synthetic erythrogram datasets")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=2013)
    return parser


def _format(args):
    if args.format:
        return args.format
    if args.out:
        ext = os.path.splitext(args.out)[1].lower().lstrip(".")
        if ext in ("json", "csv"):
            return ext
    return "text"


def _cmd_test(args):
    cfg = AnalysisConfig(
        data=list(args.data),
        intervals=load_intervals(args.intervals),
        alpha=args.alpha,
        permutations=args.permutations,
        seed=args.seed,
        method=args.method,
        knots=args.knots,
        lam=args.lam,
        gcv_gamma=args.gcv_gamma,
        gate=args.gate,
        add_one=not args.raw_proportion,
    )
    report = run_analysis(cfg)
    text = render_report(report, _format(args), args.out)
    if args.null_out:
        os.makedirs(args.null_out, exist_ok=True)
        for name, nm in report.nulls.items():
            nm.to_csv(os.path.join(args.null_out, f"{name}_nulls.csv"))
    if not args.out:
        sys.stdout.write(text)


def _smoothed(args):
    return smooth_dataset(load_dataset(args.data), knots=args.knots, lam=args.lam, gamma=args.gcv_gamma)


def _cmd_pairwise(args):
    ds = _smoothed(args)
    part = IntervalPartition.from_bounds(ds.grid, load_intervals(args.intervals))
    plan = generate_plan(args.seed, args.permutations, ds.labels)
    null_matrix(ds, part, plan)  # validates plan against the dataset
    rep = pairwise_followup(ds, part[part.index(args.interval)], args.interval_p, plan)
    out = json.dumps(rep.to_dict(args.alpha), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)


def _cmd_smooth(args):
    ds = _smoothed(args)
    write_fitted_csv(ds, args.out)
    if args.plot:
        part = IntervalPartition.from_bounds(ds.grid, load_intervals(args.intervals)) if args.intervals else None
        plot_means(ds, args.plot, part)


def _cmd_plot(args):
    ds = _smoothed(args)
    part = IntervalPartition.from_bounds(ds.grid, load_intervals(args.intervals)) if args.intervals else None
    plot_means(ds, args.out, part)


def _cmd_simulate(args):
    nsim, B = (1000, 1000) if args.full_scale else (args.nsim, args.permutations)
    cfg = SimConfig(model=args.model, m=args.m, nsim=nsim, B=B, seed=args.seed, alpha=args.alpha,
                    pairwise=args.pairwise, smoothing=args.smoothing)
    table = run_power(cfg, args.betas, n_jobs=args.jobs)
    table.to_csv(args.out)
    if args.plot:
        plot_power(table, args.plot, title=f"{args.model}, m={args.m}")


def _cmd_demo(args):
    gen_demo_erythrograms(args.seed, args.out)


COMMANDS = {
    "test": _cmd_test,
    "pairwise": _cmd_pairwise,
    "smooth": _cmd_smooth,
    "plot": _cmd_plot,
    "simulate": _cmd_simulate,
    "demo": _cmd_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        COMMANDS[args.command](args)
    except (FanovaError, OSError) as exc:
        print(f"fanova: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
