"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 numeric failure or refusal, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as eio
from .aggregate import (
    aggregate_homogeneous,
    aggregate_piecewise,
    collapse_to_survival,
)
from .estimate import OK, fit_homogeneous, fit_mortality, fit_piecewise, fit_table
from .inference import RefusedError, contrast, pairwise_age_tests
from .likelihood import loglik, loglik_mortality, loglik_piecewise
from .model import DEFAULT_TAU, DEFAULT_WINDOW, TRANSITIONS, Partition, PiecewiseRateSet, RateSet, Transition
from .montecarlo import RefusedStudy, consistency_curve, coverage_study, normality_with_rerun
from .simulate import observation_probability, simulate_cohort
from .svgplot import step_plot_svg

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class Refusal(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _partition(text: str) -> Partition:
    try:
        return Partition(tuple(float(x) for x in text.split(",")))
    except ValueError as exc:
        raise ValueError(f"bad --partition {text!r}: {exc}") from None


def _load_config(args) -> eio.RunConfig:
    cfg = eio.read_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "reps", None) is not None:
        cfg = cfg.replace(reps=args.reps)
    if getattr(args, "level", None) is not None:
        cfg = cfg.replace(level=args.level)
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = simulate_cohort(cfg.rates, cfg.scheme, cfg.n_all, cfg.seed)
    eio.write_cohort(cohort.records(), out / "persons.csv", out / "events.csv")
    beta = observation_probability(cfg.rates, cfg.scheme)
    truth = {
        "config": eio.format_config(cfg),
        "beta": beta,
    }
    if isinstance(cfg.rates, PiecewiseRateSet):
        truth["partition"] = list(cfg.rates.partition.breaks)
        truth["rates"] = {t.code: row.tolist() for t, row in zip(TRANSITIONS, cfg.rates.values)}
    else:
        truth["rates"] = cfg.rates.as_dict()
    (out / "truth.json").write_text(_dump(truth), encoding="utf-8")
    summary = dict(cohort.summary.as_dict(), beta=beta, seed=cfg.seed)
    (out / "summary.json").write_text(_dump(summary), encoding="utf-8")
    print(f"n_all={summary['n_all']} n={summary['n']} beta_hat={summary['beta_hat']:.6f} beta={beta:.6f}")
    return EXIT_OK


def _fit_from_files(args):
    records = eio.read_cohort(args.persons, args.events, args.window)
    if args.model == "mortality":
        if args.partition:
            raise ValueError("--partition does not apply to the mortality model")
        return fit_mortality(collapse_to_survival(records), args.window)
    if args.partition:
        return fit_piecewise(aggregate_piecewise(records, _partition(args.partition)))
    return fit_homogeneous(aggregate_homogeneous(records), horizon=args.tau)


def cmd_fit(args) -> int:
    fit = _fit_from_files(args)
    if args.out:
        eio.write_fit(fit, args.out, args.level)
    else:
        sys.stdout.write(",".join(eio.FIT_HEADER) + "\n")
        for row in eio.fit_rows(fit, args.level):
            sys.stdout.write(",".join(row) + "\n")
    if args.out or args.table:
        print(fit_table(fit))
    return EXIT_OK


def _pair(text: str) -> tuple[str, str]:
    for sep in (",", ":", " vs "):
        if sep in text:
            a, b = (x.strip() for x in text.split(sep, 1))
            return Transition.parse(a).code, Transition.parse(b).code
    raise ValueError(f"pair must look like S1D,HD; got {text!r}")


def cmd_contrast(args) -> int:
    fit = eio.read_fit(args.fit)
    other = eio.read_fit(args.other) if args.other else fit
    a, b = _pair(args.pair)
    if fit.partition is not None and args.interval is None:
        tests = pairwise_age_tests(fit, a, b, args.level, other=other)
        out = {
            "first": tests.first,
            "second": tests.second,
            "level": args.level,
            "n_comparisons": tests.n_comparisons,
            "tests": [
                {
                    "interval": list(t.interval),
                    "result": t.result.as_dict() if t.result else None,
                    "skipped": t.skipped,
                }
                for t in tests.tests
            ],
        }
    else:
        pa = fit.get(a, args.interval)
        pb = other.get(b, args.interval)
        for p in (pa, pb):
            if p.status != OK:
                raise Refusal(f"{p.transition}: status {p.status}, contrast needs ok estimates")
        out = dict(contrast(pa, pb, args.level).as_dict(), first=a, second=b)
    sys.stdout.write(_dump(out))
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _load_config(args)
    report = coverage_study(cfg, model=args.model, workers=args.workers)
    verdict = normality_with_rerun(cfg, model=args.model, workers=args.workers, first=report)
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    else:
        sys.stdout.write(report.to_json())
    print(report.table())
    checks = report.checks()
    failed = [
        f"{label}:{name}"
        for label, c in checks.items()
        for name, ok in c.items()
        if not ok and not (name == "ks_normality" and label not in verdict.failed)
    ]
    if verdict.rerun is not None:
        print("normality rerun: " + ("passed" if verdict.passed else "failed for " + ", ".join(verdict.failed)))
    print("thresholds: " + ("all met" if not failed else "violated " + ", ".join(failed)))
    if args.strict and failed:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_consistency(args) -> int:
    cfg = _load_config(args)
    sizes = [int(x) for x in args.n_all.split(",")]
    curve = consistency_curve(cfg, sizes, reps=args.reps, model=args.model, workers=args.workers)
    sys.stdout.write(_dump(curve.as_dict()))
    print(curve.table())
    return EXIT_OK


def cmd_report(args) -> int:
    fit = eio.read_fit(args.fit)
    if args.plot and fit.model != "piecewise":
        raise ValueError("--plot needs a piecewise fit; refit with --partition")
    print(fit_table(fit))
    if fit.model == "piecewise" and {"S1D", "HD"} <= {p.transition for p in fit.params}:
        tests = pairwise_age_tests(fit, "S1D", "HD", args.level)
        print()
        print(f"S1D vs HD per interval ({tests.n_comparisons} comparisons, no multiplicity correction)")
        for t in tests.tests:
            iv = f"]{50 + t.interval[0]:g},{50 + t.interval[1]:g}]"
            if t.result is None:
                print(f"{iv:>12}  skipped ({t.skipped})")
            else:
                r = t.result
                print(f"{iv:>12}  diff={r.difference:+.4f} se={r.se:.4f} z={r.z:+.2f} p={r.p_value:.3g}")
    if args.plot:
        if fit.partition.n_intervals < 2:
            raise ValueError("--plot needs at least two intervals; refit with a finer --partition")
        Path(args.plot).write_text(step_plot_svg(fit, level=args.level), encoding="utf-8")
    return EXIT_OK


def _rates_from_args(args):
    if args.rates_config:
        return eio.read_config(args.rates_config).rates
    values = {}
    for item in args.rate or []:
        key, _, val = item.partition("=")
        values[key.strip()] = float(val)
    if not values:
        raise ValueError("give --rates-config or at least one --rate hj=value")
    if args.model == "mortality":
        return values
    return RateSet.from_mapping(values)


def cmd_loglik(args) -> int:
    records = eio.read_cohort(args.persons, args.events, args.window)
    rates = _rates_from_args(args)
    if args.model == "mortality":
        lam = rates["Hd"]
        value = loglik_mortality(collapse_to_survival(records), lam, args.window)
        labels = ["Hd"]
    elif isinstance(rates, PiecewiseRateSet):
        value = loglik_piecewise(aggregate_piecewise(records, rates.partition), rates)
        labels = [f"{t.code}[{lo:g},{hi:g}]" for t in TRANSITIONS for lo, hi in rates.partition.intervals()]
    else:
        value = loglik(aggregate_homogeneous(records), rates)
        labels = [t.code for t in TRANSITIONS]
    sys.stdout.write(_dump(value.as_dict(labels)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehe", description="Event-history intensity estimation under left truncation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate an observed cohort from a config")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    def cohort_args(q):
        q.add_argument("persons")
        q.add_argument("events")
        q.add_argument("--window", type=float, default=DEFAULT_WINDOW)
        q.add_argument("--model", choices=["homogeneous", "mortality"], default="homogeneous")

    f = sub.add_parser("fit", help="fit intensities to cohort files")
    cohort_args(f)
    f.add_argument("--partition", help="comma-separated breakpoints in years since 50, e.g. 0,5,10,63")
    f.add_argument("--tau", type=float, default=DEFAULT_TAU)
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--out", help="fit csv path (default: csv on stdout)")
    f.add_argument("--table", action="store_true", help="also print an aligned table")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("contrast", help="Wald contrast of two fitted intensities")
    c.add_argument("fit")
    c.add_argument("--pair", required=True, help="e.g. S1D,HD (first minus second)")
    c.add_argument("--interval", type=int, help="interval index for piecewise fits")
    c.add_argument("--other", help="take the second intensity from this fit file")
    c.add_argument("--level", type=float, default=0.95)
    c.set_defaults(func=cmd_contrast)

    v = sub.add_parser("coverage", help="Monte Carlo coverage study")
    v.add_argument("config")
    v.add_argument("--reps", type=int)
    v.add_argument("--level", type=float)
    v.add_argument("--seed", type=int)
    v.add_argument("--model", choices=["homogeneous", "piecewise", "mortality"])
    v.add_argument("--workers", type=int)
    v.add_argument("--json", help="write the JSON report here instead of stdout")
    v.add_argument("--strict", action="store_true", help="exit 2 if any threshold is violated")
    v.set_defaults(func=cmd_coverage)

    k = sub.add_parser("consistency", help="RMSE against latent cohort size")
    k.add_argument("config")
    k.add_argument("--n-all", default="1000,10000,100000")
    k.add_argument("--reps", type=int)
    k.add_argument("--seed", type=int)
    k.add_argument("--model", choices=["homogeneous", "piecewise", "mortality"])
    k.add_argument("--workers", type=int)
    k.set_defaults(func=cmd_consistency)

    r = sub.add_parser("report", help="summarize a fit file, optionally as an SVG step plot")
    r.add_argument("fit")
    r.add_argument("--plot", help="SVG output path")
    r.add_argument("--level", type=float, default=0.95)
    r.set_defaults(func=cmd_report)

    ll = sub.add_parser("loglik", help="log-likelihood, score and Hessian at given rates")
    cohort_args(ll)
    ll.add_argument("--rates-config", help="config file whose rates are used")
    ll.add_argument("--rate", action="append", help="hj=value, repeatable")
    ll.set_defaults(func=cmd_loglik)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except eio.CohortValidationError as exc:
        print(f"validation error:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except eio.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RefusedError, RefusedStudy, Refusal, ArithmeticError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
