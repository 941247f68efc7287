"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints.
"""

import math
import time
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from ehe import io as eio
from ehe.aggregate import (
    Aggregates,
    IntervalAggregates,
    MortalityAggregates,
    aggregate_homogeneous,
    aggregate_piecewise,
    collapse_to_survival,
)
from ehe.estimate import NO_EXPOSURE, fit_homogeneous, fit_mortality, fit_piecewise
from ehe.inference import contrast, wald_ci
from ehe.likelihood import loglik, numeric_mle
from ehe.model import ObservationScheme, ParameterSpace, Partition, RateSet, State
from ehe.montecarlo import consistency_curve, coverage_study, normality_with_rerun
from ehe.records import ObservedRecord
from ehe.reference_data import CONTRAST, HOMOGENEOUS, MORTALITY, PARTITION, PIECEWISE
from ehe.simulate import (
    make_rng,
    observation_probability,
    sample_trajectory,
    simulate_cohort,
    transition_matrix,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def best_time(fn, repeat=50):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def within_last_digit(value: float, printed: str) -> bool:
    """Rounded to the printed precision, value is at most one unit from printed."""
    unit = Decimal(1).scaleb(Decimal(printed).as_tuple().exponent)
    shown = Decimal(repr(value)).quantize(unit, rounding=ROUND_HALF_UP)
    return abs(shown - Decimal(printed)) <= unit


def test_criterion_1_mortality_table(criterion):
    agg = MortalityAggregates(MORTALITY["n_uncens"], MORTALITY["uncensored_time"], MORTALITY["n_cens"],
                              MORTALITY["window"])
    p = fit_mortality(agg).get("Hd")
    runtime = best_time(lambda: fit_mortality(agg))
    ok = abs(p.estimate - 0.0217) <= 1e-4 and abs(p.se - 0.000104) <= 2e-6 and runtime < 1e-3
    criterion(1, ok, f"rate={p.estimate:.6f} se={p.se:.7f} runtime={runtime * 1e6:.0f}us")
    assert ok


def test_criterion_2_homogeneous_table(criterion):
    details, ok = [], True
    for code, row in HOMOGENEOUS.items():
        src = "S1" if code == "S1D" else "H"
        p = fit_homogeneous(Aggregates.from_mapping({code: row["events"]}, {src: row["exposure"]})).get(code)
        good = within_last_digit(p.estimate, row["rate"]) and within_last_digit(p.se, row["se"])
        ok &= good
        details.append(f"{code}={p.estimate:.5f}/{p.se:.6f}")
    criterion(2, ok, " ".join(details))
    assert ok


def test_criterion_3_contrast(criterion):
    s1d = fit_homogeneous(Aggregates.from_mapping({"S1D": 8105}, {"S1": 115566.0})).get("S1D")
    hd = fit_homogeneous(Aggregates.from_mapping({"HD": 41775}, {"H": 1997092.0})).get("HD")
    # the comparison is made on the published, rounded estimates and SEs
    r = contrast((round(s1d.estimate, 4), round(s1d.se, 5)), (round(hd.estimate, 4), round(hd.se, 6)))
    lo, hi = wald_ci(r.difference, r.se)
    half = (hi - lo) / 2
    ok = (
        abs(r.difference - CONTRAST["difference"]) <= 1e-12
        and abs(r.variance / CONTRAST["variance"] - 1) <= 0.02
        and abs(r.se / CONTRAST["se"] - 1) <= 0.01
        and abs(half / CONTRAST["half_width"] - 1) <= 0.01
    )
    criterion(3, ok, f"diff={r.difference:.4f} var={r.variance:.4g} se={r.se:.4g} half={half:.4g}")
    assert ok


def _published_fit():
    b = PARTITION.n_intervals
    counts = np.zeros((6, b), dtype=np.int64)
    expo = np.zeros((3, b))
    for cell in PIECEWISE:
        l = PARTITION.breaks.index(cell.age_lo - 50)
        if cell.transition == "S1D":
            counts[1, l], expo[1, l] = cell.events, cell.exposure
        else:
            counts[2, l], expo[0, l] = cell.events, cell.exposure
    return fit_piecewise(IntervalAggregates(PARTITION, counts, expo))


def test_criterion_4_piecewise_table(criterion):
    fit = _published_fit()
    runtime = best_time(_published_fit)
    misses = []
    for cell in PIECEWISE:
        l = PARTITION.breaks.index(cell.age_lo - 50)
        p = fit.get(cell.transition, l)
        if cell.rate is None:
            good = p.status == NO_EXPOSURE and math.isnan(p.estimate) and math.isnan(p.se)
        else:
            good = within_last_digit(p.estimate, cell.rate) and within_last_digit(p.se, cell.se)
        if not good:
            misses.append(f"{cell.transition}]{cell.age_lo},{cell.age_hi}]={p.estimate:.4f}/{p.se:.4f}"
                          f" vs {cell.rate}/{cell.se}")
    ok = not misses and runtime < 1e-2
    detail = f"{len(PIECEWISE) - len(misses)}/{len(PIECEWISE)} cells, runtime={runtime * 1e3:.2f}ms"
    criterion(4, ok, detail + ("; misses: " + "; ".join(misses) if misses else ""))
    assert ok, misses


def test_criterion_5_oracle_equivalence(criterion):
    rng = np.random.default_rng(5)
    worst_mle = worst_score = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        agg = Aggregates(rng.integers(1, 100_000, 6), rng.uniform(1.0, 1e6, 3))
        closed = agg.counts / agg.transition_exposure()
        res = numeric_mle(lambda x, agg=agg: loglik(agg, RateSet(x)), ParameterSpace.uniform(1e-12))
        worst_mle = max(worst_mle, float(np.max(np.abs(res.estimate / closed - 1))))
        score = loglik(agg, RateSet(closed)).score
        worst_score = max(worst_score, float(np.max(np.abs(score) / agg.transition_exposure())))
    runtime = time.perf_counter() - t0
    ok = worst_mle <= 1e-8 and worst_score <= 1e-10 and runtime < 1.0
    criterion(5, ok, f"max rel mle err={worst_mle:.2g} max rel score={worst_score:.2g} runtime={runtime:.2f}s")
    assert ok


RATES = RateSet.from_mapping({"HS1": 0.012, "S1D": 0.07, "HD": 0.02, "Hd": 0.02, "S1d": 0.06, "Dd": 0.10})


def test_criterion_6_simulator(criterion):
    t0 = time.perf_counter()
    n = 100_000
    grid = (5.0, 20.0, 40.0)
    rng = make_rng(6)
    states = np.empty((n, len(grid)), dtype=np.int64)
    for i in range(n):
        traj = sample_trajectory(RATES, 40.0, rng)
        states[i] = [int(traj.state_at(t)) for t in grid]
    worst = 0.0
    for j, t in enumerate(grid):
        p = transition_matrix(RATES, t)[0]
        freq = np.bincount(states[:, j], minlength=4) / n
        se = np.sqrt(p * (1 - p) / n)
        worst = max(worst, float(np.max(np.abs(freq - p) / se)))
    scheme = ObservationScheme()
    beta = observation_probability(RATES, scheme)
    beta_hat = simulate_cohort(RATES, scheme, n, seed=6).summary.beta_hat
    beta_z = abs(beta_hat - beta) / math.sqrt(beta * (1 - beta) / n)
    runtime = time.perf_counter() - t0
    ok = worst <= 3 and beta_z <= 3 and runtime < 30
    criterion(6, ok, f"max |z| state={worst:.2f} beta={beta:.5f} beta_hat={beta_hat:.5f} |z|={beta_z:.2f}"
                     f" runtime={runtime:.1f}s")
    assert ok


def test_criterion_7_coverage(criterion):
    cfg = eio.read_config(CONFIGS / "homogeneous.conf").replace(n_all=20_000, reps=500, level=0.95)
    t0 = time.perf_counter()
    rep = coverage_study(cfg)
    verdict = normality_with_rerun(cfg, alpha=0.01, first=rep)
    runtime = time.perf_counter() - t0
    print(rep.table())
    cover = {p.label: p.coverage for p in rep.params}
    ratio = {p.label: p.se_ratio for p in rep.params}
    ok = (
        len(rep.params) == 6
        and all(0.93 <= c <= 0.97 for c in cover.values())
        and all(abs(r - 1) <= 0.10 for r in ratio.values())
        and verdict.passed
        and runtime < 300
    )
    detail = (
        "coverage " + " ".join(f"{k}={v:.3f}" for k, v in cover.items())
        + "; se/sd " + " ".join(f"{k}={v:.3f}" for k, v in ratio.items())
        + f"; ks rejected twice: {list(verdict.failed) or 'none'}"
        + (f" (rerun for {[p.label for p in rep.params if p.ks_pvalue_standardized < 0.01]})" if verdict.rerun else "")
        + f"; runtime={runtime:.0f}s"
    )
    criterion(7, ok, detail)
    assert ok


def test_criterion_8_consistency(criterion):
    cfg = eio.read_config(CONFIGS / "homogeneous.conf")
    t0 = time.perf_counter()
    curve = consistency_curve(cfg, [1_000, 10_000, 100_000], reps=200)
    runtime = time.perf_counter() - t0
    print(curve.table())
    slopes = curve.slopes()
    ok = all(-0.6 <= s <= -0.4 for s in slopes.values()) and runtime < 600
    criterion(8, ok, "slopes " + " ".join(f"{k}={v:.3f}" for k, v in slopes.items()) + f"; runtime={runtime:.0f}s")
    assert ok


def _dyadic_cohort(n=3000):
    rng = np.random.default_rng(9)
    recs = []
    for i in range(n):
        u = rng.integers(0, 54 * 64) / 64
        c = u + rng.integers(1, 9 * 64 + 1) / 64
        ev = ()
        if rng.random() < 0.4:
            a = math.floor((u + c) / 2 * 64) / 64
            if u < a:
                ev = ((a, State.D),)
        recs.append(ObservedRecord(f"p{i:05d}", u, State.H, c, ev))
    return recs


def test_criterion_9_structural_identities(criterion, tmp_path):
    scheme = ObservationScheme()
    cohort = simulate_cohort(RATES, scheme, 30_000, seed=9)
    results = {}

    # piecewise with one interval is the homogeneous fit, parameter by parameter and byte by byte
    h = fit_homogeneous(aggregate_homogeneous(cohort.table), horizon=scheme.tau)
    p1 = fit_piecewise(aggregate_piecewise(cohort.table, Partition.single(scheme.tau)))
    eio.write_fit(h, tmp_path / "h.csv")
    eio.write_fit(p1, tmp_path / "p1.csv")
    results["b=1"] = (
        all((a.events, a.exposure, a.estimate, a.se) == (b.events, b.exposure, b.estimate, b.se)
            for a, b in zip(h.params, p1.params))
        and (tmp_path / "h.csv").read_bytes() == (tmp_path / "p1.csv").read_bytes()
    )

    # interval aggregates add up to the global ones: counts exactly; exposures exactly
    # whenever the clipped pieces are representable, otherwise up to one rounding per cell
    glob = aggregate_homogeneous(cohort.table)
    ia = aggregate_piecewise(cohort.table, PARTITION)
    tot = ia.total()
    ulps = np.abs(tot.exposure - glob.exposure) / np.spacing(glob.exposure)
    dy = _dyadic_cohort()
    results["additivity"] = (
        np.array_equal(tot.counts, glob.counts)
        and bool(np.all(ulps <= PARTITION.n_intervals))
        and aggregate_piecewise(dy, PARTITION).total() == aggregate_homogeneous(dy)
    )

    # collapsing H, S1, D into one alive state gives the two-state homogeneous fit
    surv = collapse_to_survival(cohort.table)
    two_state = [
        ObservedRecord(f"p{i}", s.entry_age, State.H, s.exit_age, ((s.exit_age, State.d),) if s.died else ())
        for i, s in enumerate(surv)
    ]
    m = fit_mortality(surv).get("Hd")
    hh = fit_homogeneous(aggregate_homogeneous(two_state)).get("Hd")
    results["collapse"] = (m.events, m.exposure, m.estimate, m.se) == (hh.events, hh.exposure, hh.estimate, hh.se)

    # read(write(x)) == x and write(read(write(x))) == write(x)
    recs = cohort.records()
    eio.write_cohort(recs, tmp_path / "p.csv", tmp_path / "e.csv")
    back = eio.read_cohort(tmp_path / "p.csv", tmp_path / "e.csv")
    eio.write_cohort(back, tmp_path / "p2.csv", tmp_path / "e2.csv")
    results["round-trip"] = (
        back == sorted(recs, key=lambda r: r.person_id)
        and (tmp_path / "p.csv").read_bytes() == (tmp_path / "p2.csv").read_bytes()
        and (tmp_path / "e.csv").read_bytes() == (tmp_path / "e2.csv").read_bytes()
    )

    # same seed, same bytes; for the cohort files and for a coverage report under different worker counts
    again = simulate_cohort(RATES, scheme, 30_000, seed=9)
    eio.write_cohort(again.records(), tmp_path / "p3.csv", tmp_path / "e3.csv")
    cfg = eio.RunConfig(RATES, scheme, n_all=2000, seed=9, reps=8)
    results["determinism"] = (
        (tmp_path / "p.csv").read_bytes() == (tmp_path / "p3.csv").read_bytes()
        and (tmp_path / "e.csv").read_bytes() == (tmp_path / "e3.csv").read_bytes()
        and coverage_study(cfg, workers=1).to_json() == coverage_study(cfg, workers=2).to_json()
    )

    ok = all(results.values())
    criterion(9, ok, " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in results.items())
              + f" (max exposure ulps={ulps.max():.0f})")
    assert ok, results
