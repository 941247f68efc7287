"""Cohort, configuration and fit file formats.

persons.csv  person_id,entry_age,entry_state,exit_age
events.csv   person_id,event_age,to_state
fit.csv      transition,interval_lo,interval_hi,events,exposure,rate,se,ci_lo,ci_hi

Ages are years since age 50. Reals are written with 17 significant digits so
that reading back reproduces every value bit for bit. A person without a
death row is censored at exit_age; an empty exit_age means entry_age + window.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .estimate import NO_EXPOSURE, OK, ZERO_EVENTS, FitResult, ParamEstimate
from .inference import wald_ci
from .model import (
    DEFAULT_TAU,
    DEFAULT_WINDOW,
    TRANSITIONS,
    AnyRates,
    EntryAgeDistribution,
    ObservationScheme,
    Partition,
    PiecewiseRateSet,
    RateSet,
    State,
    Transition,
    is_admissible,
)
from .records import ObservedRecord

PERSONS_HEADER = ["person_id", "entry_age", "entry_state", "exit_age"]
EVENTS_HEADER = ["person_id", "event_age", "to_state"]
FIT_HEADER = ["transition", "interval_lo", "interval_hi", "events", "exposure", "rate", "se", "ci_lo", "ci_hi"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Issue:
    path: str
    line: int
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}:{self.line}: [{self.code}] {self.message}"


class CohortValidationError(ValueError):
    def __init__(self, issues: list[Issue]):
        self.issues = issues
        super().__init__("\n".join(str(i) for i in issues))

    @property
    def codes(self) -> set[str]:
        return {i.code for i in self.issues}


class ConfigError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


def _open_csv(path: Path, header: list[str], issues: list[Issue]):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != header:
        issues.append(Issue(str(path), 1, "bad-header", f"expected header {','.join(header)}"))
        return []
    return [(i + 2, row) for i, row in enumerate(rows[1:]) if any(c.strip() for c in row)]


def _real(text: str, path, line, what, issues) -> float | None:
    try:
        x = float(text)
    except ValueError:
        issues.append(Issue(str(path), line, "bad-number", f"{what} {text!r} is not a number"))
        return None
    if not math.isfinite(x):
        issues.append(Issue(str(path), line, "bad-number", f"{what} must be finite"))
        return None
    return x


def read_cohort(persons_file, events_file, window: float = DEFAULT_WINDOW) -> list[ObservedRecord]:
    """Validated records in canonical order (person_id, then event age).

    Every problem found is reported, each with its file and line.
    """
    persons_file, events_file = Path(persons_file), Path(events_file)
    issues: list[Issue] = []
    people: dict[str, tuple[float, State, float]] = {}
    for line, row in _open_csv(persons_file, PERSONS_HEADER, issues):
        path = str(persons_file)
        if len(row) != 4:
            issues.append(Issue(path, line, "bad-row", f"expected 4 fields, got {len(row)}"))
            continue
        pid, u_txt, s_txt, c_txt = (c.strip() for c in row)
        if not pid:
            issues.append(Issue(path, line, "bad-row", "empty person_id"))
            continue
        if pid in people:
            issues.append(Issue(path, line, "duplicate-person", f"person {pid} listed twice"))
            continue
        u = _real(u_txt, path, line, "entry_age", issues)
        if u is None:
            continue
        if u < 0:
            issues.append(Issue(path, line, "bad-entry", f"entry_age {u} is negative"))
            continue
        if s_txt == "d":
            issues.append(Issue(path, line, "dead-entry", f"person {pid} enters in state d"))
            continue
        try:
            state = State.parse(s_txt)
        except ValueError:
            issues.append(Issue(path, line, "bad-state", f"unknown entry_state {s_txt!r}"))
            continue
        if c_txt:
            c = _real(c_txt, path, line, "exit_age", issues)
            if c is None:
                continue
            if not u < c <= u + window:
                issues.append(Issue(path, line, "bad-exit", f"exit_age {c} outside ]{u}, {u + window}]"))
                continue
        else:
            c = u + window
        people[pid] = (u, state, c)

    events: dict[str, list[tuple[float, State]]] = defaultdict(list)
    last: dict[str, tuple[float, State]] = {}
    for line, row in _open_csv(events_file, EVENTS_HEADER, issues):
        path = str(events_file)
        if len(row) != 3:
            issues.append(Issue(path, line, "bad-row", f"expected 3 fields, got {len(row)}"))
            continue
        pid, a_txt, s_txt = (c.strip() for c in row)
        if pid not in people:
            issues.append(Issue(path, line, "unknown-person", f"event for unknown person {pid!r}"))
            continue
        age = _real(a_txt, path, line, "event_age", issues)
        if age is None:
            continue
        try:
            to = State.parse(s_txt)
        except ValueError:
            issues.append(Issue(path, line, "bad-state", f"unknown to_state {s_txt!r}"))
            continue
        u, entry_state, c = people[pid]
        prev_age, prev_state = last.get(pid, (u, entry_state))
        if pid in last and age <= prev_age:
            issues.append(Issue(path, line, "non-monotone", f"event age {age} not after previous event at {prev_age}"))
            continue
        if not u < age <= c:
            issues.append(Issue(path, line, "outside-window", f"event age {age} outside ]{u}, {c}]"))
            continue
        if not is_admissible(prev_state, to):
            issues.append(
                Issue(path, line, "invalid-transition", f"transition {prev_state.code}->{to.code} not admissible")
            )
            continue
        events[pid].append((age, to))
        last[pid] = (age, to)

    if issues:
        raise CohortValidationError(issues)
    records = []
    for pid in sorted(people):
        u, state, c = people[pid]
        ev = events.get(pid, [])
        if ev and ev[-1][1] is State.d:
            c = ev[-1][0]
        records.append(ObservedRecord(pid, u, state, c, tuple(ev)))
    return records


def write_cohort(records: Iterable[ObservedRecord], persons_file, events_file) -> None:
    records = sorted(records, key=lambda r: r.person_id)
    try:
        with open(persons_file, "w", newline="", encoding="utf-8") as fp, open(
            events_file, "w", newline="", encoding="utf-8"
        ) as fe:
            wp, we = csv.writer(fp, lineterminator="\n"), csv.writer(fe, lineterminator="\n")
            wp.writerow(PERSONS_HEADER)
            we.writerow(EVENTS_HEADER)
            for r in records:
                wp.writerow([r.person_id, fmt(r.entry_age), r.entry_state.code, fmt(r.exit_age)])
                for age, state in r.events:
                    we.writerow([r.person_id, fmt(age), state.code])
    except OSError as exc:
        raise OSError(f"cannot write cohort to {persons_file} / {events_file}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    rates: AnyRates
    scheme: ObservationScheme = field(default_factory=ObservationScheme)
    n_all: int = 10_000
    seed: int = 0
    reps: int = 100
    level: float = 0.95

    def __post_init__(self):
        if self.n_all < 0 or self.reps < 1:
            raise ValueError("need n_all >= 0 and reps >= 1")
        if isinstance(self.rates, PiecewiseRateSet) and self.rates.tau < self.scheme.tau:
            raise ValueError("partition must reach the horizon tau")

    @property
    def partition(self) -> Partition | None:
        return self.rates.partition if isinstance(self.rates, PiecewiseRateSet) else None

    def replace(self, **kw) -> RunConfig:
        from dataclasses import replace

        return replace(self, **kw)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def parse_config(text: str, path="<config>") -> RunConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Keys: tau, window, entry (``uniform a b`` | ``degenerate u0`` |
    ``empirical u1 u2 ...``), n_all, seed, reps, level, partition
    (comma-separated breakpoints), and ``rate.<transition>`` with one value,
    or one value per interval when a partition is given.
    """
    kv: dict[str, tuple[int, str]] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(path, n, f"expected key = value, got {raw.strip()!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        if key in kv:
            raise ConfigError(path, n, f"duplicate key {key!r}")
        kv[key] = (n, value)

    def get(key, conv, default):
        if key not in kv:
            return default
        n, value = kv.pop(key)
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(path, n, f"bad value for {key}: {exc}") from None

    tau = get("tau", float, DEFAULT_TAU)
    window = get("window", float, DEFAULT_WINDOW)

    def entry_conv(value):
        kind, *params = value.split()
        return EntryAgeDistribution(kind, tuple(_floats(" ".join(params))))

    entry = get("entry", entry_conv, EntryAgeDistribution("uniform", (0.0, tau - window)))
    try:
        scheme = ObservationScheme(tau, window, entry)
    except ValueError as exc:
        line = kv.get("entry", (0,))[0] or 1
        raise ConfigError(path, line, str(exc)) from None
    n_all = get("n_all", int, 10_000)
    seed = get("seed", int, 0)
    reps = get("reps", int, 100)
    level = get("level", float, 0.95)
    partition = get("partition", lambda v: Partition(tuple(_floats(v))), None)

    rate_lines = {k: kv.pop(k) for k in list(kv) if k.startswith("rate.")}
    if kv:
        key, (n, _) = next(iter(kv.items()))
        raise ConfigError(path, n, f"unknown key {key!r}")
    if not rate_lines:
        raise ConfigError(path, 1, "no rate.<transition> entries")
    b = partition.n_intervals if partition else 1
    table = np.zeros((len(TRANSITIONS), b))
    for key, (n, value) in rate_lines.items():
        try:
            t = Transition.parse(key[5:])
            vals = _floats(value)
        except ValueError as exc:
            raise ConfigError(path, n, str(exc)) from None
        if len(vals) == 1:
            vals = vals * b
        if len(vals) != b:
            raise ConfigError(path, n, f"{key} needs 1 or {b} values, got {len(vals)}")
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ConfigError(path, n, f"{key}: rates must be finite and non-negative")
        table[t.index] = vals
    try:
        rates: AnyRates = PiecewiseRateSet(partition, table) if partition else RateSet(table[:, 0])
        return RunConfig(rates, scheme, n_all, seed, reps, level)
    except ValueError as exc:
        raise ConfigError(path, 1, str(exc)) from None


def read_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)


def format_config(cfg: RunConfig) -> str:
    s = cfg.scheme
    lines = [
        f"tau = {fmt(s.tau)}",
        f"window = {fmt(s.window)}",
        f"entry = {s.entry.kind} " + " ".join(fmt(x) for x in s.entry.params),
        f"n_all = {cfg.n_all}",
        f"seed = {cfg.seed}",
        f"reps = {cfg.reps}",
        f"level = {fmt(cfg.level)}",
    ]
    if isinstance(cfg.rates, PiecewiseRateSet):
        lines.append("partition = " + ",".join(fmt(x) for x in cfg.rates.partition.breaks))
        for t, row in zip(TRANSITIONS, cfg.rates.values):
            lines.append(f"rate.{t.code} = " + ",".join(fmt(x) for x in row))
    else:
        for t, v in zip(TRANSITIONS, cfg.rates.values):
            lines.append(f"rate.{t.code} = {fmt(v)}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    try:
        Path(path).write_text(format_config(cfg), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write config {path}: {exc}") from exc


def fit_rows(fit: FitResult, level: float = 0.95) -> list[list[str]]:
    rows = []
    for p in fit.params:
        if p.interval is not None:
            lo, hi = fmt(p.interval[0]), fmt(p.interval[1])
        elif fit.horizon is not None and fit.model == "homogeneous":
            lo, hi = fmt(0.0), fmt(fit.horizon)
        else:
            lo = hi = ""
        if p.status == NO_EXPOSURE:
            rate = se = ci_lo = ci_hi = "NA"
        else:
            ci = wald_ci(p, level=level)
            rate, se, ci_lo, ci_hi = fmt(p.estimate), fmt(p.se), fmt(ci[0]), fmt(ci[1])
        rows.append([p.transition, lo, hi, str(p.events), fmt(p.exposure), rate, se, ci_lo, ci_hi])
    return rows


def write_fit(fit: FitResult, path, level: float = 0.95) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIT_HEADER)
            w.writerows(fit_rows(fit, level))
    except OSError as exc:
        raise OSError(f"cannot write fit to {path}: {exc}") from exc


def read_fit(path, model: str | None = None) -> FitResult:
    path = Path(path)
    issues: list[Issue] = []
    rows = _open_csv(path, FIT_HEADER, issues)
    if issues:
        raise CohortValidationError(issues)
    params = []
    for line, row in rows:
        if len(row) != len(FIT_HEADER):
            raise CohortValidationError([Issue(str(path), line, "bad-row", "wrong number of fields")])
        code, lo, hi, ev, expo, rate, se = (c.strip() for c in row[:7])
        interval = (float(lo), float(hi)) if lo and hi else None
        events, exposure = int(ev), float(expo)
        if rate == "NA":
            status, est, s = NO_EXPOSURE, math.nan, math.nan
        else:
            status = ZERO_EVENTS if events == 0 else OK
            est, s = float(rate), float(se)
        params.append(ParamEstimate(code, events, exposure, est, s, status, interval))
    codes = [p.transition for p in params]
    piecewise = any(codes.count(c) > 1 for c in set(codes))
    if model is None:
        model = "piecewise" if piecewise else ("mortality" if codes == ["Hd"] else "homogeneous")
    partition = horizon = None
    if model == "piecewise":
        ivs = [p.interval for p in params if p.transition == codes[0]]
        partition = Partition(tuple(lo for lo, _ in ivs) + (ivs[-1][1],))
        horizon = partition.tau
    elif model == "homogeneous" and params and params[0].interval is not None:
        horizon = params[0].interval[1]
        params = [ParamEstimate(*[getattr(p, f) for f in ("transition", "events", "exposure", "estimate", "se", "status")])
                  for p in params]
    return FitResult(model, tuple(params), partition=partition, horizon=horizon)
