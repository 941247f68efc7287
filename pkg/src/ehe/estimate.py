"""Closed-form occurrence/exposure estimates with observed-information standard errors."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .aggregate import (
    Aggregates,
    IntervalAggregates,
    MortalityAggregates,
    SurvivalRecord,
    aggregate_mortality,
)
from .model import TRANSITIONS, Partition, Transition

OK = "ok"
ZERO_EVENTS = "zero-events"
NO_EXPOSURE = "undefined-no-exposure"


@dataclass(frozen=True)
class ParamEstimate:
    """One fitted intensity: lam = events / exposure, se = sqrt(events) / exposure."""

    transition: str
    events: int
    exposure: float
    estimate: float
    se: float
    status: str
    interval: tuple[float, float] | None = None

    @property
    def usable(self) -> bool:
        return self.status != NO_EXPOSURE


def occurrence_exposure(transition: str, events: int, exposure: float, interval=None) -> ParamEstimate:
    events = int(events)
    exposure = float(exposure)
    if exposure <= 0:
        if events:
            raise ValueError(f"{transition}: {events} events without exposure")
        return ParamEstimate(transition, 0, 0.0, math.nan, math.nan, NO_EXPOSURE, interval)
    if events == 0:
        return ParamEstimate(transition, 0, exposure, 0.0, 0.0, ZERO_EVENTS, interval)
    return ParamEstimate(transition, events, exposure, events / exposure, math.sqrt(events) / exposure, OK, interval)


@dataclass(frozen=True)
class FitResult:
    model: str  # homogeneous | piecewise | mortality
    params: tuple[ParamEstimate, ...]
    partition: Partition | None = None
    horizon: float | None = None
    provenance: dict = field(default_factory=dict, compare=False)

    def get(self, transition: Transition | str, interval: int | None = None) -> ParamEstimate:
        code = Transition.parse(transition).code
        hits = [p for p in self.params if p.transition == code]
        if not hits:
            raise KeyError(f"no parameter {code} in fit")
        if interval is None:
            if len(hits) > 1:
                raise KeyError(f"{code} is fitted per interval; pass an interval index")
            return hits[0]
        if not 0 <= interval < len(hits):
            raise KeyError(f"{code}: interval index {interval} outside 0..{len(hits) - 1}")
        return hits[interval]

    def series(self, transition: Transition | str) -> list[ParamEstimate]:
        code = Transition.parse(transition).code
        return [p for p in self.params if p.transition == code]

    def estimates(self) -> np.ndarray:
        return np.array([p.estimate for p in self.params])

    def standard_errors(self) -> np.ndarray:
        return np.array([p.se for p in self.params])


def digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def fit_homogeneous(agg: Aggregates, horizon: float | None = None) -> FitResult:
    exposure = agg.transition_exposure()
    params = tuple(
        occurrence_exposure(t.code, agg.counts[i], exposure[i])
        for i, t in enumerate(TRANSITIONS)
    )
    return FitResult(
        "homogeneous", params, horizon=horizon,
        provenance={"input_digest": digest(agg.counts, agg.exposure)},
    )


def fit_piecewise(agg: IntervalAggregates) -> FitResult:
    exposure = agg.transition_exposure()
    ivs = agg.partition.intervals()
    params = tuple(
        occurrence_exposure(t.code, agg.counts[i, l], exposure[i, l], ivs[l])
        for i, t in enumerate(TRANSITIONS)
        for l in range(agg.partition.n_intervals)
    )
    return FitResult(
        "piecewise", params, partition=agg.partition, horizon=agg.partition.tau,
        provenance={"input_digest": digest(agg.counts, agg.exposure, np.array(agg.partition.breaks))},
    )


def fit_mortality(
    data: Iterable[SurvivalRecord] | MortalityAggregates, window: float = 9.0
) -> FitResult:
    """Two-state fit; the single alive -> dead parameter is labelled ``Hd``.

    lam = N_uncens / (time to death of the uncensored + time of the censored).
    """
    agg = aggregate_mortality(data, window)
    if agg.n == 0:
        p = ParamEstimate("Hd", 0, 0.0, math.nan, math.nan, NO_EXPOSURE)
    else:
        p = occurrence_exposure("Hd", agg.n_uncens, agg.exposure)
    return FitResult(
        "mortality", (p,),
        provenance={
            "n_uncens": agg.n_uncens,
            "n_cens": agg.n_cens,
            "uncensored_time": agg.uncensored_time,
            "window": agg.window,
        },
    )


def fit_table(fit: FitResult) -> str:
    """Aligned text rendering of a fit; intervals shown in calendar age."""
    head = f"{'transition':<10} {'interval':>17} {'events':>8} {'exposure':>14} {'rate':>10} {'se':>10}  status"
    lines = [head, "-" * len(head)]
    for p in fit.params:
        span = p.interval
        if span is None and fit.model == "homogeneous" and fit.horizon is not None:
            span = (0.0, fit.horizon)
        iv = "" if span is None else f"]{50 + span[0]:g},{50 + span[1]:g}]"
        rate = "NA" if p.status == NO_EXPOSURE else f"{p.estimate:.4g}"
        se = "NA" if p.status == NO_EXPOSURE else f"{p.se:.2g}"
        lines.append(f"{p.transition:<10} {iv:>17} {p.events:>8d} {p.exposure:>14.6g} {rate:>10} {se:>10}  {p.status}")
    return "\n".join(lines)

