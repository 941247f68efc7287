"""Transition counts and person-time at risk: the sufficient statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import TRANSITION_SRC, TRANSITIONS, LIVING_STATES, Partition, State, Transition
from .records import EpisodeTable, ObservedRecord

Cohort = EpisodeTable | Iterable[ObservedRecord]


def exact_exposure(starts: np.ndarray, stops: np.ndarray) -> float:
    """Correctly rounded value of sum(stops - starts).

    The endpoints are summed exactly (math.fsum) and rounded once, so the
    result does not depend on episode order.
    """
    if starts.size == 0:
        return 0.0
    return math.fsum(np.concatenate([stops, -starts]).tolist())


@dataclass(frozen=True, eq=False)
class Aggregates:
    """Counts N_hj (6,) and exposures E_h (3,) for h in H, S1, D."""

    counts: np.ndarray
    exposure: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        e = np.asarray(self.exposure, dtype=float)
        if c.shape != (len(TRANSITIONS),) or e.shape != (len(LIVING_STATES),):
            raise ValueError("need 6 counts and 3 exposures")
        if np.any(c < 0) or np.any(e < 0):
            raise ValueError("counts and exposures must be non-negative")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "exposure", e)

    @classmethod
    def from_mapping(cls, counts: dict, exposure: dict) -> Aggregates:
        c = np.zeros(len(TRANSITIONS), dtype=np.int64)
        for k, v in counts.items():
            c[Transition.parse(k).index] = v
        e = np.zeros(len(LIVING_STATES))
        for k, v in exposure.items():
            e[int(State.parse(k))] = v
        return cls(c, e)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Aggregates)
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.exposure, other.exposure)
        )

    def count(self, hj: Transition | str) -> int:
        return int(self.counts[Transition.parse(hj).index])

    def time_at_risk(self, h: State | str) -> float:
        return float(self.exposure[int(State.parse(h))])

    def transition_exposure(self) -> np.ndarray:
        """Exposure of each transition's source state, aligned with TRANSITIONS."""
        return self.exposure[TRANSITION_SRC]


@dataclass(frozen=True, eq=False)
class IntervalAggregates:
    """Per-interval counts A (6, b) and exposures B (3, b) on a partition."""

    partition: Partition
    counts: np.ndarray
    exposure: np.ndarray

    def __post_init__(self):
        b = self.partition.n_intervals
        c = np.asarray(self.counts, dtype=np.int64)
        e = np.asarray(self.exposure, dtype=float)
        if c.shape != (len(TRANSITIONS), b) or e.shape != (len(LIVING_STATES), b):
            raise ValueError(f"need counts (6, {b}) and exposures (3, {b})")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "exposure", e)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, IntervalAggregates)
            and self.partition == other.partition
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.exposure, other.exposure)
        )

    def transition_exposure(self) -> np.ndarray:
        return self.exposure[TRANSITION_SRC]

    def total(self) -> Aggregates:
        """Sum over intervals (exposures via exact summation)."""
        e = [math.fsum(row.tolist()) for row in self.exposure]
        return Aggregates(self.counts.sum(axis=1), e)

    def interval(self, l: int) -> Aggregates:
        return Aggregates(self.counts[:, l], self.exposure[:, l])


def aggregate_homogeneous(cohort: Cohort) -> Aggregates:
    table = EpisodeTable.from_records(cohort)
    counts = np.bincount(table.jump_kind, minlength=len(TRANSITIONS))
    exposure = [
        exact_exposure(table.ep_start[m], table.ep_stop[m])
        for m in (table.ep_state == int(h) for h in LIVING_STATES)
    ]
    return Aggregates(counts, exposure)


def aggregate_piecewise(cohort: Cohort, partition: Partition) -> IntervalAggregates:
    """Counts and exposures restricted to ]t_{l-1}, t_l] for each interval.

    Every overlap geometry between a sojourn ]a, b] and an interval is covered
    by clipping to ]max(a, t_{l-1}), min(b, t_l)]; a jump exactly at t_l
    belongs to interval l.
    """
    table = EpisodeTable.from_records(cohort)
    breaks = np.array(partition.breaks)
    b = partition.n_intervals
    if table.jump_age.size and (table.jump_age.max() > breaks[-1] or table.jump_age.min() <= 0):
        raise ValueError("jump ages outside the partition range (0, tau]")
    if table.ep_stop.size and table.ep_stop.max() > breaks[-1]:
        raise ValueError("observation extends beyond the partition horizon")

    l_of_jump = np.searchsorted(breaks, table.jump_age, side="left") - 1
    counts = np.zeros((len(TRANSITIONS), b), dtype=np.int64)
    np.add.at(counts, (table.jump_kind, l_of_jump), 1)

    exposure = np.zeros((len(LIVING_STATES), b))
    for h in LIVING_STATES:
        m = table.ep_state == int(h)
        start, stop = table.ep_start[m], table.ep_stop[m]
        for l in range(b):
            lo = np.maximum(start, breaks[l])
            hi = np.minimum(stop, breaks[l + 1])
            hit = hi > lo
            exposure[int(h), l] = exact_exposure(lo[hit], hi[hit])
    return IntervalAggregates(partition, counts, exposure)


@dataclass(frozen=True)
class MortalityAggregates:
    """Two-state (alive -> dead) statistics.

    ``exposure`` is the total time at risk; it defaults to
    uncensored_time + window * n_cens, the form used when every censored
    person is followed for the full window.
    """

    n_uncens: int
    uncensored_time: float
    n_cens: int
    window: float = 9.0
    exposure: float | None = None

    def __post_init__(self):
        if self.n_uncens < 0 or self.n_cens < 0 or self.uncensored_time < 0:
            raise ValueError("mortality statistics must be non-negative")
        if self.exposure is None:
            object.__setattr__(self, "exposure", self.uncensored_time + self.window * self.n_cens)

    @property
    def n(self) -> int:
        return self.n_uncens + self.n_cens


@dataclass(frozen=True)
class SurvivalRecord:
    """Entry age u, end of follow-up, and whether that end is a death."""

    entry_age: float
    exit_age: float
    died: bool

    def __post_init__(self):
        if not self.entry_age <= self.exit_age:
            raise ValueError("need entry_age <= exit_age")


def collapse_to_survival(cohort: Cohort) -> list[SurvivalRecord]:
    """Merge H, S1, D into alive; one survival record per observed person."""
    table = EpisodeTable.from_records(cohort)
    died = np.zeros(table.n_persons, dtype=bool)
    dead_kinds = [i for i, t in enumerate(TRANSITIONS) if t.dst is State.d]
    died[table.jump_person[np.isin(table.jump_kind, dead_kinds)]] = True
    return [
        SurvivalRecord(float(a), float(b), bool(d))
        for a, b, d in zip(table.entry_age, table.exit_age, died)
    ]


def aggregate_mortality(records: Iterable[SurvivalRecord] | MortalityAggregates, window: float = 9.0):
    if isinstance(records, MortalityAggregates):
        return records
    records = list(records)
    u = np.array([r.entry_age for r in records])
    c = np.array([r.exit_age for r in records])
    d = np.array([r.died for r in records], dtype=bool)
    return MortalityAggregates(
        n_uncens=int(d.sum()),
        uncensored_time=exact_exposure(u[d], c[d]),
        n_cens=int((~d).sum()),
        window=window,
        exposure=exact_exposure(u, c),
    )
