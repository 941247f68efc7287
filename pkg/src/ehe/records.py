"""Observed (left-truncated, window-censored) histories, per person and columnar."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import TRANSITIONS, State, transition_index

_DEATHS = [i for i, t in enumerate(TRANSITIONS) if t.dst is State.d]
_HD_DEATH = transition_index(State.H, State.d)


@dataclass(frozen=True)
class ObservedRecord:
    """One person's history inside the observation window ]entry_age, exit_age].

    ``exit_age`` is the end of observation: the death age when death was
    observed, otherwise the censoring age. ``events`` are (age, new state)
    pairs in increasing age order.
    """

    person_id: str
    entry_age: float
    entry_state: State
    exit_age: float
    events: tuple[tuple[float, State], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entry_state", State.parse(self.entry_state))
        object.__setattr__(
            self, "events", tuple((float(a), State.parse(s)) for a, s in self.events)
        )
        if self.entry_state is State.d:
            raise ValueError(f"{self.person_id}: entry state cannot be d")
        if not self.entry_age < self.exit_age:
            raise ValueError(f"{self.person_id}: need entry_age < exit_age")
        prev_age, prev_state = self.entry_age, self.entry_state
        for age, state in self.events:
            if not prev_age < age <= self.exit_age:
                raise ValueError(f"{self.person_id}: event age {age} out of order or outside window")
            transition_index(prev_state, state)
            prev_age, prev_state = age, state
        if prev_state is State.d and prev_age != self.exit_age:
            raise ValueError(f"{self.person_id}: observation must end at the death age")

    @property
    def died(self) -> bool:
        return bool(self.events) and self.events[-1][1] is State.d

    @property
    def transitions(self) -> list[tuple[float, State, State]]:
        out = []
        prev = self.entry_state
        for age, state in self.events:
            out.append((age, prev, state))
            prev = state
        return out

    @property
    def episodes(self) -> list[tuple[float, float, State]]:
        """Sojourns (start, stop, state) tiling ]entry_age, exit_age]; none in state d."""
        out = []
        start, state = self.entry_age, self.entry_state
        for age, new in self.events:
            out.append((start, age, state))
            start, state = age, new
        if state is not State.d and start < self.exit_age:
            out.append((start, self.exit_age, state))
        return out


@dataclass(frozen=True, eq=False)
class EpisodeTable:
    """Columnar view of a set of observed records, for vectorized aggregation.

    Per person: entry_age, exit_age, entry_state. Per sojourn: ep_person,
    ep_start, ep_stop, ep_state. Per observed jump: jump_person, jump_age,
    jump_kind (index into TRANSITIONS).
    """

    entry_age: np.ndarray
    exit_age: np.ndarray
    entry_state: np.ndarray
    ep_person: np.ndarray
    ep_start: np.ndarray
    ep_stop: np.ndarray
    ep_state: np.ndarray
    jump_person: np.ndarray
    jump_age: np.ndarray
    jump_kind: np.ndarray

    @property
    def n_persons(self) -> int:
        return len(self.entry_age)

    @classmethod
    def empty(cls) -> EpisodeTable:
        f, i = np.empty(0), np.empty(0, dtype=np.int64)
        return cls(f, f, i, i, f, f, i, i, f, i)

    @classmethod
    def from_records(cls, records: Iterable[ObservedRecord]) -> EpisodeTable:
        if isinstance(records, EpisodeTable):
            return records
        entry, exit_, estate = [], [], []
        ep_p, ep_a, ep_b, ep_s = [], [], [], []
        j_p, j_a, j_k = [], [], []
        for i, rec in enumerate(records):
            entry.append(rec.entry_age)
            exit_.append(rec.exit_age)
            estate.append(int(rec.entry_state))
            for a, b, s in rec.episodes:
                ep_p.append(i)
                ep_a.append(a)
                ep_b.append(b)
                ep_s.append(int(s))
            for age, src, dst in rec.transitions:
                j_p.append(i)
                j_a.append(age)
                j_k.append(transition_index(src, dst))
        f = lambda x: np.asarray(x, dtype=float)  # noqa: E731
        n = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
        return cls(f(entry), f(exit_), n(estate), n(ep_p), f(ep_a), f(ep_b), n(ep_s), n(j_p), f(j_a), n(j_k))

    def to_records(self, person_ids: Sequence[str] | None = None) -> list[ObservedRecord]:
        if person_ids is None:
            person_ids = [f"p{i:06d}" for i in range(self.n_persons)]
        order = np.lexsort((self.jump_age, self.jump_person))
        jp, ja, jk = self.jump_person[order], self.jump_age[order], self.jump_kind[order]
        bounds = np.searchsorted(jp, np.arange(self.n_persons + 1))
        out = []
        for i in range(self.n_persons):
            lo, hi = bounds[i], bounds[i + 1]
            events = tuple((float(ja[k]), TRANSITIONS[jk[k]].dst) for k in range(lo, hi))
            out.append(
                ObservedRecord(
                    person_id=person_ids[i],
                    entry_age=float(self.entry_age[i]),
                    entry_state=State(int(self.entry_state[i])),
                    exit_age=float(self.exit_age[i]),
                    events=events,
                )
            )
        return out

    def collapse_alive(self) -> EpisodeTable:
        """Merge H, S1, D into a single alive state coded H; keep only deaths."""
        died = np.isin(self.jump_kind, _DEATHS)
        n = self.n_persons
        return EpisodeTable(
            entry_age=self.entry_age,
            exit_age=self.exit_age,
            entry_state=np.zeros(n, dtype=np.int64),
            ep_person=np.arange(n, dtype=np.int64),
            ep_start=self.entry_age,
            ep_stop=self.exit_age,
            ep_state=np.zeros(n, dtype=np.int64),
            jump_person=self.jump_person[died],
            jump_age=self.jump_age[died],
            jump_kind=np.full(int(died.sum()), _HD_DEATH, dtype=np.int64),
        )
