"""State space, transitions, rate containers and the observation scheme.

Ages are years since the 50th birthday (t = 0 is calendar age 50).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

DEFAULT_TAU = 63.0
DEFAULT_WINDOW = 9.0


class State(enum.IntEnum):
    """Health states ordered by severity; ``d`` (dead) is absorbing."""

    H = 0
    S1 = 1
    D = 2
    d = 3

    @property
    def code(self) -> str:
        return self.name

    @property
    def absorbing(self) -> bool:
        return self is State.d

    @classmethod
    def parse(cls, code: str | State) -> State:
        if isinstance(code, State):
            return code
        try:
            return cls[code.strip()]
        except KeyError:
            raise ValueError(f"unknown state {code!r}; expected one of H, S1, D, d") from None


LIVING_STATES = (State.H, State.S1, State.D)


class Transition(NamedTuple):
    src: State
    dst: State

    @property
    def code(self) -> str:
        return self.src.code + self.dst.code

    @property
    def index(self) -> int:
        return TRANSITION_INDEX[self]

    @classmethod
    def parse(cls, code: str | Transition) -> Transition:
        if isinstance(code, Transition):
            if code not in TRANSITION_INDEX:
                raise ValueError(f"transition {code.code} is not admissible")
            return code
        key = code.strip().replace("->", "").replace(">", "")
        try:
            return _BY_CODE[key]
        except KeyError:
            raise ValueError(
                f"unknown transition {code!r}; expected one of "
                + ", ".join(t.code for t in TRANSITIONS)
            ) from None

    def __str__(self) -> str:
        return self.code


TRANSITIONS: tuple[Transition, ...] = (
    Transition(State.H, State.S1),
    Transition(State.S1, State.D),
    Transition(State.H, State.D),
    Transition(State.H, State.d),
    Transition(State.S1, State.d),
    Transition(State.D, State.d),
)
TRANSITION_INDEX = {t: i for i, t in enumerate(TRANSITIONS)}
_BY_CODE = {t.code: t for t in TRANSITIONS}

# Source state of each transition, as an index array aligned with TRANSITIONS.
TRANSITION_SRC = np.array([int(t.src) for t in TRANSITIONS])
TRANSITION_DST = np.array([int(t.dst) for t in TRANSITIONS])


def is_admissible(src: State, dst: State) -> bool:
    return (State(src), State(dst)) in TRANSITION_INDEX


def transition_index(src: State, dst: State) -> int:
    try:
        return TRANSITION_INDEX[(State(src), State(dst))]
    except KeyError:
        raise ValueError(f"transition {State(src).code}->{State(dst).code} is not admissible") from None


@dataclass(frozen=True)
class ParameterSpace:
    """Box [eps, 1/eps] per transition for the numeric maximizer."""

    eps: tuple[float, ...] = (1e-6,) * len(TRANSITIONS)

    def __post_init__(self):
        if len(self.eps) != len(TRANSITIONS):
            raise ValueError("one epsilon per transition required")
        for e in self.eps:
            if not 0.0 < e < 1.0:
                raise ValueError(f"epsilon must lie in (0, 1), got {e}")

    @classmethod
    def uniform(cls, eps: float) -> ParameterSpace:
        return cls((float(eps),) * len(TRANSITIONS))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.eps)

    @property
    def upper(self) -> np.ndarray:
        return 1.0 / np.array(self.eps)

    def contains(self, rates: RateSet) -> bool:
        r = rates.as_array()
        return bool(np.all((r >= self.lower) & (r <= self.upper)))


def _rate_vector(values: Mapping[Transition | str, float] | Sequence[float]) -> np.ndarray:
    if isinstance(values, Mapping):
        out = np.zeros(len(TRANSITIONS))
        for key, val in values.items():
            out[Transition.parse(key).index] = float(val)
        return out
    out = np.array(values, dtype=float)
    if out.shape != (len(TRANSITIONS),):
        raise ValueError(f"expected {len(TRANSITIONS)} rates, got shape {out.shape}")
    return out


@dataclass(frozen=True, eq=False)
class RateSet:
    """Age-homogeneous intensities, events per person-year.

    Missing transitions default to 0 when built from a mapping.
    """

    values: np.ndarray
    space: ParameterSpace | None = None

    def __post_init__(self):
        v = _rate_vector(self.values)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("rates must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, mapping: Mapping[Transition | str, float], space=None) -> RateSet:
        return cls(_rate_vector(mapping), space)

    def __getitem__(self, key: Transition | str) -> float:
        return float(self.values[Transition.parse(key).index])

    def __eq__(self, other) -> bool:
        return isinstance(other, RateSet) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def as_array(self) -> np.ndarray:
        return self.values.copy()

    def as_dict(self) -> dict[str, float]:
        return {t.code: float(v) for t, v in zip(TRANSITIONS, self.values)}

    def to_piecewise(self, tau: float = DEFAULT_TAU) -> PiecewiseRateSet:
        return PiecewiseRateSet(Partition((0.0, tau)), self.values[:, None])


@dataclass(frozen=True)
class Partition:
    """Breakpoints 0 = t_0 < t_1 < ... < t_b = tau; intervals are ]t_{l-1}, t_l]."""

    breaks: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        if len(b) < 2:
            raise ValueError("a partition needs at least two breakpoints")
        if b[0] != 0.0:
            raise ValueError(f"partition must start at 0, got {b[0]}")
        if any(not math.isfinite(x) for x in b):
            raise ValueError("partition breakpoints must be finite")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError("partition breakpoints must be strictly increasing")
        object.__setattr__(self, "breaks", b)

    @classmethod
    def single(cls, tau: float = DEFAULT_TAU) -> Partition:
        return cls((0.0, tau))

    @classmethod
    def regular(cls, width: float, tau: float = DEFAULT_TAU) -> Partition:
        """Equal-width intervals with a shorter final interval if tau is not a multiple."""
        pts = list(np.arange(0.0, tau, width))
        return cls(tuple(pts) + (tau,))

    @property
    def tau(self) -> float:
        return self.breaks[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.breaks) - 1

    def __len__(self) -> int:
        return self.n_intervals

    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.breaks[:-1], self.breaks[1:]))

    def index_of(self, t: float) -> int:
        """0-based index l of the interval ]t_l, t_{l+1}] containing t."""
        if not 0.0 < t <= self.tau:
            raise ValueError(f"age {t} outside (0, {self.tau}]")
        return int(np.searchsorted(self.breaks, t, side="left")) - 1

    def refines(self, other: Partition) -> bool:
        return self.tau == other.tau and set(other.breaks) <= set(self.breaks)


@dataclass(frozen=True, eq=False)
class PiecewiseRateSet:
    """Intensities constant on each partition interval; ``values`` has shape (6, b)."""

    partition: Partition
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(TRANSITIONS), self.partition.n_intervals):
            raise ValueError(
                f"expected rate table of shape ({len(TRANSITIONS)}, {self.partition.n_intervals}), got {v.shape}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("rates must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, partition: Partition, table: Mapping[Transition | str, Sequence[float]]):
        v = np.zeros((len(TRANSITIONS), partition.n_intervals))
        for key, row in table.items():
            row = np.broadcast_to(np.asarray(row, dtype=float), (partition.n_intervals,))
            v[Transition.parse(key).index] = row
        return cls(partition, v)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PiecewiseRateSet)
            and self.partition == other.partition
            and np.array_equal(self.values, other.values)
        )

    @property
    def tau(self) -> float:
        return self.partition.tau

    def interval_rates(self, l: int) -> RateSet:
        return RateSet(self.values[:, l])

    def is_homogeneous(self) -> bool:
        return bool(np.all(self.values == self.values[:, :1]))


AnyRates = RateSet | PiecewiseRateSet


def as_piecewise(rates: AnyRates, tau: float = DEFAULT_TAU) -> PiecewiseRateSet:
    if isinstance(rates, PiecewiseRateSet):
        return rates
    return rates.to_piecewise(tau)


def rate_at(rates: AnyRates, hj: Transition | str, t: float) -> float:
    """Intensity of transition ``hj`` at age ``t`` (right-closed intervals)."""
    k = Transition.parse(hj).index
    if isinstance(rates, RateSet):
        if t <= 0:
            raise ValueError(f"age {t} outside (0, inf)")
        return float(rates.values[k])
    return float(rates.values[k, rates.partition.index_of(t)])


def total_exit_rate(rates: AnyRates, h: State | str, t: float | None = None) -> float:
    h = State.parse(h)
    if h.absorbing:
        raise ValueError("state d is absorbing and has no exit rate")
    if isinstance(rates, RateSet):
        col = rates.values
    else:
        if t is None:
            raise ValueError("age t is required for piecewise rates")
        col = rates.values[:, rates.partition.index_of(t)]
    return float(col[TRANSITION_SRC == int(h)].sum())


def generator_matrix(rate_vector: np.ndarray) -> np.ndarray:
    """4x4 intensity matrix Q from a 6-vector of rates."""
    q = np.zeros((4, 4))
    q[TRANSITION_SRC, TRANSITION_DST] = rate_vector
    q[np.diag_indices(4)] = -q.sum(axis=1)
    return q


@dataclass(frozen=True)
class EntryAgeDistribution:
    """Distribution of the age at study begin U.

    kind is one of ``uniform`` (params = (a, b)), ``degenerate`` (params = (u0,))
    or ``empirical`` (params = the list of support points, equally weighted).
    """

    kind: str = "uniform"
    params: tuple[float, ...] = (0.0, DEFAULT_TAU - DEFAULT_WINDOW)

    def __post_init__(self):
        p = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", p)
        if self.kind == "uniform":
            if len(p) != 2 or not p[0] < p[1]:
                raise ValueError("uniform entry ages need (a, b) with a < b")
        elif self.kind == "degenerate":
            if len(p) != 1:
                raise ValueError("degenerate entry age needs exactly one value")
        elif self.kind == "empirical":
            if not p:
                raise ValueError("empirical entry ages need at least one value")
        else:
            raise ValueError(f"unknown entry-age distribution {self.kind!r}")

    @classmethod
    def uniform(cls, a: float, b: float):
        return cls("uniform", (a, b))

    @classmethod
    def degenerate(cls, u0: float):
        return cls("degenerate", (u0,))

    @classmethod
    def empirical(cls, values: Iterable[float]):
        return cls("empirical", tuple(values))

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.params
        return min(self.params), max(self.params)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            a, b = self.params
            return rng.uniform(a, b, size)
        if self.kind == "degenerate":
            return np.full(size, self.params[0])
        return rng.choice(np.array(self.params), size=size)

    def cdf(self, x: float) -> float:
        """P(U <= x)."""
        if self.kind == "uniform":
            a, b = self.params
            return float(min(max((x - a) / (b - a), 0.0), 1.0))
        pts = np.array(self.params)
        return float(np.mean(pts <= x))

    def prob_open_closed(self, lo: float, hi: float) -> float:
        """P(lo <= U < hi), the chance that age t = hi falls in ]U, U + (hi - lo)]."""
        if self.kind == "uniform":
            return self.cdf(hi) - self.cdf(lo)
        pts = np.array(self.params)
        return float(np.mean((pts >= lo) & (pts < hi)))

    def describe(self) -> str:
        return " ".join([self.kind, *(repr(x) for x in self.params)])


@dataclass(frozen=True)
class ObservationScheme:
    tau: float = DEFAULT_TAU
    window: float = DEFAULT_WINDOW
    entry: EntryAgeDistribution = field(default_factory=EntryAgeDistribution)

    def __post_init__(self):
        if not 0 < self.window <= self.tau:
            raise ValueError(f"need 0 < window <= tau, got window={self.window}, tau={self.tau}")
        lo, hi = self.entry.support
        if lo < 0 or hi > self.tau - self.window:
            raise ValueError(
                f"entry ages must lie in [0, {self.tau - self.window}], got support [{lo}, {hi}]"
            )

    def check_entry(self, u: float) -> None:
        if not 0.0 <= u <= self.tau - self.window:
            raise ValueError(f"entry age {u} outside [0, {self.tau - self.window}]")
