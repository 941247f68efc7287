"""Trajectory simulation, exact transition probabilities and the observation filter."""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np
from scipy import integrate

from .model import (
    TRANSITION_DST,
    TRANSITION_SRC,
    TRANSITIONS,
    AnyRates,
    ObservationScheme,
    PiecewiseRateSet,
    RateSet,
    State,
    as_piecewise,
    generator_matrix,
)
from .records import EpisodeTable, ObservedRecord

# Persons per independent random substream in cohort sampling.
BLOCK_SIZE = 1 << 14
_DEATH = int(State.d)


def substream(seed: int | np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child seed sequence identified by ``key`` under ``seed``.

    The same (seed, key) always yields the same stream, independent of how
    many other streams exist or the order in which they are consumed.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def make_rng(seed: int | np.random.SeedSequence, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream(seed, *key)))


@dataclass(frozen=True)
class Trajectory:
    """Latent history from X_0 = H at age 0 up to the horizon ``tau``."""

    jumps: tuple[tuple[float, State], ...]
    tau: float

    @property
    def final_state(self) -> State:
        return self.jumps[-1][1] if self.jumps else State.H

    @property
    def alive_at_horizon(self) -> bool:
        return self.final_state is not State.d

    @property
    def death_age(self) -> float | None:
        if self.jumps and self.jumps[-1][1] is State.d:
            return self.jumps[-1][0]
        return None

    def state_at(self, t: float) -> State:
        """X_t (right-continuous: a jump at t is already in effect)."""
        state = State.H
        for age, new in self.jumps:
            if age > t:
                break
            state = new
        return state


def sample_trajectory(rates: AnyRates, tau: float, rng: np.random.Generator) -> Trajectory:
    """One latent path, stepping through the rate partition exactly.

    Within an interval the total exit rate is constant, so the holding time is
    exponential; a draw that overshoots the interval end restarts the clock at
    the next breakpoint (memorylessness makes this exact).
    """
    pw = as_piecewise(rates, tau)
    if pw.tau < tau:
        raise ValueError(f"rates defined up to {pw.tau}, cannot simulate to {tau}")
    breaks = pw.partition.breaks
    s, state, l = 0.0, State.H, 0
    jumps = []
    while state is not State.d:
        end = min(breaks[l + 1], tau)
        col = pw.values[:, l] * (TRANSITION_SRC == int(state))
        total = col.sum()
        hold = rng.standard_exponential() / total if total > 0 else np.inf
        if s + hold <= end:
            s += hold
            k = int(rng.choice(len(TRANSITIONS), p=col / total))
            state = TRANSITIONS[k].dst
            jumps.append((s, state))
        else:
            s = end
            if end >= tau:
                break
            l += 1
    return Trajectory(tuple(jumps), tau)


_UNIF_TERMS = 25


def expm_generator(q: np.ndarray, t: float) -> np.ndarray:
    """exp(Q t) for an intensity matrix Q, by uniformization with squaring.

    With q >= max exit rate, M = I + Q/q is stochastic and
    exp(Q h) = sum_k e^{-qh} (qh)^k / k! M^k has only non-negative terms. h is
    t halved until qh <= 1, then the result is squared back up. Unlike
    general-purpose expm routines this stays accurate when two states have
    (nearly) equal exit rates.
    """
    n = q.shape[0]
    rate = float(np.max(-np.diag(q)))
    if rate == 0.0 or t == 0.0:
        return np.eye(n)
    x = rate * t
    squarings = max(0, math.ceil(math.log2(x)))
    y = x / 2.0**squarings
    m = np.eye(n) + q / rate
    term = np.exp(-y) * np.eye(n)
    p = term.copy()
    for k in range(1, _UNIF_TERMS + 1):
        term = (term @ m) * (y / k)
        p += term
    for _ in range(squarings):
        p = p @ p
    return p


def transition_matrix(rates: AnyRates, t: float) -> np.ndarray:
    """P(t)[h, k] = P(X_t = k | X_0 = h); piecewise rates multiply per-interval factors in order."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if isinstance(rates, RateSet):
        return expm_generator(generator_matrix(rates.values), t)
    breaks = rates.partition.breaks
    if t > breaks[-1]:
        raise ValueError(f"t={t} beyond the partition horizon {breaks[-1]}")
    p = np.eye(4)
    for l, (lo, hi) in enumerate(zip(breaks[:-1], breaks[1:])):
        if lo >= t:
            break
        p = p @ expm_generator(generator_matrix(rates.values[:, l]), min(hi, t) - lo)
    return p


def _quad_over_entry(f, rates: AnyRates, scheme: ObservationScheme) -> float:
    entry = scheme.entry
    if entry.kind == "uniform":
        a, b = entry.params
        pts = None
        if isinstance(rates, PiecewiseRateSet):
            pts = [x for x in rates.partition.breaks if a < x < b] or None
        val, _ = integrate.quad(f, a, b, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val / (b - a)
    return float(np.mean([f(u) for u in entry.params]))


def observation_probability(rates: AnyRates, scheme: ObservationScheme) -> float:
    """beta = P(X_U != d), averaging the exact survival probability over U."""
    return _quad_over_entry(lambda u: 1.0 - transition_matrix(rates, u)[0, _DEATH], rates, scheme)


def observe(
    traj: Trajectory, u: float, scheme: ObservationScheme, exit_age: float | None = None,
    person_id: str = "p000000",
) -> ObservedRecord | None:
    """Window view ]u, u + w] of a latent path; None if dead by u (left-truncated).

    ``exit_age`` optionally ends follow-up early (independent censoring).
    """
    scheme.check_entry(u)
    end = u + scheme.window
    if exit_age is not None:
        if not u < exit_age <= end:
            raise ValueError(f"exit age {exit_age} outside ]{u}, {end}]")
        end = exit_age
    if traj.tau < end:
        raise ValueError(f"trajectory ends at {traj.tau}, before the window end {end}")
    entry_state = traj.state_at(u)
    if entry_state is State.d:
        return None
    events = []
    for age, new in traj.jumps:
        if u < age <= end:
            events.append((age, new))
            if new is State.d:
                end = age
    return ObservedRecord(person_id, u, entry_state, end, tuple(events))


@dataclass(frozen=True)
class CohortSummary:
    n_all: int
    n: int

    @property
    def truncated(self) -> int:
        return self.n_all - self.n

    @property
    def beta_hat(self) -> float:
        return self.n / self.n_all if self.n_all else float("nan")

    def as_dict(self) -> dict:
        return {"n_all": self.n_all, "n": self.n, "truncated": self.truncated, "beta_hat": self.beta_hat}


@dataclass(frozen=True, eq=False)
class SimulatedCohort:
    table: EpisodeTable
    latent_index: np.ndarray  # position of each observed person in the latent sample
    n_all: int

    @property
    def summary(self) -> CohortSummary:
        return CohortSummary(self.n_all, self.table.n_persons)

    def person_ids(self) -> list[str]:
        width = max(6, len(str(max(self.n_all - 1, 0))))
        return [f"p{i:0{width}d}" for i in self.latent_index]

    def records(self) -> list[ObservedRecord]:
        return self.table.to_records(self.person_ids())


def _simulate_block(pw: PiecewiseRateSet, scheme: ObservationScheme, n: int, rng: np.random.Generator):
    """Vectorized latent simulation up to each person's window end, then observation."""
    breaks = np.array(pw.partition.breaks)
    b = pw.partition.n_intervals
    # cum[h, l, k]: cumulative rates over transitions leaving h in interval l
    masked = np.zeros((4, b, len(TRANSITIONS)))
    for h in range(3):
        masked[h] = (pw.values * (TRANSITION_SRC == h)[:, None]).T
    cum = np.cumsum(masked, axis=2)
    total = cum[:, :, -1]
    # guards x == total after rounding: never pick a zero-rate transition
    last_pos = np.where(masked > 0, np.arange(len(TRANSITIONS)), 0).max(axis=2)

    u = scheme.entry.sample(rng, n)
    horizon = u + scheme.window
    state = np.zeros(n, dtype=np.int64)
    s = np.zeros(n)
    interval = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    jp, jt, jk = [], [], []
    while active.size:
        st, ll = state[active], interval[active]
        end = np.minimum(breaks[ll + 1], horizon[active])
        rate = total[st, ll]
        with np.errstate(divide="ignore"):
            t_new = s[active] + rng.standard_exponential(active.size) / rate
        jumped = t_new <= end
        who = active[jumped]
        if who.size:
            x = rng.random(who.size) * rate[jumped]
            k = (cum[st[jumped], ll[jumped]] <= x[:, None]).sum(axis=1)
            k = np.minimum(k, last_pos[st[jumped], ll[jumped]])
            jp.append(who)
            jt.append(t_new[jumped])
            jk.append(k)
            state[who] = TRANSITION_DST[k]
            s[who] = t_new[jumped]
        idle = active[~jumped]
        s[idle] = end[~jumped]
        going = s[idle] < horizon[idle]
        interval[idle[going]] += 1
        active = np.sort(np.concatenate([who[state[who] != _DEATH], idle[going]]))

    if jp:
        jp, jt, jk = np.concatenate(jp), np.concatenate(jt), np.concatenate(jk)
    else:
        jp, jt, jk = np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)
    order = np.lexsort((jt, jp))
    jp, jt, jk = jp[order], jt[order], jk[order]

    # state at entry: destination of the last jump at or before u
    pre = jt <= u[jp]
    n_pre = np.bincount(jp[pre], minlength=n)
    first = np.searchsorted(jp, np.arange(n))
    entry_state = np.zeros(n, dtype=np.int64)
    has = n_pre > 0
    entry_state[has] = TRANSITION_DST[jk[first[has] + n_pre[has] - 1]]

    observed = np.flatnonzero(entry_state != _DEATH)
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[observed] = np.arange(observed.size)

    win = ~pre & (new_id[jp] >= 0)
    wp, wt, wk = new_id[jp[win]], jt[win], jk[win]
    m = observed.size
    u_obs = u[observed]
    exit_age = horizon[observed].copy()
    dies = TRANSITION_DST[wk] == _DEATH
    exit_age[wp[dies]] = wt[dies]

    ep_person = np.concatenate([np.arange(m), wp])
    ep_start = np.concatenate([u_obs, wt])
    ep_state = np.concatenate([entry_state[observed], TRANSITION_DST[wk]])
    is_jump = np.concatenate([np.zeros(m, dtype=np.int64), np.ones(wp.size, dtype=np.int64)])
    order = np.lexsort((ep_start, is_jump, ep_person))
    ep_person, ep_start, ep_state = ep_person[order], ep_start[order], ep_state[order]
    ep_stop = np.empty_like(ep_start)
    same = ep_person[1:] == ep_person[:-1]
    ep_stop[:-1] = np.where(same, ep_start[1:], exit_age[ep_person[:-1]])
    if ep_stop.size:
        ep_stop[-1] = exit_age[ep_person[-1]]
    alive = ep_state != _DEATH

    table = EpisodeTable(
        entry_age=u_obs,
        exit_age=exit_age,
        entry_state=entry_state[observed],
        ep_person=ep_person[alive],
        ep_start=ep_start[alive],
        ep_stop=ep_stop[alive],
        ep_state=ep_state[alive],
        jump_person=wp,
        jump_age=wt,
        jump_kind=wk,
    )
    return table, observed


def _concat_tables(parts: list[tuple[EpisodeTable, np.ndarray]], offsets: list[int]):
    if not parts:
        return EpisodeTable.empty(), np.empty(0, dtype=np.int64)
    shift = np.cumsum([0] + [t.n_persons for t, _ in parts[:-1]])
    cat = lambda name: np.concatenate([getattr(t, name) for t, _ in parts])  # noqa: E731
    table = EpisodeTable(
        entry_age=cat("entry_age"),
        exit_age=cat("exit_age"),
        entry_state=cat("entry_state"),
        ep_person=np.concatenate([t.ep_person + k for (t, _), k in zip(parts, shift)]),
        ep_start=cat("ep_start"),
        ep_stop=cat("ep_stop"),
        ep_state=cat("ep_state"),
        jump_person=np.concatenate([t.jump_person + k for (t, _), k in zip(parts, shift)]),
        jump_age=cat("jump_age"),
        jump_kind=cat("jump_kind"),
    )
    latent = np.concatenate([idx + off for (_, idx), off in zip(parts, offsets)])
    return table, latent


def simulate_cohort(
    rates: AnyRates, scheme: ObservationScheme, n_all: int, seed: int | np.random.SeedSequence
) -> SimulatedCohort:
    """n_all independent (path, U) pairs, returned in columnar form.

    Persons are drawn in fixed blocks of BLOCK_SIZE, block k from substream k,
    so output depends only on (seed, n_all), never on scheduling.
    """
    if n_all < 0:
        raise ValueError("n_all must be non-negative")
    pw = as_piecewise(rates, scheme.tau)
    if pw.tau < scheme.tau:
        raise ValueError(f"rates defined up to {pw.tau}, horizon is {scheme.tau}")
    parts, offsets = [], []
    for k, start in enumerate(range(0, n_all, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n_all - start)
        parts.append(_simulate_block(pw, scheme, size, make_rng(seed, k)))
        offsets.append(start)
    table, latent = _concat_tables(parts, offsets)
    return SimulatedCohort(table, latent, n_all)


def sample_cohort(
    rates: AnyRates, scheme: ObservationScheme, n_all: int, seed: int | np.random.SeedSequence
) -> tuple[list[ObservedRecord], CohortSummary]:
    cohort = simulate_cohort(rates, scheme, n_all, seed)
    return cohort.records(), cohort.summary
