import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehe.aggregate import aggregate_homogeneous
from ehe.model import (
    EntryAgeDistribution,
    ObservationScheme,
    Partition,
    PiecewiseRateSet,
    RateSet,
    State,
)
from ehe.simulate import (
    BLOCK_SIZE,
    Trajectory,
    expm_generator,
    make_rng,
    observation_probability,
    observe,
    sample_cohort,
    sample_trajectory,
    simulate_cohort,
    transition_matrix,
)

RATES = RateSet.from_mapping({"HS1": 0.012, "S1D": 0.07, "HD": 0.02, "Hd": 0.02, "S1d": 0.06, "Dd": 0.10})


def test_zero_rates_no_jumps():
    traj = sample_trajectory(RateSet(np.zeros(6)), 63.0, make_rng(1))
    assert traj.jumps == ()
    assert traj.state_at(40.0) is State.H
    assert traj.alive_at_horizon


def test_fast_death_holding_time_mean():
    rng = make_rng(2)
    lam = 1e3
    r = RateSet.from_mapping({"Hd": lam})
    ages = []
    for _ in range(4000):
        t = sample_trajectory(r, 63.0, rng)
        assert [s for _, s in t.jumps] == [State.d]
        ages.append(t.death_age)
    ages = np.array(ages)
    assert abs(ages.mean() - 1 / lam) < 4 * (1 / lam) / math.sqrt(ages.size)


def test_trajectory_paths_are_admissible():
    rng = make_rng(3)
    for _ in range(500):
        t = sample_trajectory(RATES, 63.0, rng)
        ages = [a for a, _ in t.jumps]
        assert ages == sorted(ages) and len(set(ages)) == len(ages)
        prev = State.H
        for _, s in t.jumps:
            assert s > prev
            prev = s
        if t.jumps and t.jumps[-1][1] is State.d:
            assert t.death_age == t.jumps[-1][0]


def test_scalar_sampler_matches_transition_matrix_at_10():
    rng = make_rng(4)
    n = 20000
    counts = np.zeros(4)
    for _ in range(n):
        counts[int(sample_trajectory(RATES, 63.0, rng).state_at(10.0))] += 1
    p = transition_matrix(RATES, 10.0)[0]
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) <= 3 * se + 1e-12)


def test_piecewise_sampler_crosses_breakpoints():
    pw = PiecewiseRateSet.from_mapping(Partition((0, 10, 63)), {"Hd": [0.0, 0.5]})
    rng = make_rng(5)
    for _ in range(200):
        t = sample_trajectory(pw, 63.0, rng)
        assert t.death_age is None or t.death_age > 10.0


def test_transition_matrix_identities():
    assert np.array_equal(transition_matrix(RATES, 0.0), np.eye(4))
    assert np.allclose(transition_matrix(RateSet(np.zeros(6)), 30.0), np.eye(4))
    a = 0.3
    p = transition_matrix(RateSet.from_mapping({"Hd": a}), 2.0)
    assert p[0, 3] == pytest.approx(1 - math.exp(-a * 2.0), abs=1e-14)
    for t in (1.0, 20.0, 63.0):
        assert np.allclose(transition_matrix(RATES, t).sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(0, 0.5), min_size=6, max_size=6),
    st.floats(0, 20),
    st.floats(0, 20),
)
def test_transition_matrix_semigroup(vals, s, t):
    r = RateSet(np.array(vals))
    lhs = transition_matrix(r, s + t)
    rhs = transition_matrix(r, s) @ transition_matrix(r, t)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_equal_exit_rates_closed_form():
    """H exits at 0.5 + eps, S1 at 0.5: P_HS1(t) = 0.5 e^{-t/2} (1 - e^{-eps t}) / eps."""
    for tiny in (0.0, 2.220446049250313e-16, 1e-9):
        r = RateSet(np.array([0.5, 0.0, 0.0, tiny, 0.5, 0.0]))
        for t in (1.0, 7.0, 40.0):
            growth = t if tiny == 0 else -math.expm1(-tiny * t) / tiny
            exact = 0.5 * math.exp(-0.5 * t) * growth
            assert transition_matrix(r, t)[0, 1] == pytest.approx(exact, rel=1e-9)


def test_uniformization_agrees_with_scipy_in_generic_position():
    from scipy.linalg import expm

    from ehe.model import generator_matrix

    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.uniform(0.01, 1.0, 6)
        t = rng.uniform(0, 63)
        q = generator_matrix(v)
        d = -np.diag(q)[:3]
        if np.min(np.abs(np.subtract.outer(d, d)) + np.eye(3)) < 1e-3:
            continue  # scipy's triangular correction is unreliable for near-equal diagonals
        assert np.allclose(expm_generator(q, t), expm(q * t), atol=1e-12, rtol=0)


def test_piecewise_transition_matrix_is_product():
    pw = PiecewiseRateSet.from_mapping(Partition((0, 10, 63)), {"HD": [0.01, 0.05], "Hd": [0.02, 0.03]})
    p = transition_matrix(pw, 25.0)
    q = transition_matrix(pw.interval_rates(0), 10.0) @ transition_matrix(pw.interval_rates(1), 15.0)
    assert np.allclose(p, q, atol=1e-14)
    with pytest.raises(ValueError):
        transition_matrix(pw, 64.0)


def test_observe_truncated_when_dead_before_entry():
    traj = Trajectory(((35.0, State.d),), 63.0)
    assert observe(traj, 39.0, ObservationScheme()) is None


def test_observe_death_inside_window():
    traj = Trajectory(((34.0, State.d),), 63.0)
    rec = observe(traj, 30.0, ObservationScheme())
    assert rec.died and rec.exit_age == 34.0
    assert rec.episodes == [(30.0, 34.0, State.H)]


def test_observe_censored_at_window_end():
    traj = Trajectory(((50.0, State.d),), 63.0)
    rec = observe(traj, 39.0, ObservationScheme())
    assert not rec.died and rec.exit_age == 48.0 and rec.events == ()


def test_observe_entry_state_and_domain():
    traj = Trajectory(((5.0, State.S1), (18.0, State.D)), 63.0)
    rec = observe(traj, 10.0, ObservationScheme())
    assert rec.entry_state is State.S1
    assert rec.events == ((18.0, State.D),)
    with pytest.raises(ValueError):
        observe(traj, 55.0, ObservationScheme())
    early = observe(traj, 10.0, ObservationScheme(), exit_age=15.0)
    assert early.exit_age == 15.0 and early.events == ()


def test_observe_idempotent_in_horizon():
    traj = Trajectory(((5.0, State.S1), (20.0, State.D), (40.0, State.d)), 63.0)
    a = observe(traj, 15.0, ObservationScheme(63.0, 9.0, EntryAgeDistribution.uniform(0, 20)))
    b = observe(traj, 15.0, ObservationScheme(30.0, 9.0, EntryAgeDistribution.uniform(0, 20)))
    assert a == b


def test_cohort_zero_rates_everyone_observed():
    records, summary = sample_cohort(RateSet(np.zeros(6)), ObservationScheme(), 1000, seed=1)
    assert summary.n == summary.n_all == 1000
    assert summary.beta_hat == 1.0 and summary.truncated == 0
    assert len(records) == 1000


def test_cohort_beta_degenerate_entry():
    lam, u0 = 0.05, 10.0
    scheme = ObservationScheme(entry=EntryAgeDistribution.degenerate(u0))
    r = RateSet.from_mapping({"Hd": lam})
    n_all = 40000
    c = simulate_cohort(r, scheme, n_all, seed=9)
    p = math.exp(-lam * u0)
    assert observation_probability(r, scheme) == pytest.approx(p, rel=1e-12)
    assert abs(c.summary.beta_hat - p) <= 3 * math.sqrt(p * (1 - p) / n_all)


def test_cohort_seed_determinism_and_block_independence():
    scheme = ObservationScheme()
    a = simulate_cohort(RATES, scheme, 20000, seed=12)
    b = simulate_cohort(RATES, scheme, 20000, seed=12)
    assert a.records() == b.records()
    c = simulate_cohort(RATES, scheme, 20000, seed=13)
    assert a.records() != c.records()
    # complete blocks do not depend on how many persons follow them
    longer = simulate_cohort(RATES, scheme, 25000, seed=12)
    first = [r for r in a.records() if int(r.person_id[1:]) < BLOCK_SIZE]
    assert first == [r for r in longer.records() if int(r.person_id[1:]) < BLOCK_SIZE]


def test_cohort_records_valid_and_within_window():
    c = simulate_cohort(RATES, ObservationScheme(), 5000, seed=3)
    for r in c.records():
        assert r.entry_age < r.exit_age <= r.entry_age + 9.0 + 1e-12
        assert r.entry_state is not State.d


def test_empty_cohort():
    c = simulate_cohort(RATES, ObservationScheme(), 0, seed=1)
    assert c.records() == [] and c.summary.n == 0
    agg = aggregate_homogeneous(c.table)
    assert agg.counts.sum() == 0 and agg.exposure.sum() == 0.0


def test_markov_restart_from_entry():
    """Observed persons entering in H at a fixed age behave like a fresh start there."""
    u0 = 20.0
    scheme = ObservationScheme(entry=EntryAgeDistribution.degenerate(u0))
    c = simulate_cohort(RATES, scheme, 60000, seed=21)
    recs = [r for r in c.records() if r.entry_state is State.H]
    n = len(recs)
    state_at_end = np.zeros(4)
    for r in recs:
        s = r.events[-1][1] if r.events else State.H
        state_at_end[int(s)] += 1
    p = transition_matrix(RATES, 9.0)[0]
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(state_at_end / n - p) <= 3.5 * se)
