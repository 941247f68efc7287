"""Conditional log-likelihoods, scores and Hessians, and a numeric maximizer.

Data-only constants (the log at-risk terms, zero at every observed jump) are
dropped, so only differences of log-likelihood values are meaningful across
tools.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import optimize

from .aggregate import (
    Aggregates,
    IntervalAggregates,
    MortalityAggregates,
    SurvivalRecord,
    aggregate_mortality,
)
from .model import ParameterSpace, PiecewiseRateSet, RateSet


@dataclass(frozen=True, eq=False)
class LogLikValue:
    """Log-likelihood value with per-parameter score and Hessian diagonal.

    ``log_zero`` marks parameters at rate 0 that carry events: the value is
    -inf there, reported instead of raised so optimizers can treat it as a
    hard wall.
    """

    value: float
    score: np.ndarray
    hessian: np.ndarray
    log_zero: np.ndarray

    @property
    def is_log_zero(self) -> bool:
        return bool(np.any(self.log_zero))

    def as_dict(self, labels=None) -> dict:
        def enc(x):
            return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")

        score = self.score.ravel().tolist()
        hess = self.hessian.ravel().tolist()
        out = {"value": enc(self.value), "log_zero": self.is_log_zero}
        if labels is None:
            out["score"] = [enc(x) for x in score]
            out["hessian"] = [enc(x) for x in hess]
        else:
            out["score"] = {k: enc(x) for k, x in zip(labels, score)}
            out["hessian"] = {k: enc(x) for k, x in zip(labels, hess)}
        return out


def poisson_loglik(events: np.ndarray, exposure: np.ndarray, rates: np.ndarray) -> LogLikValue:
    """sum(N log lam - lam E) with elementwise score N/lam - E and Hessian -N/lam^2."""
    n = np.asarray(events, dtype=float)
    e = np.asarray(exposure, dtype=float)
    lam = np.asarray(rates, dtype=float)
    if np.any(lam < 0):
        raise ValueError("rates must be non-negative")
    zero = lam == 0
    log_zero = zero & (n > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n > 0, n * np.log(np.where(zero, 1.0, lam)), 0.0) - lam * e
        terms = np.where(log_zero, -np.inf, terms)
        score = np.where(n > 0, n / lam, 0.0) - e
        hessian = np.where(n > 0, -n / lam**2, 0.0)
    return LogLikValue(float(terms.sum()), score, hessian, log_zero)


def loglik(agg: Aggregates, rates: RateSet) -> LogLikValue:
    return poisson_loglik(agg.counts, agg.transition_exposure(), rates.values)


def loglik_piecewise(agg: IntervalAggregates, rates: PiecewiseRateSet) -> LogLikValue:
    if agg.partition != rates.partition:
        raise ValueError("aggregates and rates use different partitions")
    return poisson_loglik(agg.counts, agg.transition_exposure(), rates.values)


def loglik_mortality(
    data: Iterable[SurvivalRecord] | MortalityAggregates, lam: float, window: float = 9.0
) -> LogLikValue:
    """N_uncens log lam - lam * (time to death of the uncensored + time of the censored)."""
    if not lam > 0:
        raise ValueError("mortality rate must be positive")
    agg = aggregate_mortality(data, window)
    return poisson_loglik(np.array([agg.n_uncens]), np.array([agg.exposure]), np.array([lam]))


@dataclass(frozen=True, eq=False)
class MleResult:
    """Numeric maximizer output; ``boundary`` is -1 (lower), +1 (upper) or 0 per parameter."""

    estimate: np.ndarray
    boundary: np.ndarray

    @property
    def at_boundary(self) -> bool:
        return bool(np.any(self.boundary != 0))

    def to_rates(self) -> RateSet:
        return RateSet(self.estimate)


def numeric_mle(
    fn: Callable[[np.ndarray], LogLikValue],
    bounds: ParameterSpace | tuple[np.ndarray, np.ndarray],
    xtol: float = 1e-14,
) -> MleResult:
    """Coordinate-wise maximization of a separable concave log-likelihood.

    Each coordinate is solved by Brent's method on its score inside
    [lower, upper]. Working on the score rather than the value matters: a
    value-based search cannot resolve the optimum below ~1e-8 relative, since
    the log-likelihood is flat to second order there. With positive bounds the
    root is sought in x * score(x), which has the same sign and roots but is
    close to linear (N - E x) for occurrence/exposure terms.
    """
    if isinstance(bounds, ParameterSpace):
        lower, upper = bounds.lower, bounds.upper
    else:
        lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    lower, upper = np.broadcast_arrays(lower, upper)
    base = np.sqrt(lower * upper)
    est = np.empty(base.shape)
    flag = np.zeros(base.shape, dtype=np.int64)
    for idx in np.ndindex(base.shape):
        def score(x, idx=idx):
            point = base.copy()
            point[idx] = x
            g = float(fn(point).score[idx])
            return g * x if positive else g

        lo, hi = float(lower[idx]), float(upper[idx])
        positive = lo > 0
        s_lo, s_hi = score(lo), score(hi)
        if s_lo <= 0:
            est[idx], flag[idx] = lo, -1
        elif s_hi >= 0:
            est[idx], flag[idx] = hi, 1
        else:
            est[idx] = optimize.brentq(score, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return MleResult(est, flag)
