"""Wald confidence intervals and contrasts between asymptotically independent rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

from .estimate import NO_EXPOSURE, OK, FitResult, ParamEstimate

_STD_NORMAL = NormalDist()


class RefusedError(ValueError):
    """Inference requested on a parameter without a defined estimate."""


def normal_quantile(p: float) -> float:
    return _STD_NORMAL.inv_cdf(p)


def normal_cdf(z: float) -> float:
    return _STD_NORMAL.cdf(z)


def two_sided_p(z: float) -> float:
    if math.isnan(z):
        return math.nan
    return math.erfc(abs(z) / math.sqrt(2.0))


def critical_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return normal_quantile(0.5 + level / 2.0)


def _unpack(x: ParamEstimate | tuple[float, float]) -> tuple[float, float]:
    if isinstance(x, ParamEstimate):
        if x.status == NO_EXPOSURE:
            raise RefusedError(f"{x.transition}: no exposure, estimate undefined")
        return x.estimate, x.se
    est, se = x
    if math.isnan(est) or math.isnan(se):
        raise RefusedError("estimate undefined")
    if se < 0:
        raise ValueError("standard error must be non-negative")
    return float(est), float(se)


def wald_ci(estimate: ParamEstimate | float, se: float | None = None, level: float = 0.95) -> tuple[float, float]:
    """estimate -/+ z_{(1+level)/2} * se, not truncated at zero."""
    est, s = _unpack(estimate if se is None else (estimate, se))
    half = critical_value(level) * s
    return est - half, est + half


@dataclass(frozen=True)
class ContrastResult:
    difference: float
    se: float
    level: float
    ci: tuple[float, float]
    z: float
    p_value: float

    @property
    def variance(self) -> float:
        return self.se**2

    @property
    def half_width(self) -> float:
        return (self.ci[1] - self.ci[0]) / 2.0

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha

    def as_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = list(self.ci)
        d["variance"] = self.variance
        return d


def contrast(
    first: ParamEstimate | tuple[float, float],
    second: ParamEstimate | tuple[float, float],
    level: float = 0.95,
) -> ContrastResult:
    """Wald inference on first - second, using Var = se1^2 + se2^2 (diagonal covariance)."""
    e1, s1 = _unpack(first)
    e2, s2 = _unpack(second)
    diff = e1 - e2
    se = math.hypot(s1, s2)
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    half = critical_value(level) * se
    return ContrastResult(diff, se, level, (diff - half, diff + half), z, two_sided_p(z))


@dataclass(frozen=True)
class AgeGroupTest:
    interval: tuple[float, float]
    result: ContrastResult | None
    skipped: str | None = None


@dataclass(frozen=True)
class PairwiseTests:
    first: str
    second: str
    tests: tuple[AgeGroupTest, ...]

    @property
    def n_comparisons(self) -> int:
        """Tests actually run; no multiplicity correction is applied."""
        return sum(t.result is not None for t in self.tests)


def pairwise_age_tests(
    fit: FitResult, first: str, second: str, level: float = 0.95, other: FitResult | None = None
) -> PairwiseTests:
    """Per-interval Wald contrasts of two transitions' piecewise intensities.

    ``second`` is read from ``other`` when given, which must share the partition.
    """
    other = fit if other is None else other
    if fit.partition is None or other.partition is None:
        raise ValueError("pairwise age-group tests need piecewise fits")
    if fit.partition != other.partition:
        raise ValueError("fits use different partitions")
    a, b = fit.series(first), other.series(second)
    tests = []
    for pa, pb in zip(a, b):
        if pa.status != OK or pb.status != OK:
            reason = f"{pa.transition}={pa.status}, {pb.transition}={pb.status}"
            tests.append(AgeGroupTest(pa.interval, None, reason))
        else:
            tests.append(AgeGroupTest(pa.interval, contrast(pa, pb, level)))
    return PairwiseTests(a[0].transition, b[0].transition, tuple(tests))
