"""Transition-intensity estimation for left-truncated, window-censored multi-state data."""

from .model import (
    LIVING_STATES,
    TRANSITIONS,
    EntryAgeDistribution,
    ObservationScheme,
    Partition,
    PiecewiseRateSet,
    RateSet,
    State,
    Transition,
)

__all__ = [
    "LIVING_STATES",
    "TRANSITIONS",
    "EntryAgeDistribution",
    "ObservationScheme",
    "Partition",
    "PiecewiseRateSet",
    "RateSet",
    "State",
    "Transition",
]

__version__ = "0.1.0"
