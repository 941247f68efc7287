"""Published aggregate statistics of the dementia-after-stroke cohort and the
rounded estimates printed alongside them.

Rates are per person-year; ages are calendar ages (interval bounds minus 50
give the model's time scale). ``None`` marks a printed "NA".
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Partition

MORTALITY = {
    "n_cens": 202_407,
    "n_uncens": 43_472,
    "uncensored_time": 180_163.0,
    "window": 9.0,
    "rate": "0.0217",
    "se": "0.000104",
}

HOMOGENEOUS = {
    "S1D": {"events": 8_105, "exposure": 115_566.0, "rate": "0.0701", "se": "0.00078"},
    "HD": {"events": 41_775, "exposure": 1_997_092.0, "rate": "0.0209", "se": "0.000102"},
}

CONTRAST = {"difference": 0.0492, "variance": 0.000000617, "se": 0.000785, "half_width": 0.00154}


@dataclass(frozen=True)
class PublishedCell:
    transition: str
    age_lo: int
    age_hi: int
    events: int
    exposure: float
    rate: str | None  # printed text, keeps the published precision
    se: str | None


_ROWS = [
    # age_lo, age_hi, S1D events, S1D time, rate, se, HD events, HD time, rate, se
    (50, 55, 13, 1199, "0.0108", "0.0030", 157, 116077, "0.0014", "0.0001"),
    (55, 60, 66, 5156, "0.0128", "0.0016", 369, 245986, "0.0015", "0.0001"),
    (60, 65, 174, 10369, "0.0168", "0.0013", 800, 318543, "0.0025", "0.0001"),
    (65, 70, 387, 14839, "0.0261", "0.0013", 1856, 350043, "0.0053", "0.0001"),
    (70, 75, 815, 21737, "0.0375", "0.0013", 4112, 360343, "0.0114", "0.0002"),
    (75, 80, 1300, 23318, "0.0558", "0.0015", 7212, 291776, "0.0247", "0.0003"),
    (80, 85, 1584, 18496, "0.0856", "0.0022", 9151, 188161, "0.0486", "0.0005"),
    (85, 90, 1138, 10101, "0.1127", "0.0033", 7087, 87106, "0.0814", "0.0010"),
    (90, 95, 489, 3544, "0.1380", "0.0062", 3745, 28899, "0.1296", "0.0021"),
    (95, 100, 122, 716, "0.1705", "0.0154", 963, 5816, "0.1656", "0.0053"),
    (100, 105, 8, 97, "0.0827", "0.0292", 92, 657, "0.1400", "0.0146"),
    (105, 110, 0, 2, "0", "0", 4, 27, "0.1509", "0.0755"),
    (110, 113, 0, 0, None, None, 0, 0, None, None),
]

PIECEWISE = tuple(
    cell
    for lo, hi, a1, b1, r1, s1, a2, b2, r2, s2 in _ROWS
    for cell in (
        PublishedCell("S1D", lo, hi, a1, float(b1), r1, s1),
        PublishedCell("HD", lo, hi, a2, float(b2), r2, s2),
    )
)

PARTITION = Partition(tuple(float(lo - 50) for lo, *_ in _ROWS) + (float(_ROWS[-1][1] - 50),))
