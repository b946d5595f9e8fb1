"""Per-trajectory outcome metrics on the 4-hour grid.

Grid extension for stays shorter than the metric horizon: after the last
recorded interval, survivors count as alive, support-free and shock-free;
decedents count as dead (never free, never shock-free).
"""
import csv
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cohort.types import STEP_HOURS
from .exceptions import InputError

OSFD_INTERVALS = 42
INTERVALS_PER_DAY = 6
TSR_INTERVALS = 18
TSR_CAP_HOURS = 72.0
TSR_WINDOW = 3
SHOCK_MAP = 65.0

DISCHARGE_SCORES = {
    "home": 7,
    "home_health": 6,
    "rehab": 5,
    "assisted_living": 4,
    "skilled_nursing": 3,
    "long_term_acute_care": 2,
    "acute_hospital": 1,
    "hospice": 0,
    "death": 0,
}
MISSING_DISCHARGE = ("other", "against_medical_advice", "psychiatric")


def _extend(values, horizon, fill):
    out = np.full(horizon, fill, dtype=bool)
    n = min(horizon, len(values))
    out[:n] = values[:n]
    return out


def support_free(traj):
    """Per recorded interval: alive and off vasopressors, ventilation and RRT."""
    return traj.alive & ~traj.vasopressor_on & ~traj.mech_vent & ~traj.rrt


def osfd7(traj):
    """Organ-support-free days in the first 7 days (42 intervals / 6)."""
    free = _extend(support_free(traj), OSFD_INTERVALS, not traj.mortality)
    return float(free.sum()) / INTERVALS_PER_DAY


def shock_flags(traj):
    return traj.vasopressor_on | (traj.map < SHOCK_MAP)


def time_to_shock_resolution(traj):
    """Hours to the start of the earliest 3-interval shock-free window within 72 h.

    ``None`` if the recorded trajectory never meets the shock predicate; 72
    when no qualifying window starts and ends inside the horizon.
    """
    shock = shock_flags(traj)
    if not shock.any():
        return None
    calm = _extend(~shock & traj.alive, TSR_INTERVALS, not traj.mortality)
    for t in range(TSR_INTERVALS - TSR_WINDOW + 1):
        if calm[t:t + TSR_WINDOW].all():
            return float(STEP_HOURS * t)
    return TSR_CAP_HOURS


def treatment_burden(traj):
    """Mean IV bin and mean vasopressor bin over the recorded steps."""
    if len(traj) == 0:
        raise InputError("empty trajectory")
    return float(np.mean(traj.iv_bins)), float(np.mean(traj.vaso_bins))


def discharge_score(category):
    """Ordinal 0..7 disposition score; ``None`` for missing or excluded categories."""
    if category is None or category in MISSING_DISCHARGE:
        return None
    try:
        return DISCHARGE_SCORES[category]
    except KeyError:
        raise InputError(f"unknown discharge category {category!r}") from None


@dataclass(frozen=True)
class OutcomeRecord:
    id: str
    osfd7: float
    tsr_hours: Optional[float]
    iv_burden: float
    vaso_burden: float
    discharge_score: Optional[int]
    mortality: bool

    FIELDS = ("id", "osfd7", "tsr_hours", "iv_burden", "vaso_burden", "discharge_score", "mortality")

    @classmethod
    def from_trajectory(cls, traj):
        iv, vaso = treatment_burden(traj)
        return cls(traj.id, osfd7(traj), time_to_shock_resolution(traj), iv, vaso,
                   discharge_score(traj.discharge_category), traj.mortality)

    def as_row(self):
        d = asdict(self)
        return ["" if d[k] is None else (int(d[k]) if k == "mortality" else d[k]) for k in self.FIELDS]


def compute_outcomes(trajectories):
    return [OutcomeRecord.from_trajectory(t) for t in trajectories]


def outcome_array(records, name):
    """Column ``name`` as float array with NaN for undefined values."""
    if name not in OutcomeRecord.FIELDS or name == "id":
        raise InputError(f"unknown outcome {name!r}")
    return np.array([math.nan if getattr(r, name) is None else float(getattr(r, name)) for r in records])


def write_outcomes_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OutcomeRecord.FIELDS)
        for r in records:
            w.writerow(r.as_row())


def read_outcomes_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(OutcomeRecord(
                id=row["id"],
                osfd7=float(row["osfd7"]),
                tsr_hours=float(row["tsr_hours"]) if row["tsr_hours"] else None,
                iv_burden=float(row["iv_burden"]),
                vaso_burden=float(row["vaso_burden"]),
                discharge_score=int(row["discharge_score"]) if row["discharge_score"] else None,
                mortality=row["mortality"] == "1",
            ))
    return out
