"""Routine (infectivity) features, daily-summary features and binary targets."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .hawkes import BasisSpec, EventTypeMap, extract_events, fit_mle, infectivity
from .timeline import AFFECT_SCORES, HR, PERSONALITY_FACTORS, STEPS, DaySegment

DEFAULT_MAX_HR = 190.0
# lower edges of the fat-burn, cardio and peak zones as fractions of max HR
ZONE_EDGES = (0.51, 0.70, 0.85)
ZONE_NAMES = ("out_of_zone", "fat_burn", "cardio", "peak")
SUMMARY_FIELDS = ("sleep_duration", "sleep_efficiency", "step_count", "resting_hr",
                  "zone_out_of_zone", "zone_fat_burn", "zone_cardio", "zone_peak",
                  "day_duration")
FUNCTIONALS = ("mean", "std", "min", "max", "median")
RESTING_HR_QUANTILE = 0.10
TARGETS = PERSONALITY_FACTORS + AFFECT_SCORES + ("job_type", "shift")


class ParticipantExcluded(ValueError):
    """Raised when a participant lacks the data a feature family needs."""

    def __init__(self, participant_id, reason: str):
        super().__init__(f"participant {participant_id} excluded: {reason}")
        self.participant_id = participant_id
        self.reason = reason


@dataclass(frozen=True)
class DailySummary:
    sleep_duration: float
    sleep_efficiency: float
    step_count: int
    resting_hr: float
    zone_minutes: tuple[float, float, float, float]
    day_duration: float

    def __post_init__(self):
        if len(self.zone_minutes) != 4:
            raise ValueError("zone_minutes needs 4 entries")
        vals = self.as_array()
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("summary fields must be finite and non-negative")
        if self.sleep_efficiency > 100:
            raise ValueError("sleep_efficiency must be in [0, 100]")
        if sum(self.zone_minutes) > self.day_duration + 1e-9:
            raise ValueError("zone minutes exceed the day duration")

    def as_array(self) -> np.ndarray:
        return np.array([self.sleep_duration, self.sleep_efficiency, self.step_count,
                         self.resting_hr, *self.zone_minutes, self.day_duration], dtype=float)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    participant_id: str
    values: np.ndarray
    schema: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.schema),):
            raise ValueError(f"{values.shape[0]} values for {len(self.schema)} schema names")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple(self.schema))

    def concat(self, other: "FeatureVector") -> "FeatureVector":
        if other.participant_id != self.participant_id:
            raise ValueError("participant mismatch")
        return FeatureVector(self.participant_id, np.r_[self.values, other.values],
                             self.schema + other.schema)


def zone_minutes_of(hr: np.ndarray, max_hr: float = DEFAULT_MAX_HR) -> np.ndarray:
    """Counts of HR samples per zone using half-open fraction intervals."""
    if not max_hr > 0:
        raise ValueError("max_hr must be positive")
    frac = np.asarray(hr, dtype=float) / max_hr
    zone = np.searchsorted(np.asarray(ZONE_EDGES), frac, side="right")
    return np.bincount(zone, minlength=4).astype(float)


def zone_minutes(day: DaySegment, max_hr: float = DEFAULT_MAX_HR) -> np.ndarray:
    """Observed minutes in (out-of-zone, fat-burn, cardio, peak) for raw heart rate."""
    s = day.series
    j = s.column(HR)
    return zone_minutes_of(s.values[s.mask[:, j], j], max_hr)


def daily_summary(day: DaySegment, max_hr: float = DEFAULT_MAX_HR) -> DailySummary:
    """Summary of one raw (not normalized) day segment."""
    s = day.series
    hr_j, st_j = s.column(HR), s.column(STEPS)
    hr = s.values[s.mask[:, hr_j], hr_j]
    steps = s.values[s.mask[:, st_j], st_j]
    if len(hr) == 0:
        raise ValueError("day has no heart-rate samples")
    sleep = day.sleep
    return DailySummary(
        sleep_duration=sleep.duration / 60.0 if sleep is not None else 0.0,
        sleep_efficiency=float(sleep.efficiency) if sleep is not None else 0.0,
        step_count=int(round(steps.sum())) if len(steps) else 0,
        resting_hr=float(np.quantile(hr, RESTING_HR_QUANTILE)),
        zone_minutes=tuple(zone_minutes_of(hr, max_hr).tolist()),
        day_duration=day.duration_minutes,
    )


def summary_schema() -> tuple[str, ...]:
    return tuple(f"{f}_{g}" for f in SUMMARY_FIELDS for g in FUNCTIONALS)


def summary_features(summaries: Sequence[DailySummary], participant_id: str = "") -> FeatureVector:
    """Five functionals of each summary field across days (field-major order)."""
    if len(summaries) < 2:
        raise ValueError("need at least 2 daily summaries")
    M = np.array([s.as_array() for s in summaries])
    stats = np.stack([M.mean(axis=0), M.std(axis=0, ddof=1), M.min(axis=0),
                      M.max(axis=0), np.median(M, axis=0)], axis=1)
    return FeatureVector(participant_id, stats.ravel(), summary_schema())


def participant_seed(seed: int, participant_id: str, stream: str = "features") -> np.random.SeedSequence:
    """Named sub-stream of the global seed for one participant."""
    tag = zlib.crc32(f"{stream}/{participant_id}".encode())
    return np.random.SeedSequence([int(seed), tag])


def sample_days(keys: Sequence, n_days: int, rng: np.random.Generator) -> list:
    """Pick ``n_days`` keys without replacement; order of ``keys`` is irrelevant."""
    ordered = sorted(keys)
    idx = np.sort(rng.choice(len(ordered), size=n_days, replace=False))
    return [ordered[i] for i in idx]


def hotrod_schema(n_clusters: int) -> tuple[str, ...]:
    names = EventTypeMap(n_clusters).names()
    return tuple(f"{kind}:{a}<-{b}" for kind in ("work", "off")
                 for a in names for b in names)


def kind_infectivity(label_days: Sequence[np.ndarray], n_clusters: int,
                     basis: BasisSpec = BasisSpec(), l1: float = 0.01, group: float = 0.05,
                     missing_label: int | None = None, max_iter: int = 2000,
                     tol: float = 1e-6, seed: int = 0) -> np.ndarray:
    """Infectivity matrix fitted on the transition events of several days.

    Days without a single transition carry no excitation evidence; the matrix
    is then all zeros.
    """
    tmap = EventTypeMap(n_clusters)
    seqs = [extract_events(lab, tmap, missing_label) for lab in label_days]
    if sum(len(s) for s in seqs) == 0:
        return np.zeros((tmap.U, tmap.U))
    model = fit_mle(seqs, basis, l1=l1, group=group, max_iter=max_iter, tol=tol, seed=seed)
    return infectivity(model).A


def hotrod_features(work_days: Mapping, off_days: Mapping, n_clusters: int, n_days: int = 5,
                    basis: BasisSpec = BasisSpec(), l1: float = 0.01, group: float = 0.05,
                    seed: int = 0, participant_id: str = "",
                    missing_label: int | None = None) -> FeatureVector:
    """Workday and off-day infectivity matrices, flattened row-major and concatenated.

    ``work_days`` / ``off_days`` map a sortable day key to that day's
    per-minute cluster labels.
    """
    for kind, days in (("workdays", work_days), ("off-days", off_days)):
        if len(days) < n_days:
            raise ParticipantExcluded(participant_id,
                                      f"{len(days)} {kind} < n_days = {n_days}")
    rng = np.random.default_rng(participant_seed(seed, participant_id))
    parts = []
    for days in (work_days, off_days):
        picked = sample_days(list(days), n_days, rng)
        A = kind_infectivity([days[k] for k in picked], n_clusters, basis, l1, group,
                             missing_label, seed=seed)
        parts.append(A.ravel())
    return FeatureVector(participant_id, np.concatenate(parts), hotrod_schema(n_clusters))


def median_split(scores) -> np.ndarray:
    """1 where the score is strictly above the cohort median."""
    x = np.asarray(scores, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least 2 scores")
    if np.all(x == x[0]):
        raise ValueError("degenerate target: all scores identical")
    return (x > np.median(x)).astype(np.int64)


def is_nurse(job_type: str) -> int:
    return int(job_type.strip().lower() in ("nurse", "rn", "registered nurse"))


def is_day_shift(shift: str) -> int:
    return int(shift.strip().lower() in ("day", "day shift", "day-shift"))


def binarize_targets(records) -> dict[str, np.ndarray]:
    """Binary labels per target for ``records`` (ParticipantRecord-like objects), in order.

    Score targets missing for some participant are skipped entirely.
    """
    out: dict[str, np.ndarray] = {}
    for name in PERSONALITY_FACTORS + AFFECT_SCORES:
        vals = [r.scores.get(name) for r in records]
        if any(v is None for v in vals):
            continue
        out[name] = median_split(vals)
    out["job_type"] = np.array([is_nurse(r.job_type) for r in records], dtype=np.int64)
    out["shift"] = np.array([is_day_shift(r.shift) for r in records], dtype=np.int64)
    return out
