"""Participant/day data model: raw samples, minute-rate series and day segments."""

from __future__ import annotations

import datetime as _dt
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SECONDS_PER_MINUTE = 60
SECONDS_PER_HOUR = 3600

HR = "hr"
STEPS = "steps"
CHANNELS = (HR, STEPS)

DEFAULT_SENTINEL = -10.0

MIN_SLEEP_HOURS = 6.0
MIN_DAY_HOURS = 20.0
MAX_DAY_HOURS = 28.0

PERSONALITY_FACTORS = ("neu", "con", "ext", "agr", "opn")
AFFECT_SCORES = ("pos_affect", "neg_affect")


class DayKind(str, Enum):
    WORKDAY = "workday"
    OFFDAY = "offday"


def floor_minute(ts: int) -> int:
    return int(ts) - int(ts) % SECONDS_PER_MINUTE


@dataclass(frozen=True)
class RawSample:
    timestamp: int
    channel: str
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite sample value {self.value!r} at {self.timestamp}")


@dataclass(frozen=True, eq=False)
class Stream:
    """One channel's samples as parallel arrays, sorted by (timestamp, value)."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).ravel()
        vs = np.asarray(self.values, dtype=float).ravel()
        if ts.shape != vs.shape:
            raise ValueError("timestamps and values differ in length")
        if not np.all(np.isfinite(vs)):
            raise ValueError("stream contains non-finite values")
        # canonical order makes aggregation independent of input interleaving
        order = np.lexsort((vs, ts))
        ts, vs = ts[order], vs[order]
        ts.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def empty(cls) -> "Stream":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def between(self, start: int, stop: int) -> "Stream":
        lo, hi = np.searchsorted(self.timestamps, [start, stop], side="left")
        return Stream(self.timestamps[lo:hi], self.values[lo:hi])


def streams_from_samples(samples: Iterable[RawSample]) -> dict[str, Stream]:
    by_channel: dict[str, list[RawSample]] = {}
    for s in samples:
        by_channel.setdefault(s.channel, []).append(s)
    return {
        ch: Stream(np.array([s.timestamp for s in ss], dtype=np.int64),
                   np.array([s.value for s in ss], dtype=float))
        for ch, ss in by_channel.items()
    }


@dataclass(frozen=True, eq=False)
class UniformSeries:
    """Minute-rate multivariate series.

    Row ``i`` holds minute ``start + 60 * i``. ``mask`` is True where a cell is
    observed or imputed; every False cell holds ``sentinel``.
    """

    start: int
    channels: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray
    sentinel: float = DEFAULT_SENTINEL

    def __post_init__(self):
        if self.start % SECONDS_PER_MINUTE:
            raise ValueError("start must be minute-aligned")
        values = np.array(self.values, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim == 1:
            values = values[:, None]
            mask = mask.reshape(-1, 1)
        channels = tuple(self.channels)
        if values.ndim != 2 or values.shape != mask.shape:
            raise ValueError("values and mask must be matching T x m arrays")
        T, m = values.shape
        if T < 1 or m < 1:
            raise ValueError("series needs at least one row and one channel")
        if len(channels) != m:
            raise ValueError(f"{len(channels)} channel names for {m} columns")
        if np.any(values[~mask] != self.sentinel):
            raise ValueError("masked-out cells must hold the sentinel value")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains non-finite values")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "channels", channels)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def stop(self) -> int:
        return self.start + self.T * SECONDS_PER_MINUTE

    def column(self, channel: str) -> int:
        return self.channels.index(channel)

    def replace(self, values=None, mask=None) -> "UniformSeries":
        """Copy with new values and/or mask; cells masked out are reset to the sentinel."""
        values = np.array(self.values if values is None else values, dtype=float)
        mask = np.array(self.mask if mask is None else mask, dtype=bool)
        values[~mask] = self.sentinel
        return UniformSeries(self.start, self.channels, values, mask, self.sentinel)


def bucket_minutes(streams: Mapping[str, Stream], channels: Sequence[str],
                   start: int, stop: int,
                   sentinel: float = DEFAULT_SENTINEL) -> UniformSeries:
    """Average each channel's samples in ``[start, stop)`` into one-minute bins."""
    start = floor_minute(start)
    T = max(1, -(-(stop - start) // SECONDS_PER_MINUTE))
    values = np.full((T, len(channels)), sentinel, dtype=float)
    mask = np.zeros((T, len(channels)), dtype=bool)
    for j, ch in enumerate(channels):
        st = streams.get(ch)
        if st is None or len(st) == 0:
            continue
        sub = st.between(start, stop)
        if len(sub) == 0:
            continue
        idx = (sub.timestamps - start) // SECONDS_PER_MINUTE
        counts = np.bincount(idx, minlength=T)
        sums = np.bincount(idx, weights=sub.values, minlength=T)
        seen = counts > 0
        values[seen, j] = sums[seen] / counts[seen]
        mask[seen, j] = True
    return UniformSeries(start, tuple(channels), values, mask, sentinel)


@dataclass(frozen=True)
class SleepRecord:
    onset: int
    end: int
    efficiency: float = float("nan")

    def __post_init__(self):
        if self.end <= self.onset:
            raise ValueError(f"sleep end {self.end} not after onset {self.onset}")
        if not math.isnan(self.efficiency) and not 0.0 <= self.efficiency <= 100.0:
            raise ValueError(f"sleep efficiency {self.efficiency} outside [0, 100]")

    @property
    def duration(self) -> int:
        return self.end - self.onset


@dataclass(frozen=True, eq=False)
class DaySegment:
    """The interval between two consecutive qualifying sleep onsets."""

    series: UniformSeries
    day_kind: DayKind
    participant_id: str
    bounds: tuple[int, int]
    index: int = 0
    date: str = ""
    sleep: SleepRecord | None = None

    def __post_init__(self):
        object.__setattr__(self, "day_kind", DayKind(self.day_kind))
        lo, hi = self.bounds
        hours = (hi - lo) / SECONDS_PER_HOUR
        if not MIN_DAY_HOURS <= hours <= MAX_DAY_HOURS:
            raise ValueError(f"day segment of {hours:.2f} h outside [20, 28] h")

    @property
    def duration_minutes(self) -> float:
        return (self.bounds[1] - self.bounds[0]) / SECONDS_PER_MINUTE

    def with_series(self, series: UniformSeries) -> "DaySegment":
        return DaySegment(series, self.day_kind, self.participant_id, self.bounds,
                          self.index, self.date, self.sleep)


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    job_type: str = ""
    shift: str = ""
    gender: str = ""
    scores: Mapping[str, float] = field(default_factory=dict)
    streams: Mapping[str, Stream] = field(default_factory=dict)
    sleeps: tuple[SleepRecord, ...] = ()
    day_kinds: Mapping[str, DayKind] = field(default_factory=dict)

    def __post_init__(self):
        for name in PERSONALITY_FACTORS:
            v = self.scores.get(name)
            if v is not None and not math.isnan(v) and not 1.0 <= v <= 5.0:
                raise ValueError(f"{self.participant_id}: {name}={v} outside [1, 5]")


def segment_date(onset: int, next_onset: int, utc_offset: int = 0) -> str:
    """Calendar date (ISO) of a segment's midpoint, in participant-local time."""
    mid = (onset + next_onset) // 2 + utc_offset
    return _dt.datetime.fromtimestamp(mid, tz=_dt.timezone.utc).date().isoformat()


def segment_days(streams: Mapping[str, Stream] | Iterable[RawSample],
                 sleeps: Sequence[SleepRecord],
                 kinds: Mapping[str, DayKind | str],
                 participant_id: str = "",
                 channels: Sequence[str] = CHANNELS,
                 utc_offset: int = 0,
                 sentinel: float = DEFAULT_SENTINEL) -> list[DaySegment]:
    """Split a participant's streams into days bounded by consecutive sleep onsets.

    Sleeps shorter than six hours are ignored as naps. Segments outside
    20-28 h, or whose midpoint date has no entry in ``kinds``, are dropped.
    An onset falling exactly on a boundary starts the new segment.
    """
    if not isinstance(streams, Mapping):
        streams = streams_from_samples(streams)
    min_sleep = MIN_SLEEP_HOURS * SECONDS_PER_HOUR
    onsets = sorted({s.onset for s in sleeps if s.duration >= min_sleep})
    first_sleep = {}
    for s in sorted(sleeps, key=lambda s: (s.onset, s.end)):
        if s.duration >= min_sleep:
            first_sleep.setdefault(s.onset, s)

    days: list[DaySegment] = []
    for lo, hi in zip(onsets[:-1], onsets[1:]):
        hours = (hi - lo) / SECONDS_PER_HOUR
        if not MIN_DAY_HOURS <= hours <= MAX_DAY_HOURS:
            logger.debug("%s: dropping %.1f h segment at %d", participant_id, hours, lo)
            continue
        date = segment_date(lo, hi, utc_offset)
        kind = kinds.get(date)
        if kind is None:
            logger.debug("%s: no day kind for %s", participant_id, date)
            continue
        clipped = {ch: st.between(lo, hi) for ch, st in streams.items()}
        series = bucket_minutes(clipped, channels, lo, hi, sentinel)
        days.append(DaySegment(series, DayKind(kind), participant_id, (lo, hi),
                               index=len(days), date=date, sleep=first_sleep[lo]))
    return days
