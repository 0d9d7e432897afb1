"""Minute aggregation, ARIMA gap imputation, Savitzky-Golay smoothing and z-normalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import arima
from .timeline import (
    CHANNELS,
    DEFAULT_SENTINEL,
    SECONDS_PER_MINUTE,
    DaySegment,
    RawSample,
    Stream,
    UniformSeries,
    bucket_minutes,
    streams_from_samples,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImputeConfig:
    max_gap_minutes: int = 15
    leading_fill_count: int = 5
    max_p: int = 5
    max_d: int = 2
    max_q: int = 5
    sentinel: float = DEFAULT_SENTINEL
    # shorter observed prefixes fall back to the day mean
    min_history: int = 10
    # only the most recent observations feed the ARIMA fit
    max_history: int = 240

    def __post_init__(self):
        if self.max_gap_minutes < 1:
            raise ValueError("max_gap_minutes must be >= 1")
        if min(self.max_p, self.max_d, self.max_q, self.leading_fill_count) < 0:
            raise ValueError("order bounds and leading_fill_count must be >= 0")
        if self.min_history < 1 or self.max_history < self.min_history:
            raise ValueError("need 1 <= min_history <= max_history")


@dataclass(frozen=True)
class SgConfig:
    half_window: int = 2
    poly_order: int = 3

    def __post_init__(self):
        if not 0 <= self.poly_order < 2 * self.half_window + 1:
            raise ValueError("need 0 <= poly_order < 2 * half_window + 1")


def aggregate_minutely(samples: Iterable[RawSample] | Mapping[str, Stream],
                       channels: Sequence[str] = CHANNELS,
                       sentinel: float = DEFAULT_SENTINEL) -> UniformSeries:
    """Average samples into one-minute bins spanning the first to the last sample."""
    streams = samples if isinstance(samples, Mapping) else streams_from_samples(samples)
    stamps = [st.timestamps for ch, st in streams.items() if ch in channels and len(st)]
    if not stamps:
        raise ValueError("no samples")
    lo = min(int(t[0]) for t in stamps)
    hi = max(int(t[-1]) for t in stamps)
    lo -= lo % SECONDS_PER_MINUTE
    hi = hi - hi % SECONDS_PER_MINUTE + SECONDS_PER_MINUTE
    return bucket_minutes(streams, channels, lo, hi, sentinel)


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) index ranges where ``flags`` is True."""
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _impute_column(x: np.ndarray, obs: np.ndarray, cfg: ImputeConfig):
    x = x.copy()
    obs = obs.copy()
    if not obs.any():
        raise ValueError("channel fully missing")
    day_mean = float(x[obs].mean())

    lead = slice(0, min(cfg.leading_fill_count, len(x)))
    fill = ~obs[lead]
    x[lead][fill] = day_mean
    obs[lead] = True

    usable = obs.copy()  # observed or imputed, never sentinel
    for s, e in _runs(~obs):
        n = e - s
        if n > cfg.max_gap_minutes:
            x[s:e] = cfg.sentinel
            usable[s:e] = False
            continue
        # contiguous usable history immediately before the gap
        k = s
        while k > 0 and usable[k - 1] and s - k < cfg.max_history:
            k -= 1
        history = x[k:s]
        if len(history) < cfg.min_history:
            x[s:e] = day_mean
        else:
            fit = arima.select_order(history, cfg.max_p, cfg.max_d, cfg.max_q)
            pred = arima.forecast(fit, history, n)
            x[s:e] = pred if np.all(np.isfinite(pred)) else day_mean
        obs[s:e] = True
        usable[s:e] = True
    return x, obs


def impute(series: UniformSeries, cfg: ImputeConfig = ImputeConfig()) -> UniformSeries:
    """Fill missing minutes per channel.

    The first ``leading_fill_count`` rows take the channel's day mean; gaps of
    at most ``max_gap_minutes`` are forecast by an AIC-selected ARIMA trained
    on the observed run preceding the gap; longer gaps become sentinel cells
    that stay masked out.
    """
    values = np.array(series.values)
    mask = np.array(series.mask)
    for j, ch in enumerate(series.channels):
        try:
            values[:, j], mask[:, j] = _impute_column(values[:, j], mask[:, j], cfg)
        except ValueError as exc:
            raise ValueError(f"{exc} ({ch})") from exc
    values[~mask] = cfg.sentinel
    return UniformSeries(series.start, series.channels, values, mask, cfg.sentinel)


def _center_coeffs(offsets: np.ndarray, order: int) -> np.ndarray:
    """Weights giving the value at offset 0 of the least-squares polynomial fit."""
    vander = np.vander(offsets.astype(float), order + 1, increasing=True)
    return np.linalg.pinv(vander)[0]


def sg_filter(series: UniformSeries, cfg: SgConfig = SgConfig()) -> UniformSeries:
    """Savitzky-Golay smoothing that skips masked-out cells.

    Each observed value is replaced by the centre value of a degree-``z``
    least-squares polynomial over the ``2m + 1`` window. Windows truncated by
    the series edge or by masked cells are refit on the points they contain,
    with the degree lowered when fewer than ``z + 1`` points remain.
    """
    m, z = cfg.half_window, cfg.poly_order
    width = 2 * m + 1
    if series.T < width:
        raise ValueError(f"window of {width} rows is larger than the series ({series.T})")
    full = _center_coeffs(np.arange(-m, m + 1), z)
    values = np.array(series.values)
    for j in range(series.m):
        x = series.values[:, j]
        obs = series.mask[:, j]
        out = x.copy()
        windows = np.lib.stride_tricks.sliding_window_view(x, width)
        complete = np.lib.stride_tricks.sliding_window_view(obs, width).all(axis=1)
        centers = np.arange(m, series.T - m)
        fast = complete
        out[centers[fast]] = windows[fast] @ full
        slow = np.ones(series.T, dtype=bool)
        slow[centers[fast]] = False
        for i in np.flatnonzero(slow & obs):
            lo, hi = max(0, i - m), min(series.T, i + m + 1)
            idx = np.arange(lo, hi)[obs[lo:hi]]
            offsets = idx - i
            coeffs = _center_coeffs(offsets, min(z, len(idx) - 1))
            out[i] = coeffs @ x[idx]
        values[:, j] = out
    return series.replace(values=values)


def znormalize(day: DaySegment) -> DaySegment:
    """Per-channel (x - mean) / std over observed cells (sample std, ddof=1)."""
    s = day.series
    values = np.array(s.values)
    for j, ch in enumerate(s.channels):
        obs = s.mask[:, j]
        x = s.values[obs, j]
        if len(x) < 2:
            raise ValueError(f"degenerate channel {ch}: fewer than 2 observed values")
        mean = x.mean()
        std = x.std(ddof=1)
        if not std > 0:
            raise ValueError(f"degenerate channel {ch}: zero variance")
        values[obs, j] = (x - mean) / std
    return day.with_series(s.replace(values=values))


def preprocess_day(day: DaySegment, impute_cfg: ImputeConfig = ImputeConfig(),
                   sg_cfg: SgConfig = SgConfig()) -> DaySegment:
    """Impute, smooth and z-normalize one day segment."""
    series = impute(day.series, impute_cfg)
    series = sg_filter(series, sg_cfg)
    return znormalize(day.with_series(series))
