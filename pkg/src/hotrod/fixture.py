"""Synthetic cohort with known regimes and infectivity, written as the standard input CSVs.

Each participant's day is a regime path driven by a state-gated Hawkes
process over cluster-transition events: only transitions leaving the current
regime may fire. Heart rate and steps are then drawn from regime-specific
block-Toeplitz Gaussians, with a few short and long recording gaps.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io as _io
from pathlib import Path

import numpy as np

from .hawkes import BasisSpec, EventTypeMap, HawkesModel, infectivity, simulate
from .io import dumps_json, write_text
from .synthetic import block_toeplitz, regime_series
from .timeline import (
    PERSONALITY_FACTORS,
    SECONDS_PER_HOUR,
    SECONDS_PER_MINUTE,
    DayKind,
    segment_date,
)

FIXTURE_START = 1520208000  # 2018-03-05T00:00:00Z
N_PARTICIPANTS = 3
N_DAYS = 12
N_CLUSTERS = 3
W = 5
HR_SCALE = (70.0, 12.0)
STEPS_SCALE = (25.0, 25.0)
REGIME_MEANS = ((-1.2, -1.0), (0.0, 0.3), (1.3, 1.2))
BASIS_WEIGHTS = (0.5, 0.3, 0.2)
BASE_RATE = 0.006  # per event type per minute


def _precisions() -> list[np.ndarray]:
    """Three block-Toeplitz precisions with distinct lag structure (m=2, w=5)."""
    z = np.zeros((2, 2))
    cross = np.array([[0.0, 1.0], [1.0, 0.0]])
    specs = (
        [-0.6 * cross, -0.5 * np.eye(2)],
        [0.7 * cross, 0.3 * cross],
        [0.0 * cross, -0.2 * np.eye(2) + 0.4 * cross],
    )
    out = []
    for first in specs:
        t = block_toeplitz(first + [z] * (W - 2))
        out.append(t + (0.6 - np.linalg.eigvalsh(t).min()) * np.eye(2 * W))
    return out


def _kind_infectivity(kind: DayKind, factor: float) -> np.ndarray:
    """Ground-truth U x U infectivity; A[u, v] is the excitation of type u by type v."""
    tmap = EventTypeMap(N_CLUSTERS)
    A = np.zeros((tmap.U, tmap.U))
    if kind is DayKind.WORKDAY:
        chain = [((0, 1), (1, 2), 0.45), ((1, 2), (2, 1), 0.35), ((2, 1), (1, 0), 0.30),
                 ((1, 0), (0, 1), 0.20)]
    else:
        chain = [((0, 2), (2, 0), 0.40), ((2, 0), (0, 1), 0.25), ((1, 0), (0, 2), 0.30),
                 ((0, 1), (1, 0), 0.20)]
    for trig, target, a in chain:
        A[tmap.type_of(*target), tmap.type_of(*trig)] = a * factor
    return A


def _model(A: np.ndarray, basis: BasisSpec) -> HawkesModel:
    w = np.asarray(BASIS_WEIGHTS)[:basis.M]
    w = w / w.sum()
    return HawkesModel(np.full(len(A), BASE_RATE), A[:, :, None] * w, basis)


def _gate_for(tmap: EventTypeMap):
    src = np.array([a for a, _ in tmap.pairs])
    dst = np.array([b for _, b in tmap.pairs])

    def gate(t, rates, times, types):
        state = dst[types[-1]] if types else 0
        return (src == state).astype(float)

    return gate, dst


def _regime_path(seq, dst, T: int) -> np.ndarray:
    states = np.r_[0, dst[seq.types]] if len(seq) else np.zeros(1, dtype=np.int64)
    idx = np.searchsorted(seq.times, np.arange(T), side="right")
    return states[idx].astype(np.int64)


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _runs(labels: np.ndarray) -> list[list[int]]:
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.r_[0, change]
    return [[int(s), int(labels[s])] for s in starts]


def make_fixture(seed: int, out_dir, n_participants: int = N_PARTICIPANTS,
                 n_days: int = N_DAYS) -> dict:
    """Write heartrate/steps/sleep/days/labels CSVs and truth.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    basis = BasisSpec()
    tmap = EventTypeMap(N_CLUSTERS)
    gate, dst = _gate_for(tmap)
    thetas = _precisions()
    means = [np.array(m) for m in REGIME_MEANS]
    root = np.random.SeedSequence(seed)
    part_seqs = root.spawn(n_participants)

    hr_rows, step_rows, sleep_rows, day_rows, label_rows = [], [], [], [], []
    truth: dict = {
        "seed": seed, "n_clusters": N_CLUSTERS, "window": W, "basis": basis.to_dict(),
        "event_types": tmap.names(), "regime_means": REGIME_MEANS,
        "precisions": [t.tolist() for t in thetas],
        "hr_scale": HR_SCALE, "steps_scale": STEPS_SCALE, "participants": {},
    }
    jobs = ("nurse", "technician", "nurse", "physician")
    shifts = ("day", "night", "night", "day")
    for p in range(n_participants):
        pid = f"P{p + 1:02d}"
        rng = np.random.default_rng(part_seqs[p])
        factor = 0.8 + 0.2 * p
        kinds = np.array([DayKind.WORKDAY] * (n_days // 2)
                         + [DayKind.OFFDAY] * (n_days - n_days // 2), dtype=object)
        kinds = kinds[rng.permutation(n_days)]
        onsets = [FIXTURE_START + d * 86400 + 23 * SECONDS_PER_HOUR
                  + int(rng.integers(-60, 91)) * SECONDS_PER_MINUTE for d in range(n_days + 1)]
        for d, onset in enumerate(onsets):
            dur = int(rng.integers(390, 511)) * SECONDS_PER_MINUTE
            sleep_rows.append([pid, onset, onset + dur, int(rng.integers(80, 99))])
        # an afternoon nap that must not split the day
        nap = FIXTURE_START + 2 * 86400 + 14 * SECONDS_PER_HOUR
        sleep_rows.append([pid, nap, nap + 90 * SECONDS_PER_MINUTE, 90])

        models = {k: _model(_kind_infectivity(k, factor), basis) for k in DayKind}
        ptruth = {
            "factor": factor,
            "infectivity": {k.value: infectivity(models[k]).A.tolist() for k in DayKind},
            "spectral_radius": {k.value: infectivity(models[k]).spectral_radius()
                                for k in DayKind},
            "base_rate": BASE_RATE, "days": [],
        }
        day_seeds = part_seqs[p].spawn(n_days)
        for d in range(n_days):
            lo, hi = onsets[d], onsets[d + 1]
            T = (hi - lo) // SECONDS_PER_MINUTE
            kind = kinds[d]
            drng = np.random.default_rng(day_seeds[d])
            seq = simulate(models[kind], float(T), seed=int(drng.integers(2**31)), gate=gate)
            regimes = _regime_path(seq, dst, T)
            x = regime_series(thetas, regimes, 2, W, drng, means)
            hr = HR_SCALE[0] + HR_SCALE[1] * x[:, 0]
            steps = np.maximum(0.0, np.round(STEPS_SCALE[0] + STEPS_SCALE[1] * x[:, 1]))
            hr_ok = np.ones(T, dtype=bool)
            st_ok = np.ones(T, dtype=bool)
            if drng.uniform() < 0.4:
                s = int(drng.integers(60, T - 60))
                hr_ok[s:s + int(drng.integers(3, 11))] = False
            if drng.uniform() < 0.25:
                s = int(drng.integers(60, T - 200))
                e = s + int(drng.integers(30, 91))
                hr_ok[s:e] = False
                st_ok[s:e] = False
            minutes = lo + SECONDS_PER_MINUTE * np.arange(T)
            for i in np.flatnonzero(hr_ok):
                # two readings per minute around the minute value
                for off in (int(drng.integers(0, 30)), int(drng.integers(30, 60))):
                    v = hr[i] + drng.normal(0.0, 1.0)
                    hr_rows.append([pid, int(minutes[i]) + off, int(round(max(v, 30.0)))])
            for i in np.flatnonzero(st_ok):
                step_rows.append([pid, int(minutes[i]) + 30, int(steps[i])])
            date = segment_date(lo, hi)
            day_rows.append([pid, date, kind.value])
            ptruth["days"].append({
                "date": date, "kind": kind.value, "bounds": [lo, hi], "minutes": int(T),
                "n_events": len(seq), "regime_runs": _runs(regimes),
            })
        # a metadata row with no matching segment is ignored downstream
        before = _dt.date.fromisoformat(segment_date(onsets[0], onsets[0])) - _dt.timedelta(days=1)
        day_rows.append([pid, before.isoformat(), DayKind.OFFDAY.value])
        truth["participants"][pid] = ptruth

        scores = np.round(rng.uniform(1.5, 4.5, size=len(PERSONALITY_FACTORS)), 2)
        affect = np.round(rng.uniform(10, 50, size=2), 1)
        label_rows.append([pid, jobs[p % 4], shifts[p % 4], ("f", "m")[p % 2],
                           *scores.tolist(), *affect.tolist()])

    files = {
        "heartrate.csv": (("participant_id", "timestamp", "bpm"), hr_rows),
        "steps.csv": (("participant_id", "timestamp", "steps"), step_rows),
        "sleep.csv": (("participant_id", "onset", "end", "efficiency"), sleep_rows),
        "days.csv": (("participant_id", "date", "day_kind"), day_rows),
        "labels.csv": (("participant_id", "job_type", "shift", "gender", *PERSONALITY_FACTORS,
                        "pos_affect", "neg_affect"), label_rows),
    }
    for name, (header, rows) in files.items():
        write_text(out / name, _csv_text(header, rows))
    write_text(out / "truth.json", dumps_json(truth))
    return truth
