"""End-to-end stage runner: preprocess -> cluster -> hawkes -> features -> evaluate.

Every stage writes its artifacts atomically and records a fingerprint of its
inputs and settings under ``<work_dir>/.stages``; a rerun with the same
fingerprint and intact outputs is skipped unless forced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import FEATURE_SETS, ConfigError, PipelineConfig
from .evaluation import MIN_CV_SAMPLES, cross_validate, default_grid
from .features import (
    SUMMARY_FIELDS,
    DailySummary,
    ParticipantExcluded,
    daily_summary,
    hotrod_features,
    hotrod_schema,
    is_day_shift,
    is_nurse,
    kind_infectivity,
    median_split,
    summary_features,
    summary_schema,
)
from .hawkes import EventTypeMap, granger_graph
from .io import (
    InputError,
    file_digest,
    read_csv,
    read_day_kinds,
    read_labels,
    read_meta,
    read_sleeps,
    read_streams,
    write_csv,
    write_json,
)
from .preprocess import preprocess_day
from .ticc import TiccConfig, ticc_fit
from .timeline import (
    AFFECT_SCORES,
    CHANNELS,
    PERSONALITY_FACTORS,
    DayKind,
    UniformSeries,
    segment_days,
)

logger = logging.getLogger(__name__)

STAGES = ("preprocess", "cluster", "hawkes", "features", "evaluate")
STAMP_DIR = ".stages"
INPUT_FILES = ("heartrate.csv", "steps.csv", "sleep.csv", "days.csv")
TARGET_NAMES = PERSONALITY_FACTORS + AFFECT_SCORES + ("job_type", "shift")
INSUFFICIENT = "insufficient samples"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, participant: str | None = None):
        who = f" participant {participant}" if participant else ""
        super().__init__(f"stage {stage}{who}: {cause}")
        self.stage = stage
        self.participant = participant
        self.cause = cause


def exit_code_for(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return 3
    if isinstance(cause, (InputError, FileNotFoundError)):
        return 2
    return 1


def stage_seed(seed: int, *names) -> int:
    tags = [zlib.crc32(str(n).encode()) for n in names]
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map over a bounded thread pool (sequential when workers == 1)."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---- stage bookkeeping -------------------------------------------------------

def _fingerprint(stage: str, cfg: PipelineConfig, sections: Sequence[str],
                 inputs: Iterable[Path]) -> str:
    h = hashlib.sha256()
    h.update(f"{stage}|{__version__}|{cfg.section_hash(*sections)}".encode())
    for p in sorted(Path(x) for x in inputs):
        h.update(p.name.encode())
        h.update(file_digest(p).encode() if p.exists() else b"<absent>")
    return h.hexdigest()


def _stamp_path(cfg: PipelineConfig, stage: str) -> Path:
    return cfg.work_dir / STAMP_DIR / f"{stage}.json"


def _is_current(cfg: PipelineConfig, stage: str, fp: str) -> bool:
    path = _stamp_path(cfg, stage)
    if not path.exists():
        return False
    stamp = json.loads(path.read_text())
    if stamp.get("fingerprint") != fp:
        return False
    for rel, digest in stamp.get("outputs", {}).items():
        p = cfg.work_dir / rel
        if not p.exists() or file_digest(p) != digest:
            return False
    return True


def _write_stamp(cfg: PipelineConfig, stage: str, fp: str, outputs: Iterable[Path]):
    outs = {str(Path(p).relative_to(cfg.work_dir)): file_digest(p) for p in outputs}
    write_json(_stamp_path(cfg, stage), {"fingerprint": fp, "outputs": outs})


def _require(path: Path, hint: str = "") -> Path:
    if not path.exists():
        extra = f" ({hint})" if hint else ""
        raise InputError(f"missing input file: {path}{extra}")
    return path


# ---- preprocess --------------------------------------------------------------

def _day_name(pid: str, index: int) -> str:
    return f"{pid}_{index}"


def _preprocess_participant(args):
    pid, streams, sleeps, kinds, cfg = args
    days = segment_days(streams, sleeps, kinds, pid, CHANNELS, cfg.utc_offset,
                        cfg.impute.sentinel)
    kept, dropped = [], []
    for day in days:
        try:
            summary = daily_summary(day, cfg.features.max_hr)
            clean = preprocess_day(day, cfg.impute, cfg.sg)
        except ValueError as exc:
            dropped.append({"participant_id": pid, "date": day.date, "reason": str(exc)})
            continue
        kept.append((clean, summary))
    return kept, dropped


def run_preprocess(cfg: PipelineConfig, force: bool = False) -> bool:
    inp = cfg.input_dir
    files = [_require(inp / f) for f in INPUT_FILES]
    fp = _fingerprint("preprocess", cfg, ("impute", "sg", "utc_offset", "features"), files)
    if not force and _is_current(cfg, "preprocess", fp):
        return False
    hr = read_streams(inp / "heartrate.csv", "bpm")
    steps = read_streams(inp / "steps.csv", "steps")
    sleeps = read_sleeps(inp / "sleep.csv")
    kinds = read_day_kinds(inp / "days.csv")
    pids = sorted(set(hr) | set(steps))
    jobs = []
    for pid in pids:
        streams = {c: s for c, s in (("hr", hr.get(pid)), ("steps", steps.get(pid))) if s is not None}
        jobs.append((pid, streams, sleeps.get(pid, []), kinds.get(pid, {}), cfg))

    def work(job):
        try:
            return _preprocess_participant(job)
        except Exception as exc:
            raise StageError("preprocess", exc, job[0]) from exc

    results = _map(work, jobs, cfg.effective_workers())
    out = cfg.work_dir
    h = cfg.hash
    index, dropped, summary_rows, outputs = [], [], [], []
    for (pid, *_), (kept, drop) in zip(jobs, results):
        dropped.extend(drop)
        for day, summary in kept:
            name = _day_name(pid, day.index)
            s = day.series
            rows = [(i, s.values[i, 0], s.values[i, 1], s.mask[i, 0], s.mask[i, 1])
                    for i in range(s.T)]
            path = write_csv(out / "days" / f"day_{name}.csv",
                             ("minute", "hr", "steps", "hr_mask", "steps_mask"), rows, h)
            outputs.append(path)
            index.append({"participant_id": pid, "index": day.index, "date": day.date,
                          "day_kind": day.day_kind.value, "start": s.start,
                          "bounds": list(day.bounds), "file": path.name})
            summary_rows.append([pid, day.index, day.date, day.day_kind.value,
                                 *summary.as_array().tolist()])
    outputs.append(write_csv(out / "summaries.csv",
                             ("participant_id", "index", "date", "day_kind", *SUMMARY_FIELDS),
                             summary_rows, h))
    outputs.append(write_json(out / "days" / "index.json",
                              {"days": index, "dropped": dropped, "participants": pids}, h))
    _write_stamp(cfg, "preprocess", fp, outputs)
    logger.info("preprocess: %d days kept, %d dropped", len(index), len(dropped))
    return True


def _load_index(cfg: PipelineConfig) -> dict:
    path = _require(cfg.work_dir / "days" / "index.json", "run the preprocess stage first")
    return json.loads(path.read_text())


def load_day_series(cfg: PipelineConfig, entry: dict) -> UniformSeries:
    rows = read_csv(cfg.work_dir / "days" / entry["file"],
                    ("minute", "hr", "steps", "hr_mask", "steps_mask"))
    values = np.array([[float(r["hr"]), float(r["steps"])] for r in rows])
    mask = np.array([[r["hr_mask"] == "1", r["steps_mask"] == "1"] for r in rows])
    return UniformSeries(int(entry["start"]), CHANNELS, values, mask, cfg.impute.sentinel)


# ---- cluster -----------------------------------------------------------------

def ticc_config_for(cfg: PipelineConfig) -> TiccConfig:
    """The clustering config with its seed drawn from the global seed's cluster stream."""
    return replace(cfg.ticc, seed=stage_seed(cfg.seed, "cluster", cfg.ticc.seed) % 2**31)


def run_cluster(cfg: PipelineConfig, force: bool = False) -> bool:
    index = _load_index(cfg)
    day_files = [cfg.work_dir / "days" / e["file"] for e in index["days"]]
    fp = _fingerprint("cluster", cfg, ("ticc", "seed", "impute"),
                      [cfg.work_dir / "days" / "index.json", *day_files])
    if not force and _is_current(cfg, "cluster", fp):
        return False
    if not index["days"]:
        raise StageError("cluster", InputError("no retained day segments to cluster"))
    series = [load_day_series(cfg, e) for e in index["days"]]
    tcfg = ticc_config_for(cfg)
    try:
        res = ticc_fit(series, tcfg)
    except Exception as exc:
        raise StageError("cluster", exc) from exc
    h = cfg.hash
    outputs = []
    for entry, labels in zip(index["days"], res.minute_labels(series)):
        name = _day_name(entry["participant_id"], entry["index"])
        outputs.append(write_csv(cfg.work_dir / "labels" / f"labels_{name}.csv",
                                 ("minute", "label"), enumerate(labels.tolist()), h))
    models = {
        "K": tcfg.K, "missing_label": res.missing_label, "w": tcfg.w, "m": len(CHANNELS),
        "channels": list(CHANNELS), "converged": res.converged, "n_iter": res.n_iter,
        "objective_trace": res.objective_trace,
        "clusters": [{"mu": mdl.mu, "theta": mdl.theta.ravel()} for mdl in res.models],
        "config": cfg.to_dict()["ticc"] | {"seed": tcfg.seed},
    }
    outputs.append(write_json(cfg.work_dir / "labels" / "models.json", models, h))
    _write_stamp(cfg, "cluster", fp, outputs)
    logger.info("cluster: %d days, %d EM iterations", len(series), res.n_iter)
    return True


def _load_labels(cfg: PipelineConfig, entry: dict) -> np.ndarray:
    name = _day_name(entry["participant_id"], entry["index"])
    path = _require(cfg.work_dir / "labels" / f"labels_{name}.csv",
                    "run the cluster stage first")
    return np.array([int(r["label"]) for r in read_csv(path, ("minute", "label"))], dtype=np.int64)


def _cluster_inputs(cfg: PipelineConfig) -> tuple[dict, list[Path]]:
    index = _load_index(cfg)
    files = [cfg.work_dir / "labels" / "models.json"]
    files += [cfg.work_dir / "labels" / f"labels_{_day_name(e['participant_id'], e['index'])}.csv"
              for e in index["days"]]
    for f in files:
        _require(f, "run the cluster stage first")
    return index, files


# ---- hawkes ------------------------------------------------------------------

def run_hawkes(cfg: PipelineConfig, force: bool = False, participants: Sequence[str] | None = None,
               kinds: Sequence[str] = ("workday", "offday"), group: str | None = None) -> bool:
    """Population-level (or ``participants``-restricted) infectivity per day kind."""
    index, files = _cluster_inputs(cfg)
    tag = ",".join(sorted(participants)) if participants else "all"
    fp = _fingerprint(f"hawkes[{group or tag}|{','.join(kinds)}]", cfg,
                      ("hawkes", "seed", "ticc"), files)
    stage = "hawkes" if group is None and participants is None else f"hawkes-{group or tag}"
    if not force and _is_current(cfg, stage, fp):
        return False
    K = cfg.ticc.K
    h = cfg.hash
    outputs = []
    for kind in kinds:
        DayKind(kind)
        entries = [e for e in index["days"] if e["day_kind"] == kind
                   and (participants is None or e["participant_id"] in participants)]
        name = f"{group or tag}_{kind}" if (group or participants) else kind
        labels = [_load_labels(cfg, e) for e in entries]
        A = kind_infectivity(labels, K, cfg.hawkes.basis, cfg.hawkes.l1, cfg.hawkes.group,
                             missing_label=K, max_iter=cfg.hawkes.max_iter, tol=cfg.hawkes.tol,
                             seed=stage_seed(cfg.seed, "hawkes", name) % 2**31)
        g = granger_graph(A, cfg.hawkes.epsilon)
        names = EventTypeMap(K).names()
        outputs.append(write_json(cfg.work_dir / "hawkes" / f"infectivity_{name}.json", {
            "group": name, "n_days": len(entries), "event_types": names, "A": A.ravel(),
            "shape": list(A.shape), "basis": cfg.hawkes.basis.to_dict(),
            "config": cfg.to_dict()["hawkes"],
        }, h))
        outputs.append(write_json(cfg.work_dir / "hawkes" / f"graph_{name}.json", {
            "group": name, "epsilon": cfg.hawkes.epsilon, "nodes": names,
            "edges": [[names[s], names[d]] for s, d in g.edges],
        }, h))
    _write_stamp(cfg, stage, fp, outputs)
    return True


# ---- features ----------------------------------------------------------------

def _summaries_by_participant(cfg: PipelineConfig) -> dict[str, list[DailySummary]]:
    rows = read_csv(_require(cfg.work_dir / "summaries.csv"), ("participant_id",) + SUMMARY_FIELDS)
    out: dict[str, list[DailySummary]] = {}
    for r in rows:
        v = [float(r[f]) for f in SUMMARY_FIELDS]
        out.setdefault(r["participant_id"], []).append(
            DailySummary(v[0], v[1], int(v[2]), v[3], tuple(v[4:8]), v[8]))
    return out


def run_features(cfg: PipelineConfig, force: bool = False) -> bool:
    index, files = _cluster_inputs(cfg)
    labels_csv = cfg.input_dir / "labels.csv"
    files = files + [cfg.work_dir / "summaries.csv", labels_csv]
    fp = _fingerprint("features", cfg, ("features", "hawkes", "seed", "ticc"), files)
    if not force and _is_current(cfg, "features", fp):
        return False
    summaries = _summaries_by_participant(cfg)
    K = cfg.ticc.K
    by_pid: dict[str, dict[str, dict]] = {}
    for e in index["days"]:
        by_pid.setdefault(e["participant_id"], {"workday": {}, "offday": {}})
        by_pid[e["participant_id"]][e["day_kind"]][e["date"]] = e

    def work(pid):
        try:
            kinds = by_pid.get(pid, {"workday": {}, "offday": {}})
            days = summaries.get(pid, [])
            if len(days) < 2:
                raise ParticipantExcluded(pid, f"{len(days)} usable days < 2")
            sf = summary_features(days, pid)
            work_l = {k: _load_labels(cfg, e) for k, e in kinds["workday"].items()}
            off_l = {k: _load_labels(cfg, e) for k, e in kinds["offday"].items()}
            hf = hotrod_features(work_l, off_l, K, cfg.features.n_days, cfg.hawkes.basis,
                                 cfg.hawkes.l1, cfg.hawkes.group, cfg.seed, pid, missing_label=K)
            return sf, hf, None
        except ParticipantExcluded as exc:
            return None, None, exc.reason
        except Exception as exc:
            raise StageError("features", exc, pid) from exc

    pids = sorted(index["participants"])
    results = _map(work, pids, cfg.effective_workers())
    included, excluded, rows = [], {}, []
    header = None
    for pid, (sf, hf, reason) in zip(pids, results):
        if reason is not None:
            excluded[pid] = reason
            continue
        included.append(pid)
        header = ["participant_id", *("summary." + n for n in sf.schema),
                  *("hotrod." + n for n in hf.schema)]
        rows.append([pid, *sf.values.tolist(), *hf.values.tolist()])
    if header is None:
        header = ["participant_id", *("summary." + n for n in summary_schema()),
                  *("hotrod." + n for n in hotrod_schema(K))]
    h = cfg.hash
    outputs = [write_csv(cfg.work_dir / "features.csv", header, rows, h),
               write_json(cfg.work_dir / "excluded.json", {"excluded": excluded}, h)]
    if labels_csv.exists():
        outputs.append(_write_targets(cfg, included, h))
    else:
        stale = cfg.work_dir / "targets.csv"
        if stale.exists():
            stale.unlink()
    _write_stamp(cfg, "features", fp, outputs)
    logger.info("features: %d participants, %d excluded", len(included), len(excluded))
    return True


def _write_targets(cfg: PipelineConfig, pids: Sequence[str], h: str) -> Path:
    recs = {r["participant_id"]: r for r in read_labels(cfg.input_dir / "labels.csv")}
    missing = [p for p in pids if p not in recs]
    if missing:
        raise StageError("features", InputError(f"labels.csv has no row for {missing}"))
    recs = [recs[p] for p in pids]
    cols, notes = {}, {}
    for name in PERSONALITY_FACTORS + AFFECT_SCORES:
        vals = [r["scores"].get(name) for r in recs]
        if any(v is None for v in vals):
            notes[name] = "score missing for some participant"
            continue
        try:
            cols[name] = median_split(vals) if len(vals) >= 2 else None
        except ValueError as exc:
            notes[name] = str(exc)
            continue
        if cols[name] is None:
            notes[name] = "fewer than 2 participants"
            del cols[name]
    cols["job_type"] = np.array([is_nurse(r["job_type"]) for r in recs])
    cols["shift"] = np.array([is_day_shift(r["shift"]) for r in recs])
    names = [n for n in TARGET_NAMES if n in cols]
    rows = [[p, *(int(cols[n][i]) for n in names)] for i, p in enumerate(pids)]
    path = write_csv(cfg.work_dir / "targets.csv", ["participant_id", *names], rows, h)
    if notes:
        write_json(cfg.work_dir / "targets_skipped.json", {"skipped": notes}, h)
    return path


# ---- evaluate ----------------------------------------------------------------

def _select(header: Sequence[str], feature_set: str) -> list[int]:
    if feature_set == "summary":
        return [i for i, n in enumerate(header) if n.startswith("summary.")]
    if feature_set == "hotrod":
        return [i for i, n in enumerate(header) if n.startswith("hotrod.")]
    return [i for i, n in enumerate(header) if n.startswith(("summary.", "hotrod."))]


def run_evaluate(cfg: PipelineConfig, force: bool = False,
                 feature_sets: Sequence[str] | None = None) -> bool:
    feats = cfg.work_dir / "features.csv"
    targets = cfg.work_dir / "targets.csv"
    _require(feats, "run the features stage first")
    if not targets.exists():
        _require(cfg.input_dir / "labels.csv", "targets come from labels.csv")
        raise InputError(f"missing input file: {targets} (rerun the features stage)")
    sets = tuple(feature_sets or cfg.evaluate.feature_sets)
    for s in sets:
        if s not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {s!r}")
    hashes = {read_meta(p).get("config-hash") for p in (feats, targets)}
    if len(hashes) != 1 or None in hashes:
        raise InputError(f"refusing mixed-hash inputs: {feats.name} and {targets.name} "
                         f"carry config hashes {sorted(map(str, hashes))}")
    fp = _fingerprint("evaluate|" + ",".join(sets), cfg, ("evaluate", "seed"), [feats, targets])
    if not force and _is_current(cfg, "evaluate", fp):
        return False
    frows = read_csv(feats, ("participant_id",))
    trows = read_csv(targets, ("participant_id",))
    header = list(frows[0].keys()) if frows else []
    tnames = [n for n in (list(trows[0].keys()) if trows else []) if n != "participant_id"]
    tmap = {r["participant_id"]: r for r in trows}
    pids = [r["participant_id"] for r in frows if r["participant_id"] in tmap]
    X_all = np.array([[float(r[c]) for c in header[1:]] for r in frows
                      if r["participant_id"] in tmap]).reshape(len(pids), -1)
    grid = default_grid(stage_seed(cfg.seed, "evaluate") % 2**31)
    report: dict = {"n_participants": len(pids), "targets": tnames, "feature_sets": {}}
    for fs in sets:
        cols = [i - 1 for i in _select(header, fs)]
        X = X_all[:, cols] if len(pids) else np.zeros((0, len(cols)))
        per_target = {}
        for t in tnames:
            y = np.array([int(tmap[p][t]) for p in pids], dtype=np.int64)
            if len(y) < MIN_CV_SAMPLES:
                per_target[t] = {"status": INSUFFICIENT, "n_samples": len(y)}
                continue
            try:
                rep = cross_validate(X, y, grid, seed=stage_seed(cfg.seed, "cv", t) % 2**31,
                                     feature_set=fs, n_splits=cfg.evaluate.n_splits,
                                     inner_splits=cfg.evaluate.inner_splits)
            except ValueError as exc:
                per_target[t] = {"status": str(exc), "n_samples": len(y)}
                continue
            per_target[t] = {"status": "ok", "n_samples": len(y), **rep.to_dict()}
        report["feature_sets"][fs] = per_target
    out = write_json(cfg.work_dir / "report.json", report, cfg.hash)
    _write_stamp(cfg, "evaluate", fp, [out])
    return True


RUNNERS = {
    "preprocess": run_preprocess,
    "cluster": run_cluster,
    "hawkes": run_hawkes,
    "features": run_features,
    "evaluate": run_evaluate,
}


def run_pipeline(cfg: PipelineConfig, force: bool = False,
                 stages: Sequence[str] = STAGES) -> dict[str, bool]:
    """Run ``stages`` in order; returns stage -> whether it actually ran."""
    ran = {}
    for stage in stages:
        try:
            ran[stage] = RUNNERS[stage](cfg, force=force)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        logger.info("%s: %s", stage, "done" if ran[stage] else "up to date, skipped")
    return ran
