import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotrod.config import ConfigError, apply_overrides, config_from_dict, dump_config, load_config
from hotrod.io import (
    InputError,
    dumps_json,
    read_csv,
    read_meta,
    read_sleeps,
    read_streams,
    write_csv,
    write_json,
)


# ---- config ------------------------------------------------------------------

def test_defaults():
    cfg = load_config()
    assert cfg.ticc.K == 3 and cfg.ticc.beta == 10.0 and cfg.hawkes.centers == (5.0, 20.0, 60.0)
    assert cfg.features.n_days == 5 and cfg.impute.max_gap_minutes == 15


def test_overrides_and_yaml_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\nticc:\n  K: 4\n")
    cfg = load_config(path, ["ticc.beta=2.5", "hawkes.centers=[1, 2]"])
    assert (cfg.seed, cfg.ticc.K, cfg.ticc.beta, cfg.hawkes.centers) == (3, 4, 2.5, (1.0, 2.0))


@pytest.mark.parametrize("bad", [{"ticc": {"Q": 1}}, {"nope": 1}, {"ticc": {"K": 0}},
                                 {"ticc": {"K": "three"}}, {"seed": 1.5},
                                 {"evaluate": {"feature_sets": ["audio"]}}])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_override_syntax_errors():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["ticc.K"])
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.x=2"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.yaml")


def test_hash_ignores_paths_and_workers():
    a = config_from_dict({})
    b = config_from_dict({"workers": 4, "paths": {"work_dir": "/elsewhere"}})
    c = config_from_dict({"ticc": {"K": 4}})
    assert a.hash == b.hash != c.hash
    assert a.section_hash("hawkes") == c.section_hash("hawkes")


def test_dump_roundtrip(tmp_path):
    cfg = config_from_dict({"seed": 9, "ticc": {"lam": 0.2}})
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_worker_env(monkeypatch):
    cfg = config_from_dict({"workers": 2})
    monkeypatch.delenv("HOTROD_WORKERS", raising=False)
    assert cfg.effective_workers() == 2
    monkeypatch.setenv("HOTROD_WORKERS", "3")
    assert cfg.effective_workers() == 3
    monkeypatch.setenv("HOTROD_WORKERS", "x")
    with pytest.raises(ConfigError):
        cfg.effective_workers()


# ---- serialization -----------------------------------------------------------

@settings(max_examples=60)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_json_floats_roundtrip_exactly(x):
    assert json.loads(dumps_json({"x": x}))["x"] == x


def test_json_sorted_and_stable():
    a = dumps_json({"b": 1, "a": [0.1, np.float64(2)], "c": {"z": np.int64(3), "y": None}})
    b = dumps_json({"c": {"y": None, "z": 3}, "a": [0.1, 2.0], "b": 1})
    assert a == b and list(json.loads(a)) == ["a", "b", "c"]


def test_json_rejects_nan():
    with pytest.raises(ValueError):
        dumps_json({"x": math.nan})


def test_csv_meta_and_atomic(tmp_path):
    path = write_csv(tmp_path / "sub" / "t.csv", ("a", "b"), [(1, 0.5), (2, True)], "abc123")
    assert read_meta(path) == {"hotrod-version": "0.1.0", "config-hash": "abc123"}
    assert read_csv(path, ("a", "b")) == [{"a": "1", "b": "0.5"}, {"a": "2", "b": "1"}]
    assert not list(tmp_path.rglob("*.partial"))


def test_json_meta(tmp_path):
    path = write_json(tmp_path / "x.json", {"v": 1}, "ff00")
    assert read_meta(path)["config-hash"] == "ff00"


def test_read_csv_errors(tmp_path):
    with pytest.raises(InputError, match="missing input file"):
        read_csv(tmp_path / "absent.csv")
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(InputError, match="missing columns"):
        read_csv(tmp_path / "x.csv", ("c",))


def test_read_streams_groups_by_participant(tmp_path):
    (tmp_path / "hr.csv").write_text("participant_id,timestamp,bpm\nA,0,70\nB,5,80\nA,60,72\n")
    s = read_streams(tmp_path / "hr.csv", "bpm")
    assert s["A"].values.tolist() == [70, 72] and s["B"].timestamps.tolist() == [5]
    (tmp_path / "bad.csv").write_text("participant_id,timestamp,bpm\nA,x,70\n")
    with pytest.raises(InputError):
        read_streams(tmp_path / "bad.csv", "bpm")


def test_read_sleeps_rejects_inverted(tmp_path):
    (tmp_path / "s.csv").write_text("participant_id,onset,end,efficiency\nA,100,50,90\n")
    with pytest.raises(InputError):
        read_sleeps(tmp_path / "s.csv")
