import re

import numpy as np
import pytest

from hotrod.config import load_config
from hotrod.fixture import make_fixture
from hotrod.pipeline import run_pipeline
from hotrod.timeline import UniformSeries

FIXTURE_SEED = 7


def series_from(values, mask=None, channels=None, sentinel=-10.0, start=0):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    mask = np.ones(values.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    values = np.where(mask, values, sentinel)
    channels = channels or tuple(f"c{j}" for j in range(values.shape[1]))
    return UniformSeries(start, channels, values, mask, sentinel)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    make_fixture(FIXTURE_SEED, d)
    return d


@pytest.fixture(scope="session")
def fixture_run(fixture_dir, tmp_path_factory):
    """Work directory of one complete pipeline run on the fixture."""
    out = tmp_path_factory.mktemp("run")
    cfg = load_config(None, [f"paths.input_dir={fixture_dir}", f"paths.work_dir={out}"])
    run_pipeline(cfg)
    return cfg


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(ident: str, title: str, passed: bool, detail: str) -> bool:
    line = f"{ident:<5} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def _criterion_order(line):
    m = re.match(r"AC(\d+)(\w?)", line)
    return int(m.group(1)), m.group(2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)
