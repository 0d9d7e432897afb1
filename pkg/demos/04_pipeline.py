# %% [markdown]
# The staged pipeline as a user runs it: write the fixture, run every stage,
# rerun (everything is skipped), then change one setting and see which
# stages rerun.

# %%
import json
import tempfile
import time
from pathlib import Path

from hotrod.cli import main
from hotrod.config import load_config
from hotrod.pipeline import run_pipeline

root = Path(tempfile.mkdtemp())
main(["fixture", "--seed", "7", "--out", str(root / "data")])

t0 = time.perf_counter()
rc = main(["run", "--input", str(root / "data"), "--out", str(root / "out")])
print("exit", rc, "in %.1f s" % (time.perf_counter() - t0))

# %%
cfg = load_config(None, [f"paths.input_dir={root / 'data'}", f"paths.work_dir={root / 'out'}"])
print(run_pipeline(cfg))  # nothing to do

cfg_b = load_config(None, [f"paths.input_dir={root / 'data'}", f"paths.work_dir={root / 'out'}",
                           "hawkes.group=0.1"])
print(run_pipeline(cfg_b))  # preprocess and cluster are reused

# %%
out = root / "out"
print(sorted(str(p.relative_to(out)) for p in out.rglob("*.json")))
inf = json.loads((out / "hawkes" / "infectivity_workday.json").read_text())
print(inf["event_types"])
graph = json.loads((out / "hawkes" / "graph_workday.json").read_text())
print(graph["edges"])

# %%
report = json.loads((out / "report.json").read_text())
print(report["n_participants"], "participants")
print(report["feature_sets"]["combined"]["con"])
