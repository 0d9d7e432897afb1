# %% [markdown]
# Cut a synthetic cohort into days, clean the minute series, cluster the
# windows and compare the labels with the regimes that generated them.

# %%
import json
import tempfile
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from hotrod.fixture import make_fixture
from hotrod.io import read_day_kinds, read_sleeps, read_streams
from hotrod.preprocess import preprocess_day
from hotrod.ticc import TiccConfig, switch_count, ticc_fit
from hotrod.timeline import CHANNELS, segment_days

data = Path(tempfile.mkdtemp()) / "cohort"
truth = make_fixture(7, data)
print(sorted(p.name for p in data.iterdir()))

# %%
hr = read_streams(data / "heartrate.csv", "bpm")
steps = read_streams(data / "steps.csv", "steps")
sleeps = read_sleeps(data / "sleep.csv")
kinds = read_day_kinds(data / "days.csv")

pid = "P01"
days = segment_days({"hr": hr[pid], "steps": steps[pid]}, sleeps[pid], kinds[pid], pid, CHANNELS)
print(len(days), "days for", pid)
for d in days[:3]:
    print(d.date, d.day_kind.value, d.series.T, "minutes,",
          int((~d.series.mask).sum()), "missing cells")

# %%
clean = [preprocess_day(d) for d in days]
s0 = clean[0].series
hr_col = s0.values[s0.mask[:, 0], 0]  # sentinel cells excluded
print("normalized hr: mean %.3f  std %.3f" % (hr_col.mean(), hr_col.std(ddof=1)))

# %%
res = ticc_fit([d.series for d in clean], TiccConfig(K=3, beta=10.0))
print("EM iterations:", res.n_iter, "converged:", res.converged)
print("objective trace:", np.round(res.objective_trace, 1))

labels = res.minute_labels([d.series for d in clean])


def regimes_of(day_truth):
    out = np.zeros(day_truth["minutes"], dtype=int)
    for start, k in day_truth["regime_runs"]:
        out[start:] = k
    return out


true = [regimes_of(t) for t in truth["participants"][pid]["days"]]
# days dropped by segmentation would shift this zip; the fixture keeps all of them
pred = np.concatenate(labels)
ref = np.concatenate(true[:len(labels)])
keep = pred < 3
conf = np.zeros((3, 3))
np.add.at(conf, (pred[keep], ref[keep]), 1)
r, c = linear_sum_assignment(-conf)
print("accuracy after label matching: %.3f" % (conf[r, c].sum() / keep.sum()))
print("switches per day:", [switch_count(a.labels) for a in res.assignments])

# %%
# beta trades fit for persistence
for beta in (0.0, 10.0, 100.0):
    r_b = ticc_fit([d.series for d in clean], TiccConfig(K=3, beta=beta))
    print(beta, sum(switch_count(a.labels) for a in r_b.assignments))

# %%
print(json.dumps(truth["participants"][pid]["spectral_radius"], indent=1))
