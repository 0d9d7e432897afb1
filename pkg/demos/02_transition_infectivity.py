# %% [markdown]
# Cluster transitions as a point process: simulate a two-type Hawkes model,
# fit it back, and read off the infectivity matrix and the Granger graph.

# %%
import numpy as np
from scipy import stats

from hotrod.hawkes import (
    BasisSpec,
    EventTypeMap,
    HawkesModel,
    extract_events,
    fit_mle,
    granger_graph,
    infectivity,
    loglik,
    simulate,
    time_rescaled_intervals,
)

basis = BasisSpec(centers=(5.0, 20.0, 60.0), sigma=10.0)
A = np.array([[0.3, 0.5],
              [0.0, 0.2]])  # A[u, v]: how strongly type v excites type u
truth = HawkesModel(np.array([0.02, 0.01]), A[:, :, None] * np.full(basis.M, 1 / basis.M), basis)
print("spectral radius", infectivity(truth).spectral_radius())

# %%
days = [simulate(truth, 1440.0, seed=s) for s in range(200)]
print("events per day:", np.mean([len(d) for d in days]))

fitted, trace = fit_mle(days, basis, l1=0.01, group=0.05, return_trace=True)
print("EM iterations", len(trace) - 1)
print("base rate", fitted.base.round(4))
print(infectivity(fitted).A.round(3))

# %%
g = granger_graph(infectivity(fitted), epsilon=0.05)
print("edges (cause -> effect):", g.edges)

# %%
# under the true model the rescaled gaps are Exp(1)
gaps = time_rescaled_intervals(truth, days[:50])
print("KS p-value", stats.kstest(gaps, "expon").pvalue)
print("loglik of day 0: truth %.2f, fitted %.2f" % (loglik(truth, days[0]), loglik(fitted, days[0])))

# %%
# from labels to events: every change of cluster is one event
tmap = EventTypeMap(3)
labels = np.array([0, 0, 1, 1, 1, 3, 3, 2, 2, 0])  # 3 marks missing minutes
seq = extract_events(labels, tmap)
print(tmap.names())
print([(float(t), tmap.names()[u]) for t, u in zip(seq.times, seq.types)])
