"""Multivariate Hawkes processes over cluster-transition events.

Impact functions are non-negative combinations of Gaussian bumps, each
normalised to unit mass on [0, inf), so the infectivity of a pair of event
types is simply the sum of its basis coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# kernels are treated as zero beyond the last centre plus this many bandwidths
_SUPPORT_SIGMAS = 12.0


class HawkesConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class EventTypeMap:
    """Ordered pairs (d -> d') of distinct non-missing clusters, numbered lexicographically."""

    n_clusters: int

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("need at least one non-missing cluster")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        C = self.n_clusters
        return tuple((a, b) for a in range(C) for b in range(C) if a != b)

    @property
    def U(self) -> int:
        return self.n_clusters * (self.n_clusters - 1)

    def type_of(self, src: int, dst: int) -> int:
        C = self.n_clusters
        if not (0 <= src < C and 0 <= dst < C) or src == dst:
            raise KeyError((src, dst))
        return src * (C - 1) + (dst if dst < src else dst - 1)

    def pair_of(self, u: int) -> tuple[int, int]:
        return self.pairs[u]

    def names(self) -> list[str]:
        return [f"{a}>{b}" for a, b in self.pairs]


@dataclass(frozen=True, eq=False)
class EventSequence:
    horizon: float
    times: np.ndarray
    types: np.ndarray
    n_types: int

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        u = np.asarray(self.types, dtype=np.int64).ravel()
        if t.shape != u.shape:
            raise ValueError("times and types differ in length")
        if len(t):
            if np.any(np.diff(t) < 0):
                raise ValueError("event times must be sorted")
            if t[0] < 0 or t[-1] >= self.horizon:
                raise ValueError("event times must lie in [0, horizon)")
            if u.min() < 0 or u.max() >= self.n_types:
                raise ValueError("event type out of range")
        t.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "types", u)

    def __len__(self):
        return len(self.times)

    def counts(self) -> np.ndarray:
        return np.bincount(self.types, minlength=self.n_types)


def extract_events(labels, type_map: EventTypeMap,
                   missing_label: int | None = None) -> EventSequence:
    """Cluster transitions d_i -> d_{i+1} as events at minute i + 1.

    Transitions touching ``missing_label`` (default: ``type_map.n_clusters``)
    or any label outside the map are dropped.
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = type_map.n_clusters
    missing = C if missing_label is None else missing_label
    a, b = labels[:-1], labels[1:]
    valid = (a != b) & (a != missing) & (b != missing)
    valid &= (a >= 0) & (a < C) & (b >= 0) & (b < C)
    idx = np.flatnonzero(valid)
    src, dst = a[idx], b[idx]
    types = src * (C - 1) + np.where(dst < src, dst, dst - 1)
    return EventSequence(float(len(labels)), (idx + 1).astype(float), types, type_map.U)


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Gaussian bumps k_m(t) = N(t; c_m, sigma^2) / P(N >= 0), zero for t < 0."""

    centers: tuple[float, ...] = (5.0, 20.0, 60.0)
    sigma: float = 10.0

    def __post_init__(self):
        c = tuple(float(x) for x in self.centers)
        if not c:
            raise ValueError("need at least one basis function")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if c[0] < 0 or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("centers must be non-negative and strictly increasing")
        object.__setattr__(self, "centers", c)

    @property
    def M(self) -> int:
        return len(self.centers)

    @property
    def _c(self) -> np.ndarray:
        return np.asarray(self.centers)

    @property
    def _norm(self) -> np.ndarray:
        return ndtr(self._c / self.sigma)

    @property
    def support(self) -> float:
        return self.centers[-1] + _SUPPORT_SIGMAS * self.sigma

    def kernel(self, t) -> np.ndarray:
        """k_m(t) for each basis; shape ``t.shape + (M,)``."""
        t = np.asarray(t, dtype=float)[..., None]
        z = (t - self._c) / self.sigma
        val = np.exp(-0.5 * z * z) / (_SQRT_2PI * self.sigma * self._norm)
        return np.where(t >= 0, val, 0.0)

    def integral(self, tau) -> np.ndarray:
        """K_m(tau) = int_0^tau k_m(s) ds; shape ``tau.shape + (M,)``."""
        tau = np.asarray(tau, dtype=float)[..., None]
        lo = ndtr(-self._c / self.sigma)
        val = (ndtr((tau - self._c) / self.sigma) - lo) / self._norm
        return np.where(tau > 0, val, 0.0)

    def peak(self) -> np.ndarray:
        return 1.0 / (_SQRT_2PI * self.sigma * self._norm)

    def to_dict(self) -> dict:
        return {"centers": list(self.centers), "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class HawkesModel:
    base: np.ndarray
    coeffs: np.ndarray
    basis: BasisSpec = field(default_factory=BasisSpec)

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=float)
        U = len(base)
        if coeffs.shape != (U, U, self.basis.M):
            raise ValueError(f"coeffs shape {coeffs.shape} != {(U, U, self.basis.M)}")
        if np.any(base < 0) or np.any(coeffs < 0):
            raise ValueError("base intensities and coefficients must be non-negative")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def U(self) -> int:
        return len(self.base)


@dataclass(frozen=True, eq=False)
class InfectivityMatrix:
    A: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.A) < 0):
            raise ValueError("infectivity entries must be non-negative")

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A)))) if self.A.size else 0.0

    def flatten(self) -> np.ndarray:
        return np.asarray(self.A).ravel(order="C")


@dataclass(frozen=True, eq=False)
class GrangerGraph:
    """Edge (src, dst) means type ``src`` Granger-causes type ``dst``."""

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    epsilon: float

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for src, dst in self.edges:
            adj[dst, src] = True
        return adj


def infectivity(model: HawkesModel) -> InfectivityMatrix:
    """A[u, u'] = integral of phi_{uu'} over [0, inf) = sum_m a^m_{uu'}."""
    return InfectivityMatrix(model.coeffs.sum(axis=-1))


def granger_graph(A, epsilon: float = 0.01) -> GrangerGraph:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    A = A.A if isinstance(A, InfectivityMatrix) else np.asarray(A)
    dst, src = np.nonzero(A > epsilon)
    edges = tuple(sorted(zip(src.tolist(), dst.tolist())))
    return GrangerGraph(A.shape[0], edges, float(epsilon))


def intensity(model: HawkesModel, history: EventSequence, t: float, u: int) -> float:
    """lambda_u(t) = mu_u + sum over events t_i < t of phi_{u, u_i}(t - t_i)."""
    past = history.times < t
    dt = t - history.times[past]
    if len(dt) == 0:
        return float(model.base[u])
    k = model.basis.kernel(dt)  # (n, M)
    a = model.coeffs[u, history.types[past]]  # (n, M)
    return float(model.base[u] + np.sum(a * k))


def _event_intensities(model: HawkesModel, seq: EventSequence) -> np.ndarray:
    t, u = seq.times, seq.types
    lam = model.base[u].copy()
    for i in range(len(t)):
        past = t[:i] < t[i]
        if not past.any():
            continue
        k = model.basis.kernel(t[i] - t[:i][past])
        lam[i] += np.sum(model.coeffs[u[i], u[:i][past]] * k)
    return lam


def compensator(model: HawkesModel, seq: EventSequence, t: float | None = None) -> np.ndarray:
    """Lambda_u(t) = int_0^t lambda_u(s) ds for every type u (default t = horizon)."""
    t = seq.horizon if t is None else t
    out = model.base * t
    past = seq.times < t
    if past.any():
        K = model.basis.integral(t - seq.times[past])  # (n, M)
        # sum over events j and bases m of a[u, u_j, m] K[j, m]
        out = out + np.einsum("ujm,jm->u", model.coeffs[:, seq.types[past]], K)
    return out


def loglik(model: HawkesModel, seq: EventSequence) -> float:
    """sum_i log lambda_{u_i}(t_i) - sum_u int_0^n lambda_u(s) ds.

    Returns -inf (and logs a warning) when some event has zero intensity.
    """
    if seq.n_types != model.U:
        raise ValueError("sequence and model disagree on the number of event types")
    lam = _event_intensities(model, seq)
    comp = float(compensator(model, seq).sum())
    if np.any(lam <= 0):
        logger.warning("zero intensity at an observed event; log-likelihood is -inf")
        return float("-inf")
    return float(np.log(lam).sum() - comp)


def _pairs(seq: EventSequence, support: float):
    """(i, j) index pairs with t_j < t_i <= t_j + support."""
    t = seq.times
    lo = np.searchsorted(t, t - support, side="left")
    hi = np.searchsorted(t, t, side="left")  # strictly earlier events
    counts = hi - lo
    i = np.repeat(np.arange(len(t)), counts)
    start = np.repeat(lo - np.cumsum(np.r_[0, counts[:-1]]), counts)
    j = start + np.arange(counts.sum())
    return i, j


@dataclass
class _Batch:
    """Event data from all sequences, flattened for vectorised EM updates."""

    U: int
    M: int
    ev_type: np.ndarray
    pair_i: np.ndarray
    pair_src: np.ndarray  # type of the earlier event
    pair_k: np.ndarray  # (P, M) kernel values
    G: np.ndarray  # (U, M): sum over events of type u' of K_m(horizon - t_j)
    total_time: float

    @classmethod
    def build(cls, sequences: Sequence[EventSequence], basis: BasisSpec) -> "_Batch":
        U = sequences[0].n_types
        ev_type, pi, psrc, pk = [], [], [], []
        G = np.zeros((U, basis.M))
        offset = 0
        for seq in sequences:
            if seq.n_types != U:
                raise ValueError("sequences disagree on the number of event types")
            i, j = _pairs(seq, basis.support)
            ev_type.append(seq.types)
            pi.append(i + offset)
            psrc.append(seq.types[j])
            pk.append(basis.kernel(seq.times[i] - seq.times[j]))
            if len(seq):
                K = basis.integral(seq.horizon - seq.times)
                np.add.at(G, seq.types, K)
            offset += len(seq)
        return cls(U, basis.M, np.concatenate(ev_type), np.concatenate(pi),
                   np.concatenate(psrc), np.concatenate(pk).reshape(-1, basis.M), G,
                   float(sum(s.horizon for s in sequences)))

    def intensities(self, base, coeffs):
        lam = base[self.ev_type].copy()
        if len(self.pair_i):
            contrib = np.einsum("pm,pm->p", coeffs[self.ev_type[self.pair_i], self.pair_src],
                                self.pair_k)
            lam += np.bincount(self.pair_i, weights=contrib, minlength=len(lam))
        return lam


def penalized_objective(batch: _Batch, base, coeffs, l1: float, group: float) -> float:
    lam = batch.intensities(base, coeffs)
    with np.errstate(divide="ignore"):
        ll = np.log(lam).sum()
    ll -= base.sum() * batch.total_time
    ll -= np.einsum("uvm,vm->", coeffs, batch.G)
    return float(ll - l1 * coeffs.sum() - group * np.linalg.norm(coeffs, axis=-1).sum())


def fit_mle(sequences: Sequence[EventSequence], basis: BasisSpec = BasisSpec(),
            l1: float = 0.01, group: float = 0.05, max_iter: int = 2000,
            tol: float = 1e-6, seed: int = 0, return_trace: bool = False):
    """Penalised maximum-likelihood Hawkes fit by EM / majorization-minimization.

    The E-step splits each event between the base rate and every earlier
    event x basis pair. The M-step is closed form: the base rate is the
    expected number of exogenous events over total time, and each coefficient
    maximises its share of the expected log-likelihood minus the l1 penalty
    and a quadratic majorizer of the group-lasso norm (taken over the basis
    index for each ordered pair of types). Every iteration therefore
    increases the penalised objective. Stops when its relative change drops
    below ``tol``.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("need at least one sequence")
    if sum(len(s) for s in sequences) < 1:
        raise ValueError("need at least one event")
    batch = _Batch.build(sequences, basis)
    U, M = batch.U, batch.M
    rng = np.random.default_rng(seed)

    counts = np.bincount(batch.ev_type, minlength=U).astype(float)
    base = 0.5 * counts / batch.total_time
    coeffs = (0.1 / max(U, 1)) * rng.uniform(0.5, 1.5, size=(U, U, M)) / M
    # types that never fire can neither trigger nor be triggered
    coeffs[counts == 0, :, :] = 0.0
    coeffs[:, counts == 0, :] = 0.0

    flat = (batch.ev_type[batch.pair_i] * U + batch.pair_src)[:, None] * M + np.arange(M)
    trace = [penalized_objective(batch, base, coeffs, l1, group)]
    for _ in range(max_iter):
        lam = batch.intensities(base, coeffs)
        # E-step responsibilities
        r_base = base[batch.ev_type] / lam
        q = coeffs[batch.ev_type[batch.pair_i], batch.pair_src] * batch.pair_k
        q /= lam[batch.pair_i][:, None]
        # M-step
        base = np.bincount(batch.ev_type, weights=r_base, minlength=U) / batch.total_time
        P = np.bincount(flat.ravel(), weights=q.ravel(), minlength=U * U * M).reshape(U, U, M)
        b = batch.G[None, :, :] + l1
        norms = np.linalg.norm(coeffs, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(norms > 0, group / norms, 0.0)
            # positive root of c a^2 + b a - P = 0, written to stay stable as c -> 0
            coeffs = np.where(P > 0, 2.0 * P / (b + np.sqrt(b * b + 4.0 * c * P)), 0.0)
        trace.append(penalized_objective(batch, base, coeffs, l1, group))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    else:
        raise HawkesConvergenceError(
            f"Hawkes EM did not converge in {max_iter} iterations "
            f"(last relative change {abs(trace[-1] - trace[-2]) / abs(trace[-2]):.3g})", trace)
    model = HawkesModel(base, coeffs, basis)
    return (model, trace) if return_trace else model


def simulate(model: HawkesModel, horizon: float, seed: int = 0,
             gate=None) -> EventSequence:
    """Exact sample on [0, horizon) by Ogata thinning.

    The dominating rate is the base total plus every recent event's excitation
    evaluated at each bump's peak, recomputed after each proposal. ``gate``,
    if given, is called as ``gate(t, rates, times, types)`` and returns the
    per-type multipliers in [0, 1] used for state-dependent sampling.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    A = infectivity(model)
    if A.spectral_radius() >= 1.0:
        raise ValueError("non-stationary model: spectral radius of the infectivity >= 1")
    rng = np.random.default_rng(seed)
    basis = model.basis
    peak = basis.peak()
    # excitation bound contributed by one event of type u' to all types
    excite = (model.coeffs * peak).sum(axis=(0, 2))
    mu_total = float(model.base.sum())
    times: list[float] = []
    types: list[int] = []
    t = 0.0
    first_recent = 0
    while True:
        while first_recent < len(times) and t - times[first_recent] > basis.support:
            first_recent += 1
        recent_types = types[first_recent:]
        bound = mu_total + float(excite[recent_types].sum()) if recent_types else mu_total
        if bound <= 0:
            break
        t += rng.exponential(1.0 / bound)
        if t >= horizon:
            break
        rt = np.asarray(recent_types, dtype=np.int64)
        rates = model.base.copy()
        if len(rt):
            dt = t - np.asarray(times[first_recent:])
            k = basis.kernel(dt)  # (n, M)
            rates += np.einsum("unm,nm->u", model.coeffs[:, rt], k)
        if gate is not None:
            rates = rates * gate(t, rates, times, types)
        total = float(rates.sum())
        if rng.uniform() * bound <= total and total > 0:
            u = int(np.searchsorted(np.cumsum(rates), rng.uniform() * total, side="right"))
            types.append(min(u, model.U - 1))
            times.append(t)
    return EventSequence(float(horizon), np.asarray(times), np.asarray(types, dtype=np.int64),
                         model.U)


def time_rescaled_intervals(model: HawkesModel,
                            sequences: Sequence[EventSequence]) -> np.ndarray:
    """Compensator increments between successive same-type events (Exp(1) under the model)."""
    out = []
    for seq in sequences:
        comp_at = np.array([compensator(model, seq, t) for t in seq.times]).reshape(-1, model.U)
        for u in range(model.U):
            idx = np.flatnonzero(seq.types == u)
            if len(idx) == 0:
                continue
            lam_u = comp_at[idx, u]
            out.append(np.diff(np.r_[0.0, lam_u]))
    return np.concatenate(out) if out else np.zeros(0)

