"""Toeplitz inverse covariance-based clustering (TICC) of multivariate series."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor
from sklearn.cluster import KMeans

from .timeline import DaySegment, UniformSeries

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class AdmmConvergenceError(RuntimeError):
    def __init__(self, primal: float, dual: float, n_iter: int):
        super().__init__(f"ADMM did not converge in {n_iter} iterations "
                         f"(primal residual {primal:.3g}, dual residual {dual:.3g})")
        self.primal = primal
        self.dual = dual
        self.n_iter = n_iter


@dataclass(frozen=True)
class TiccConfig:
    K: int = 3
    w: int = 5
    beta: float = 10.0
    lam: float = 0.11
    admm_rho: float = 1.0
    admm_max_iter: int = 1000
    admm_tol: float = 1e-4
    em_max_iter: int = 20
    min_cluster_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.w < 1:
            raise ValueError("K and w must be >= 1")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lam must be >= 0")
        if self.admm_rho <= 0 or self.admm_tol <= 0:
            raise ValueError("admm_rho and admm_tol must be positive")


@dataclass(frozen=True, eq=False)
class StackedWindows:
    """Row ``r`` of ``X`` is (s_i, ..., s_{i+w-1}) flattened, with i = ``origins[r]``."""

    X: np.ndarray
    origins: np.ndarray
    m: int
    w: int

    def __len__(self):
        return len(self.origins)


def stack_windows(day: DaySegment | UniformSeries, w: int) -> StackedWindows:
    """Windows of ``w`` consecutive rows, skipping any that touch a masked cell."""
    series = day.series if isinstance(day, DaySegment) else day
    if w < 1:
        raise ValueError("w must be >= 1")
    T, m = series.values.shape
    if T < w:
        raise ValueError(f"series of {T} rows is shorter than the window ({w})")
    row_ok = series.mask.all(axis=1)
    ok = np.lib.stride_tricks.sliding_window_view(row_ok, w).all(axis=1)
    origins = np.flatnonzero(ok)
    if len(origins) == 0:
        raise ValueError("no valid windows")
    X = np.lib.stride_tricks.sliding_window_view(series.values, (w, m))[:, 0]
    X = X[origins].reshape(len(origins), w * m)
    return StackedWindows(np.ascontiguousarray(X), origins, m, w)


def is_block_toeplitz(theta: np.ndarray, m: int, w: int) -> bool:
    """True when every m x m block at block offset (r, c) equals block (0, c - r), bitwise."""
    for r in range(w):
        for c in range(w):
            blk = theta[r * m:(r + 1) * m, c * m:(c + 1) * m]
            if c >= r:
                ref = theta[0:m, (c - r) * m:(c - r + 1) * m]
            else:
                ref = theta[(r - c) * m:(r - c + 1) * m, 0:m]
            if not np.array_equal(blk, ref):
                return False
    return True


@dataclass(frozen=True, eq=False)
class ClusterModel:
    theta: np.ndarray
    mu: np.ndarray
    m: int
    w: int

    def __post_init__(self):
        n = self.m * self.w
        if self.theta.shape != (n, n) or self.mu.shape != (n,):
            raise ValueError("theta/mu shapes do not match m * w")

    def check(self) -> None:
        """Raise ValueError unless theta is symmetric, PD and block-Toeplitz."""
        if not np.array_equal(self.theta, self.theta.T):
            raise ValueError("theta is not symmetric")
        try:
            cho_factor(self.theta)
        except LinAlgError as exc:
            raise ValueError("theta is not positive definite") from exc
        if not is_block_toeplitz(self.theta, self.m, self.w):
            raise ValueError("theta is not block-Toeplitz")

    def offdiag_l1(self) -> float:
        return float(np.abs(self.theta).sum() - np.abs(np.diag(self.theta)).sum())


def gaussian_ll(X, model: ClusterModel) -> np.ndarray | float:
    """Gaussian log-density of window(s) ``X`` under a precision-parameterised cluster.

    Returns -1/2 (X - mu)' Theta (X - mu) + 1/2 log det Theta - (d/2) log 2 pi,
    with d = m * w.
    """
    if isinstance(X, StackedWindows):
        X = X.X
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    d = model.theta.shape[0]
    if X.shape[1] != d:
        raise ValueError(f"window dimension {X.shape[1]} != model dimension {d}")
    try:
        c, lower = cho_factor(model.theta, lower=True)
    except LinAlgError as exc:
        raise ValueError("theta is not positive definite") from exc
    L = np.tril(c)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    # (x - mu)' L L' (x - mu) = |L' (x - mu)|^2
    proj = (X - model.mu) @ L
    quad = np.einsum("ij,ij->i", proj, proj)
    ll = -0.5 * quad + 0.5 * logdet - 0.5 * d * LOG_2PI
    return float(ll[0]) if single else ll


@dataclass(frozen=True, eq=False)
class Assignment:
    labels: np.ndarray
    objective: float
    origins: np.ndarray | None = None

    def minute_labels(self, T: int, missing_label: int) -> np.ndarray:
        """Per-minute labels; minutes that start no window get ``missing_label``."""
        out = np.full(T, missing_label, dtype=np.int64)
        origins = np.arange(len(self.labels)) if self.origins is None else self.origins
        out[origins] = self.labels
        return out


def switch_count(labels) -> int:
    labels = np.asarray(labels)
    return int(np.count_nonzero(labels[1:] != labels[:-1]))


def path_objective(ll: np.ndarray, labels, beta: float) -> float:
    """sum_i -ll[i, k_i] + beta * (number of label switches)."""
    labels = np.asarray(labels)
    return float(-ll[np.arange(len(labels)), labels].sum() + beta * switch_count(labels))


def assign_dp(ll, beta: float) -> Assignment:
    """Label sequence minimising path_objective by Viterbi-style dynamic programming.

    Ties are broken toward the lower cluster index.
    """
    ll = np.asarray(ll, dtype=float)
    if ll.ndim != 2 or ll.shape[0] == 0:
        raise ValueError("ll must be a non-empty T x K matrix")
    if not np.all(np.isfinite(ll)):
        raise ValueError("ll must be finite")
    T, K = ll.shape
    switch = beta * (1.0 - np.eye(K))
    cost = -ll[0].copy()
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        trans = cost[:, None] + switch  # (previous, current)
        back[t] = np.argmin(trans, axis=0)
        cost = trans[back[t], np.arange(K)] - ll[t]
    labels = np.empty(T, dtype=np.int64)
    labels[-1] = int(np.argmin(cost))
    for t in range(T - 1, 0, -1):
        labels[t - 1] = back[t, labels[t]]
    return Assignment(labels, path_objective(ll, labels, beta))


def _toeplitz_prox(V: np.ndarray, threshold: float, m: int, w: int) -> np.ndarray:
    """Average equal-offset blocks (and their mirrors), then soft-threshold off-diagonals."""
    blocks = []
    for k in range(w):
        acc = np.zeros((m, m))
        for r in range(w - k):
            acc += V[r * m:(r + 1) * m, (r + k) * m:(r + k + 1) * m]
            acc += V[(r + k) * m:(r + k + 1) * m, r * m:(r + 1) * m].T
        acc /= 2 * (w - k)
        if k == 0:
            acc = 0.5 * (acc + acc.T)
        shrunk = np.sign(acc) * np.maximum(np.abs(acc) - threshold, 0.0)
        if k == 0:
            np.fill_diagonal(shrunk, np.diag(acc))
        blocks.append(shrunk)
    Z = np.empty_like(V)
    for r in range(w):
        for c in range(w):
            blk = blocks[c - r] if c >= r else blocks[r - c].T
            Z[r * m:(r + 1) * m, c * m:(c + 1) * m] = blk
    return Z


def _empirical(X: np.ndarray):
    mu = X.mean(axis=0)
    D = X - mu
    return mu, (D.T @ D) / len(X)


def fit_toeplitz_glasso(windows: StackedWindows, lam: float = 0.11, rho: float = 1.0,
                        tol: float = 1e-4, max_iter: int = 1000) -> ClusterModel:
    """Block-Toeplitz, l1-penalised Gaussian precision estimate via ADMM.

    Solves min -log det T + tr(S T) + lam * |T|_offdiag subject to T being
    block-Toeplitz, where S is the empirical covariance of the windows.
    """
    X = windows.X
    if len(X) < 2:
        raise ValueError("need at least 2 windows")
    m, w = windows.m, windows.w
    mu, S = _empirical(X)
    n = S.shape[0]
    Z = np.eye(n)
    U = np.zeros((n, n))
    primal = dual = float("inf")
    for it in range(1, max_iter + 1):
        evals, Q = np.linalg.eigh(rho * (Z - U) - S)
        theta = (Q * ((evals + np.sqrt(evals ** 2 + 4.0 * rho)) / (2.0 * rho))) @ Q.T
        Z_old = Z
        Z = _toeplitz_prox(theta + U, lam / rho, m, w)
        U = U + theta - Z
        primal = float(np.linalg.norm(theta - Z))
        dual = float(rho * np.linalg.norm(Z - Z_old))
        eps_pri = n * tol + tol * max(np.linalg.norm(theta), np.linalg.norm(Z))
        eps_dual = n * tol + tol * rho * np.linalg.norm(U)
        if primal <= eps_pri and dual <= eps_dual:
            break
    else:
        raise AdmmConvergenceError(primal, dual, max_iter)

    # Z carries the exact structure; nudge along the identity if rounding left it indefinite
    ridge = 1e-10 * max(1.0, float(np.trace(Z)) / n)
    while True:
        try:
            cho_factor(Z)
            break
        except LinAlgError:
            Z = Z + ridge * np.eye(n)
            ridge *= 10.0
    return ClusterModel(Z, mu, m, w)


@dataclass(frozen=True, eq=False)
class TiccResult:
    models: list[ClusterModel]
    assignments: list[Assignment]
    missing_label: int
    objective_trace: list[float]
    n_iter: int
    converged: bool
    reseeds: list[int] = field(default_factory=list)

    def minute_labels(self, days: Sequence[DaySegment | UniformSeries]) -> list[np.ndarray]:
        out = []
        for day, a in zip(days, self.assignments):
            series = day.series if isinstance(day, DaySegment) else day
            out.append(a.minute_labels(series.T, self.missing_label))
        return out


def _runs_of(origins: np.ndarray) -> list[slice]:
    """Slices of consecutive origins; the switching penalty never spans a gap."""
    breaks = np.flatnonzero(np.diff(origins) != 1) + 1
    edges = np.r_[0, breaks, len(origins)]
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def cluster_costs(X: np.ndarray, models: Sequence[ClusterModel]) -> np.ndarray:
    """Per-window negative log-likelihood under every cluster, shape (n, K)."""
    return np.column_stack([-gaussian_ll(X, mdl) for mdl in models])


def _assign_all(costs, day_slices, run_slices, beta):
    labels = np.empty(len(costs), dtype=np.int64)
    per_day = []
    for dsl, runs in zip(day_slices, run_slices):
        total = 0.0
        for rs in runs:
            sub = slice(dsl.start + rs.start, dsl.start + rs.stop)
            a = assign_dp(-costs[sub], beta)
            labels[sub] = a.labels
            total += a.objective
        per_day.append(total)
    return labels, per_day


def _objective(costs, labels, run_slices_global, beta):
    total = float(costs[np.arange(len(labels)), labels].sum())
    for sl in run_slices_global:
        total += beta * switch_count(labels[sl])
    return total


def ticc_fit(days: Sequence[DaySegment | UniformSeries], cfg: TiccConfig = TiccConfig()
             ) -> TiccResult:
    """Fit K block-Toeplitz Gaussian clusters to all valid windows of ``days``.

    Alternates dynamic-programming assignment with per-cluster graphical-lasso
    refits from a seeded k-means++ start, minimising
    sum_i -ll(X_i, Theta_{k_i}) + beta * switches. A refit that would raise its
    cluster's summed negative log-likelihood is discarded, so the objective
    never increases between iterations (reseeding iterations excepted).
    Minutes not covered by a window get the reserved label K.
    """
    stacks = [stack_windows(d, cfg.w) for d in days]
    X = np.concatenate([s.X for s in stacks])
    n = len(X)
    if n < cfg.K * cfg.min_cluster_size:
        raise ValueError(f"{n} windows < K * min_cluster_size = "
                         f"{cfg.K * cfg.min_cluster_size}")
    m, w = stacks[0].m, cfg.w
    offsets = np.cumsum([0] + [len(s) for s in stacks])
    day_slices = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]
    run_slices = [_runs_of(s.origins) for s in stacks]
    run_global = [slice(d.start + r.start, d.start + r.stop)
                  for d, runs in zip(day_slices, run_slices) for r in runs]

    def fit(idx):
        return fit_toeplitz_glasso(StackedWindows(X[idx], idx, m, w), cfg.lam,
                                   cfg.admm_rho, cfg.admm_tol, cfg.admm_max_iter)

    if cfg.K == 1:
        labels = np.zeros(n, dtype=np.int64)
    else:
        km = KMeans(n_clusters=cfg.K, init="k-means++", n_init=1, random_state=cfg.seed)
        labels = km.fit_predict(X).astype(np.int64)

    models: list[ClusterModel | None] = [None] * cfg.K
    trace: list[float] = []
    reseeds: list[int] = []
    converged = False
    it = 0
    for it in range(1, cfg.em_max_iter + 1):
        counts = np.bincount(labels, minlength=cfg.K)
        small = [k for k in range(cfg.K) if counts[k] < cfg.min_cluster_size]
        if small:
            if len(reseeds) >= 3:
                raise RuntimeError(f"clusters {small} stayed empty after 3 reseeds")
            reseeds.append(it)
            labels = _reseed(X, labels, small, models, cfg)
        for k in range(cfg.K):
            idx = np.flatnonzero(labels == k)
            new = fit(idx)
            old = models[k]
            if old is not None and not small:
                # the l1-penalised refit is not guaranteed to lower the unpenalised cost
                c_new = cluster_costs(X[idx], [new]).sum()
                c_old = cluster_costs(X[idx], [old]).sum()
                if c_old < c_new:
                    new = old
            models[k] = new
        costs = cluster_costs(X, models)
        new_labels, _ = _assign_all(costs, day_slices, run_slices, cfg.beta)
        trace.append(_objective(costs, new_labels, run_global, cfg.beta))
        logger.debug("TICC iteration %d objective %.6f", it, trace[-1])
        if np.array_equal(new_labels, labels):
            converged = True
            labels = new_labels
            break
        labels = new_labels

    costs = cluster_costs(X, models)
    assignments = []
    for s, dsl, runs in zip(stacks, day_slices, run_slices):
        lab = labels[dsl]
        obj = float(costs[np.arange(dsl.start, dsl.stop), lab].sum())
        obj += cfg.beta * sum(switch_count(lab[r]) for r in runs)
        assignments.append(Assignment(lab.copy(), obj, s.origins))
    return TiccResult(list(models), assignments, cfg.K, trace, it, converged, reseeds)


def _reseed(X, labels, small, models, cfg):
    """Hand the worst-fitting windows of populous clusters to under-filled ones."""
    labels = labels.copy()
    if all(mdl is not None for mdl in models):
        fit_cost = cluster_costs(X, models)[np.arange(len(X)), labels]
    else:
        fit_cost = np.zeros(len(X))
    order = np.argsort(-fit_cost, kind="stable")
    for k in small:
        need = cfg.min_cluster_size - int(np.count_nonzero(labels == k))
        counts = np.bincount(labels, minlength=cfg.K)
        for i in order:
            if need <= 0:
                break
            src = labels[i]
            if src in small or counts[src] <= cfg.min_cluster_size:
                continue
            labels[i] = k
            counts[src] -= 1
            need -= 1
    return labels
