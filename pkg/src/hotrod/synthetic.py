"""Synthetic data generators with known ground truth."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def block_toeplitz(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetric block-Toeplitz matrix whose k-th block superdiagonal is ``blocks[k]``."""
    w = len(blocks)
    m = blocks[0].shape[0]
    out = np.zeros((m * w, m * w))
    for r in range(w):
        for c in range(w):
            blk = blocks[c - r] if c >= r else blocks[r - c].T
            out[r * m:(r + 1) * m, c * m:(c + 1) * m] = blk
    return out


def random_toeplitz_precision(m: int, w: int, rng: np.random.Generator,
                              density: float = 0.6, min_eig: float = 0.5) -> np.ndarray:
    """Sparse random block-Toeplitz precision with smallest eigenvalue ``min_eig``."""
    blocks = []
    for k in range(w):
        b = rng.uniform(-0.6, 0.6, size=(m, m)) * (rng.uniform(size=(m, m)) < density)
        if k == 0:
            b = 0.5 * (b + b.T)
            np.fill_diagonal(b, 0.0)
        blocks.append(b)
    theta = block_toeplitz(blocks)
    shift = min_eig - np.linalg.eigvalsh(theta).min()
    return theta + shift * np.eye(m * w)


def regime_series(thetas: Sequence[np.ndarray], regimes: np.ndarray, m: int, w: int,
                  rng: np.random.Generator, means: Sequence[np.ndarray] | None = None
                  ) -> np.ndarray:
    """Sample a T x m series whose length-w windows follow regime-specific Gaussians.

    Each new row is drawn from the conditional law of the last block given the
    previous w - 1 rows under the active regime's joint covariance.
    """
    T = len(regimes)
    covs = [np.linalg.inv(th) for th in thetas]
    mus = [np.zeros(m * w) if means is None else np.tile(means[k], w)
           for k in range(len(thetas))]
    cond = []
    for cov in covs:
        if w == 1:
            cond.append((np.zeros((m, 0)), np.linalg.cholesky(cov)))
            continue
        past, last = slice(0, m * (w - 1)), slice(m * (w - 1), m * w)
        gain = cov[last, past] @ np.linalg.inv(cov[past, past])
        schur = cov[last, last] - gain @ cov[past, last]
        cond.append((gain, np.linalg.cholesky(0.5 * (schur + schur.T))))
    out = np.zeros((T, m))
    k0 = int(regimes[0])
    first = rng.multivariate_normal(mus[k0], covs[k0]).reshape(w, m)
    out[:min(w, T)] = first[:min(w, T)]
    for t in range(w, T):
        k = int(regimes[t])
        gain, chol = cond[k]
        past = out[t - w + 1:t].ravel() - mus[k][:m * (w - 1)]
        mean = mus[k][-m:] + gain @ past
        out[t] = mean + chol @ rng.standard_normal(m)
    return out


def alternating_regimes(T: int, segment: int, K: int) -> np.ndarray:
    return (np.arange(T) // segment) % K


def two_regime_thetas(m: int = 2, w: int = 5, min_eig: float = 0.6) -> list[np.ndarray]:
    """Two block-Toeplitz precisions with opposite-sign cross-channel coupling."""
    z = np.zeros((m, m))
    cross = np.ones((m, m)) - np.eye(m)
    a = [-0.8 * cross, -0.5 * np.eye(m)] + [z] * (w - 2)
    b = [0.8 * cross, 0.3 * cross] + [z] * (w - 2)
    out = []
    for blocks in (a, b):
        t = block_toeplitz(blocks[:w])
        out.append(t + (min_eig - np.linalg.eigvalsh(t).min()) * np.eye(m * w))
    return out


def two_regime_means(m: int = 2, shift: float = 0.5) -> list[np.ndarray]:
    """Per-regime level offsets (low / high activity)."""
    return [np.full(m, -shift), np.full(m, shift)]


def two_regime_series(T: int = 2000, segment: int = 100, seed: int = 0, shift: float = 0.5,
                      w: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """(values T x 2, true regime per minute) for the alternating two-regime benchmark."""
    rng = np.random.default_rng(seed)
    regimes = alternating_regimes(T, segment, 2)
    means = two_regime_means(2, shift) if shift else None
    return regime_series(two_regime_thetas(2, w), regimes, 2, w, rng, means), regimes
