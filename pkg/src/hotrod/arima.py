"""Conditional-sum-of-squares ARIMA fitting, AIC order search and forecasting."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

_SSE_FLOOR = 1e-12
# fits whose AR or MA inverse roots come this close to the unit circle are discarded:
# boundary MA roots cancel near-unit AR roots and let CSS fit the noise
_ROOT_MARGIN = 0.99


@dataclass(frozen=True)
class ArimaFit:
    order: tuple[int, int, int]
    const: float
    ar: np.ndarray
    ma: np.ndarray
    sigma2: float
    aic: float
    n_obs: int


def _difference(y: np.ndarray, d: int) -> np.ndarray:
    for _ in range(d):
        y = np.diff(y)
    return y


def _innovations(x, const, ar, ma):
    """Residuals of an ARMA(p, q) on ``x``; entries before ``p`` are zero."""
    p = len(ar)
    v = np.zeros_like(x)
    v[p:] = x[p:] - const
    for i, phi in enumerate(ar, start=1):
        v[p:] -= phi * x[p - i:len(x) - i]
    if len(ma):
        v = lfilter([1.0], np.concatenate(([1.0], ma)), v)
    return v


def fit_css(y, order, n_cond: int | None = None) -> ArimaFit | None:
    """Fit ARIMA(p, d, q) by conditional sum of squares.

    Residuals are scored from ``n_cond`` (index into ``y``) onwards so fits of
    different orders are compared on identical observations. A constant is
    estimated only for ``d == 0``. Returns None when the fit is degenerate.
    """
    p, d, q = order
    y = np.asarray(y, dtype=float)
    n_cond = p + d if n_cond is None else n_cond
    if n_cond < p + d:
        raise ValueError("n_cond must cover the AR and differencing lags")
    x = _difference(y, d)
    start = n_cond - d
    n_eff = len(x) - start
    use_const = d == 0
    k = p + q + int(use_const)
    if n_eff <= k + 1:
        return None

    # OLS on lagged values: exact CSS solution when q == 0, starting point otherwise
    cols = [x[p - i:len(x) - i] for i in range(1, p + 1)]
    if use_const:
        cols.insert(0, np.ones(len(x) - p))
    if cols:
        design = np.column_stack(cols)[start - p:]
        beta, *_ = np.linalg.lstsq(design, x[start:], rcond=None)
    else:
        beta = np.zeros(0)
    const = float(beta[0]) if use_const else 0.0
    ar = np.asarray(beta[int(use_const):], dtype=float)
    ma = np.zeros(q)

    if q:
        hr = _hannan_rissanen(x, start, p, q, use_const)
        if hr is not None and _tail_sse(x, start, *hr) <= _tail_sse(x, start, const, ar, ma):
            const, ar, ma = hr
        fitted = _gauss_newton(x, start, use_const, ar, q, const, ma)
        if fitted is None:
            return None
        const, ar, ma = fitted
        if _max_inverse_root(ma) >= _ROOT_MARGIN:
            return None
    if _max_inverse_root(-np.asarray(ar)) >= _ROOT_MARGIN:
        return None

    e = _innovations(x, const, ar, ma)[start:]
    sse = float(e @ e)
    if not math.isfinite(sse):
        return None
    sse = max(sse, _SSE_FLOOR)
    aic = n_eff * math.log(sse / n_eff) + 2 * (k + 1)
    return ArimaFit((p, d, q), const, np.asarray(ar, float), np.asarray(ma, float),
                    sse / n_eff, aic, n_eff)


def _max_inverse_root(c) -> float:
    """Largest modulus of the inverse roots of 1 + c_1 z + ... + c_k z^k."""
    k = len(c)
    if k == 0:
        return 0.0
    if k == 1:
        return abs(float(c[0]))
    comp = np.zeros((k, k))
    comp[0] = -np.asarray(c)
    comp[np.arange(1, k), np.arange(k - 1)] = 1.0
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _invertible(ma) -> bool:
    """All roots of 1 + ma_1 z + ... + ma_q z^q lie outside the unit circle."""
    return _max_inverse_root(ma) < 1.0


def _tail_sse(x, start, const, ar, ma) -> float:
    e = _innovations(x, const, ar, ma)[start:]
    sse = float(e @ e)
    return sse if math.isfinite(sse) else math.inf


def _hannan_rissanen(x, start, p, q, use_const):
    """ARMA starting values: residuals of a long AR fit stand in for the innovations."""
    n = len(x)
    L = min(max(8, 2 * (p + q)), (n - start) // 4)
    if L < max(p, q) or n - L <= L + 2:
        return None
    long_ar = np.column_stack([x[L - i:n - i] for i in range(1, L + 1)]
                              + ([np.ones(n - L)] if use_const else []))
    coef, *_ = np.linalg.lstsq(long_ar, x[L:], rcond=None)
    e = np.zeros(n)
    e[L:] = x[L:] - long_ar @ coef
    t0 = max(start, L + q)
    if n - t0 <= p + q + 2:
        return None
    cols = ([np.ones(n - t0)] if use_const else [])
    cols += [x[t0 - i:n - i] for i in range(1, p + 1)]
    cols += [e[t0 - j:n - j] for j in range(1, q + 1)]
    beta, *_ = np.linalg.lstsq(np.column_stack(cols), x[t0:], rcond=None)
    const = float(beta[0]) if use_const else 0.0
    ar = beta[int(use_const):int(use_const) + p]
    ma = beta[int(use_const) + p:]
    if not (np.all(np.isfinite(beta)) and _invertible(ma)):
        return None
    return const, ar, ma


def _regressors(x, e, p, q, use_const):
    """Unfiltered partial-derivative regressors of the residuals (sign flipped)."""
    n = len(x)
    cols = []
    if use_const:
        col = np.zeros(n)
        col[p:] = 1.0
        cols.append(col)
    for i in range(1, p + 1):
        col = np.zeros(n)
        col[p:] = x[p - i:n - i]
        cols.append(col)
    for j in range(1, q + 1):
        col = np.zeros(n)
        col[j:] = e[:n - j]
        cols.append(col)
    return np.array(cols)


def _gauss_newton(x, start, use_const, ar0, q, const0, ma0=None, max_iter=50, rtol=1e-8):
    p = len(ar0)
    ma0 = np.zeros(q) if ma0 is None else ma0
    theta = np.concatenate([[const0] if use_const else [], ar0, ma0])

    def unpack(th):
        c = th[0] if use_const else 0.0
        return c, th[int(use_const):int(use_const) + p], th[int(use_const) + p:]

    def sse_of(th):
        # keep iterates invertible; outside that region the recursion diverges
        if not _invertible(th[len(th) - q:]):
            return np.inf, None
        e = _innovations(x, *unpack(th))
        tail = e[start:]
        return float(tail @ tail), e

    with np.errstate(all="ignore"):
        sse, e = sse_of(theta)
        for _ in range(max_iter):
            ma = unpack(theta)[2]
            grad = lfilter([1.0], np.concatenate(([1.0], ma)), _regressors(x, e, p, q, use_const),
                           axis=1)
            F = grad[:, start:].T
            if not np.all(np.isfinite(F)):
                return None
            step, *_ = np.linalg.lstsq(F, e[start:], rcond=None)
            scale = 1.0
            for _ in range(8):
                cand = theta + scale * step
                cand_sse, cand_e = sse_of(cand)
                if np.isfinite(cand_sse) and cand_sse <= sse:
                    break
                scale *= 0.5
            else:
                break
            done = sse - cand_sse <= rtol * max(sse, _SSE_FLOOR)
            theta, sse, e = cand, cand_sse, cand_e
            if done:
                break
    if not np.all(np.isfinite(theta)):
        return None
    return unpack(theta)


def select_order(y, max_p: int = 5, max_d: int = 2, max_q: int = 5) -> ArimaFit:
    """Exhaustive AIC search; ties go to the smallest p+d+q, then lexicographic order."""
    y = np.asarray(y, dtype=float)
    n_cond = max_p + max_d
    best, best_key = None, None
    for p, d, q in itertools.product(range(max_p + 1), range(max_d + 1), range(max_q + 1)):
        fit = fit_css(y, (p, d, q), n_cond=n_cond)
        if fit is None:
            continue
        key = (fit.aic, p + d + q, (p, d, q))
        if best_key is None or key < best_key:
            best, best_key = fit, key
    if best is None:
        raise ValueError(f"no ARIMA order could be fitted to {len(y)} points")
    return best


def forecast(fit: ArimaFit, y, steps: int) -> np.ndarray:
    """Forecast ``steps`` values after ``y`` with future innovations set to zero."""
    y = np.asarray(y, dtype=float)
    p, d, q = fit.order
    levels = [y]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    x = levels[-1]
    e = _innovations(x, fit.const, fit.ar, fit.ma)
    hist = list(x)
    errs = list(e) + [0.0] * steps
    n = len(x)
    out = np.empty(steps)
    for h in range(steps):
        t = n + h
        val = fit.const
        for i in range(1, p + 1):
            val += fit.ar[i - 1] * hist[t - i]
        for j in range(1, q + 1):
            if t - j < n:
                val += fit.ma[j - 1] * errs[t - j]
        hist.append(val)
        out[h] = val
    # integrate back through each differencing level
    for level in reversed(levels[:-1]):
        out = level[-1] + np.cumsum(out)
    return out
