"""Hot loops with numba implementations and pure-numpy fallbacks.

Three kernels are loop-shaped enough to benefit from compilation:
  lag_design        time-lagged design matrix embedding
  nearest_centroid  k-means assignment step
  adam_prox_step    fused adaptive-moment update + soft-threshold prox

Everything else in the package is BLAS-bound and stays in numpy. Dispatch is
per-call through backend.active(); both paths implement identical semantics
(bitwise equality is only guaranteed within one backend, since summation
order differs).
"""

import numpy as np

from . import backend

if backend.HAS_NUMBA:
    from numba import njit
else:  # pragma: no cover - exercised via RFKIT_BACKEND=numpy
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------- lag design

def _lag_design_np(frames, n_lags):
    T, p = frames.shape
    X = np.zeros((T, n_lags * p))
    for l in range(n_lags):
        # slot l holds frame t-(n_lags-1)+l; slot n_lags-1 is the current frame
        shift = n_lags - 1 - l
        if shift == 0:
            X[:, l * p:(l + 1) * p] = frames
        else:
            X[shift:, l * p:(l + 1) * p] = frames[:-shift]
    return X


@njit(cache=True)
def _lag_design_nb(frames, n_lags):  # pragma: no cover - compiled
    T, p = frames.shape
    X = np.zeros((T, n_lags * p))
    for t in range(T):
        for l in range(n_lags):
            src = t - (n_lags - 1) + l
            if src >= 0:
                base = l * p
                for j in range(p):
                    X[t, base + j] = frames[src, j]
    return X


def lag_design(frames, n_lags):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if backend.active() == "numba":
        return _lag_design_nb(frames, n_lags)
    return _lag_design_np(frames, n_lags)


# ------------------------------------------------------- k-means assignment

def _nearest_centroid_np(V, C):
    # ||v-c||^2 expanded; argmin over centroids, first index wins ties
    d2 = (V * V).sum(axis=1)[:, None] - 2.0 * V @ C.T + (C * C).sum(axis=1)[None, :]
    labels = np.argmin(d2, axis=1)
    mind = d2[np.arange(V.shape[0]), labels]
    return labels.astype(np.int64), np.maximum(mind, 0.0)


@njit(cache=True)
def _nearest_centroid_nb(V, C):  # pragma: no cover - compiled
    n, d = V.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind = np.empty(n)
    for i in range(n):
        best = -1
        bestd = np.inf
        for c in range(k):
            acc = 0.0
            for j in range(d):
                diff = V[i, j] - C[c, j]
                acc += diff * diff
            if acc < bestd:
                bestd = acc
                best = c
        labels[i] = best
        mind[i] = bestd
    return labels, mind


def nearest_centroid(V, C):
    V = np.ascontiguousarray(V, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if backend.active() == "numba":
        return _nearest_centroid_nb(V, C)
    return _nearest_centroid_np(V, C)


# ----------------------------------------------- fused adam + prox update

def _adam_prox_np(theta, g, m, v, t, lr, b1, b2, eps, thresh, n_pen):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)
    if thresh > 0.0 and n_pen > 0:
        head = theta[:n_pen]
        np.copyto(head, np.sign(head) * np.maximum(np.abs(head) - thresh, 0.0))


@njit(cache=True)
def _adam_prox_nb(theta, g, m, v, t, lr, b1, b2, eps, thresh, n_pen):  # pragma: no cover
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(theta.shape[0]):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        step = lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
        x = theta[i] - step
        if thresh > 0.0 and i < n_pen:
            if x > thresh:
                x -= thresh
            elif x < -thresh:
                x += thresh
            else:
                x = 0.0
        theta[i] = x


def adam_prox_step(theta, g, m, v, t, lr, b1, b2, eps, thresh, n_pen):
    """Update theta, m, v in place. Entries [0, n_pen) get the L1 prox."""
    if backend.active() == "numba":
        _adam_prox_nb(theta, g, m, v, t, lr, b1, b2, eps, thresh, n_pen)
    else:
        _adam_prox_np(theta, g, m, v, t, lr, b1, b2, eps, thresh, n_pen)
