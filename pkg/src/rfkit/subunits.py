"""Spike-triggered clustering for subunit recovery.

Both factorizations approximate V^T (d x n_spikes) as W H^T with W the d x k
subunit matrix. The spline variants project centroids/subunits onto the
column space of S after each update (W <- S S+ W), so recovered filters stay
smooth. semi-NMF uses the multiplicative square-root update for H, which
keeps H nonnegative and the objective non-increasing.
"""

import warnings
from dataclasses import dataclass
from itertools import permutations

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .errors import DataError, NumericalError
from .rng import Rng


@dataclass
class FactorizationResult:
    W: np.ndarray                    # (d, k)
    H: np.ndarray                    # (n, k)
    B_spline: np.ndarray             # (n_coef, k) or None
    objective_history: list


def ste(X, y):
    """Spike-triggered ensemble: X rows repeated by integer spike count."""
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise DataError("X rows and y length differ")
    if np.any(y < 0) or not np.allclose(y, np.round(y)):
        raise DataError("spike counts must be non-negative integers")
    counts = np.round(y).astype(np.int64)
    if counts.sum() == 0:
        raise DataError("no spikes in response")
    return np.repeat(X, counts, axis=0)


def _spline_projector(S):
    # S S+ applied via a rank-revealing least-squares solve, computed once
    S = np.asarray(S, dtype=np.float64)

    def project(W):
        coef = sla.lstsq(S, W, lapack_driver="gelsy")[0]
        return S @ coef, coef

    return project


def _objective(M, W, H):
    R = M - W @ H.T
    return float(np.sum(R * R))


def kmeans_subunits(V, k, S=None, seed=0, max_iters=300):
    """Lloyd iterations on the spike-triggered ensemble.

    Centroids are the subunits; with S given each centroid update is followed
    by projection onto the spline span. Empty clusters are re-seeded from the
    point farthest from its assigned centroid.
    """
    V = np.asarray(V, dtype=np.float64)
    n, d = V.shape
    if not 1 <= k <= n:
        raise DataError(f"k={k} out of range for {n} ensemble rows")
    rng = Rng(seed, stream=0).gen
    idx = rng.choice(n, size=k, replace=False)
    C = V[idx].copy()
    project = _spline_projector(S) if S is not None else None
    coef = None
    if project is not None:
        C_T, coef = project(C.T)
        C = C_T.T
    labels = np.full(n, -1, dtype=np.int64)
    history = []
    for _ in range(max_iters):
        new_labels, mind = _kernels.nearest_centroid(V, C)
        for c in range(k):
            mask = new_labels == c
            if not np.any(mask):
                far = int(np.argmax(mind))
                C[c] = V[far]
                new_labels[far] = c
                mask = new_labels == c
            C[c] = V[mask].mean(axis=0)
        if project is not None:
            C_T, coef = project(C.T)
            C = C_T.T
        H = np.zeros((n, k))
        H[np.arange(n), new_labels] = 1.0
        history.append(_objective(V.T, C.T, H))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return FactorizationResult(W=C.T.copy(), H=H, B_spline=coef,
                               objective_history=history)


def _halves(A):
    pos = 0.5 * (np.abs(A) + A)
    neg = 0.5 * (np.abs(A) - A)
    return pos, neg


def seminmf_subunits(V, k, S=None, seed=0, max_iters=500, tol=1e-6, H0=None):
    """Alternating updates: exact least-squares W (optionally spline
    projected), multiplicative nonnegative H. Stops on relative objective
    change < tol. H0 overrides the random nonnegative initialization."""
    V = np.asarray(V, dtype=np.float64)
    n, d = V.shape
    if k < 1:
        raise DataError("k must be >= 1")
    M = V.T                                        # (d, n)
    if H0 is not None:
        H = np.asarray(H0, dtype=np.float64).copy()
        if H.shape != (n, k) or np.any(H < 0):
            raise DataError("H0 must be nonnegative with shape (n, k)")
    else:
        rng = Rng(seed, stream=0).gen
        H = np.abs(rng.standard_normal((n, k))) + 0.1
    project = _spline_projector(S) if S is not None else None
    coef = None
    history = []
    W = None
    for it in range(max_iters):
        G = H.T @ H
        G = G + 1e-12 * np.trace(G) / k * np.eye(k)
        try:
            W = M @ H @ np.linalg.inv(G)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"H^T H singular in semi-NMF: {exc}")
        if project is not None:
            W, coef = project(W)
        MtW = M.T @ W                              # (n, k)
        WtW = W.T @ W                              # (k, k)
        p1, n1 = _halves(MtW)
        p2, n2 = _halves(WtW)
        H = H * np.sqrt((p1 + H @ n2) / (n1 + H @ p2 + 1e-16))
        history.append(_objective(M, W, H))
        if it > 0:
            prev = history[-2]
            if prev > 0 and abs(prev - history[-1]) / prev < tol:
                break
    return FactorizationResult(W=W, H=H, B_spline=coef, objective_history=history)


def match_subunits(W_est, W_true):
    """Best permutation + per-pair signed least-squares scale.

    Returns (perm, scales, mses): estimated column perm[j] is matched to true
    column j; mses are normalized MSEs after scaling. Exhaustive for k <= 6,
    greedy beyond (with a warning).
    """
    from .diagnostics import normalized_mse

    W_est = np.asarray(W_est, dtype=np.float64)
    W_true = np.asarray(W_true, dtype=np.float64)
    if W_est.shape != W_true.shape:
        raise DataError("subunit matrices must have equal shape")
    k = W_est.shape[1]

    def pair_cost(i, j):
        e = W_est[:, i]
        t = W_true[:, j]
        denom = float(e @ e)
        if denom == 0.0:
            return 4.0, 1.0
        a = float(e @ t) / denom
        if a == 0.0:
            a = 1.0
        return normalized_mse(a * e, t), a

    cost = np.empty((k, k))
    scale = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            cost[i, j], scale[i, j] = pair_cost(i, j)
    if k <= 6:
        best_perm, best_mean = None, np.inf
        for perm in permutations(range(k)):
            mean = np.mean([cost[perm[j], j] for j in range(k)])
            if mean < best_mean:
                best_mean = mean
                best_perm = perm
    else:
        warnings.warn("k > 6: greedy subunit matching")
        best_perm = [-1] * k
        used = set()
        for j in range(k):
            order = np.argsort(cost[:, j])
            for i in order:
                if int(i) not in used:
                    best_perm[j] = int(i)
                    used.add(int(i))
                    break
        best_perm = tuple(best_perm)
    scales = [scale[best_perm[j], j] for j in range(k)]
    mses = [cost[best_perm[j], j] for j in range(k)]
    return best_perm, scales, mses
