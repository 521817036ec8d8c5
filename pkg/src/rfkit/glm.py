"""Gradient-descent fitting of LG / LNP / LNLN encoding models.

Costs follow the printed forms: LG is mean squared error + L1, LNP and LNLN
are the Poisson negative log-likelihood (without the log y! constant and
without 1/n normalization, so L1 weights are data-length dependent) + L1.
The L1 term is handled by a soft-threshold proximal step after each adaptive
moment update; the gradient covers only the smooth part. Validation cost
excludes L1 (it monitors generalization, not the penalty).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DataError, NumericalError
from . import _kernels
from .rng import Rng

LAM_FLOOR = 1e-12


# ----------------------------------------------------------- nonlinearities

def _softplus(u):
    return np.log1p(np.exp(-np.abs(u))) + np.maximum(u, 0.0)

def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out

NONLIN = {
    "exp": (np.exp, np.exp),
    "softplus": (_softplus, _sigmoid),
    "identity": (lambda u: u, lambda u: np.ones_like(u)),
}


def _nl(name):
    if name not in NONLIN:
        raise DataError(f"unknown nonlinearity {name!r}")
    return NONLIN[name]


# ------------------------------------------------------------------- types

@dataclass
class ModelSpec:
    family: str                    # lg | lnp | lnln
    k: int = 1
    f: str = "exp"                 # filter nonlinearity (lnp, lnln)
    g: str = "softplus"            # output nonlinearity (lnln)
    basis: object = None           # SplineBasis or None
    intercept: float = 0.0
    delta_t: float = 0.033
    rate_scale: float = 1.0        # R; 1 for fitting unless known

    def __post_init__(self):
        if self.family not in ("lg", "lnp", "lnln"):
            raise DataError(f"unknown family {self.family!r}")
        if self.family in ("lg", "lnp") and self.k != 1:
            raise DataError(f"{self.family} models have exactly one filter")
        if self.family == "lg":
            self.f = "identity"
            self.g = "identity"
        if self.k < 1:
            raise DataError("k must be >= 1")


@dataclass
class FitOptions:
    l1_weight: float = 0.0
    max_iters: int = 1500
    lr: float = 0.03
    window: int = 10
    train_tol: float = 1e-5
    seed: int = 0
    init_noise_sd: float = None    # default 0.01 * sd(initial coefficients)


@dataclass
class FitResult:
    coeffs: np.ndarray             # (k, m)
    intercept: float
    history: dict
    stopped_by: str
    best_iter: int
    l1_weight: float = 0.0

    @property
    def b(self):
        return self.coeffs[0]


# ------------------------------------------------------------------- costs

def _project(X, S):
    X = np.asarray(X, dtype=np.float64)
    if S is None:
        return X
    return X @ np.asarray(S, dtype=np.float64)


def cost_lg(b, X, y, S=None, alpha=0.0):
    y = np.asarray(y, dtype=np.float64).ravel()
    r = _project(X, S) @ np.asarray(b, dtype=np.float64) - y
    return float(r @ r) / y.size + alpha * float(np.abs(b).sum())


def cost_lnp(b, intercept, X, y, S=None, alpha=0.0, delta_t=0.033, f="exp"):
    y = np.asarray(y, dtype=np.float64).ravel()
    fn, _ = _nl(f)
    lam = np.maximum(fn(_project(X, S) @ np.asarray(b, dtype=np.float64) + intercept),
                     LAM_FLOOR)
    if not np.all(np.isfinite(lam)):
        raise NumericalError("non-finite rate in cost_lnp")
    return float(-(y @ np.log(lam)) + delta_t * lam.sum()) + alpha * float(np.abs(b).sum())


def cost_lnln(B, intercept, X, y, S=None, alpha=0.0, delta_t=0.033,
              f="exp", g="softplus", rate_scale=1.0):
    y = np.asarray(y, dtype=np.float64).ravel()
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    fn, _ = _nl(f)
    gn, _ = _nl(g)
    Z = _project(X, S)
    z = intercept + fn(Z @ B.T).sum(axis=1)
    lam = np.maximum(rate_scale * gn(z), LAM_FLOOR)
    if not np.all(np.isfinite(lam)):
        raise NumericalError("non-finite rate in cost_lnln")
    return float(-(y @ np.log(lam)) + delta_t * lam.sum()) + alpha * float(np.abs(B).sum())


# --------------------------------------------------------------- gradients
# Gradients are of the smooth part only; L1 is applied by the proximal step.

def grad_lg(b, X, y, S=None):
    y = np.asarray(y, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64)
    S_ = None if S is None else np.asarray(S, dtype=np.float64)
    Z = _project(X, S_)
    r = Z @ np.asarray(b, dtype=np.float64) - y
    return (2.0 / y.size) * (Z.T @ r)


def grad_lnp(b, intercept, X, y, S=None, delta_t=0.033, f="exp"):
    y = np.asarray(y, dtype=np.float64).ravel()
    fn, fp = _nl(f)
    Z = _project(X, S)
    u = Z @ np.asarray(b, dtype=np.float64) + intercept
    raw = fn(u)
    lam = np.maximum(raw, LAM_FLOOR)
    t = np.where(raw >= LAM_FLOOR, (delta_t - y / lam) * fp(u), 0.0)
    return Z.T @ t, float(t.sum())


def grad_lnln(B, intercept, X, y, S=None, delta_t=0.033, f="exp",
              g="softplus", rate_scale=1.0):
    y = np.asarray(y, dtype=np.float64).ravel()
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    fn, fp = _nl(f)
    gn, gp = _nl(g)
    Z = _project(X, S)
    U = Z @ B.T                                   # (n, k)
    z = intercept + fn(U).sum(axis=1)
    raw = rate_scale * gn(z)
    lam = np.maximum(raw, LAM_FLOOR)
    a = np.where(raw >= LAM_FLOOR, delta_t - y / lam, 0.0)
    common = a * rate_scale * gp(z)               # dcost/dz
    gB = (Z.T @ (common[:, None] * fp(U))).T      # (k, m)
    return gB, float(common.sum())


def grad(kind, *args, **kwargs):
    fn = {"lg": grad_lg, "lnp": grad_lnp, "lnln": grad_lnln}.get(kind)
    if fn is None:
        raise DataError(f"unknown cost kind {kind!r}")
    return fn(*args, **kwargs)


# --------------------------------------------------------------------- fit

def _safe_corr(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    sa = a.std()
    sb = b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(((a - a.mean()) @ (b - b.mean())) / (a.size * sa * sb))


def _smooth_cost_and_rate(spec, B, c, Z, y):
    """Cost without L1 plus the predicted rate, from the projected design."""
    if spec.family == "lg":
        pred = Z @ B[0]
        r = pred - y
        return float(r @ r) / y.size, pred
    fn, _ = _nl(spec.f)
    if spec.family == "lnp":
        lam = np.maximum(fn(Z @ B[0] + c), LAM_FLOOR)
    else:
        gn, _ = _nl(spec.g)
        lam = np.maximum(spec.rate_scale * gn(c + fn(Z @ B.T).sum(axis=1)), LAM_FLOOR)
    return float(-(y @ np.log(lam)) + spec.delta_t * lam.sum()), lam


def _grad_theta(spec, B, c, Z, y):
    if spec.family == "lg":
        return grad_lg(B[0], Z, y)[None, :], None
    if spec.family == "lnp":
        gb, gc = grad_lnp(B[0], c, Z, y, delta_t=spec.delta_t, f=spec.f)
        return gb[None, :], gc
    gB, gc = grad_lnln(B, c, Z, y, delta_t=spec.delta_t, f=spec.f, g=spec.g,
                       rate_scale=spec.rate_scale)
    return gB, gc


def _bisect_scalar(fun, lo=-60.0, hi=60.0, iters=80):
    flo, fhi = fun(lo), fun(hi)
    if flo * fhi > 0:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fun(mid) * flo <= 0:
            hi = mid
        else:
            lo = mid
            flo = fun(lo)
    return 0.5 * (lo + hi)


def _init_params(spec, Z, y, opts):
    rng = Rng(opts.seed, stream=0).gen
    b0 = sla.lstsq(Z, y, lapack_driver="gelsy")[0]
    sd = opts.init_noise_sd
    if sd is None:
        sd = 0.01 * float(np.std(b0))
    B = np.empty((spec.k, Z.shape[1]))
    for j in range(spec.k):
        scale = 1.0 if spec.k == 1 else 1.0 / spec.k
        B[j] = b0 * scale + rng.normal(0.0, sd, size=b0.size)
    if spec.family == "lg":
        return B, 0.0
    ybar = max(float(y.mean()), 1e-10)
    fn, _ = _nl(spec.f)
    if spec.family == "lnp":
        u = Z @ B[0]
        target = ybar / spec.delta_t
        c0 = _bisect_scalar(lambda c: float(np.mean(fn(np.minimum(u + c, 500.0)))) - target)
    else:
        gn, _ = _nl(spec.g)
        s = fn(Z @ B.T).sum(axis=1)
        target = ybar / spec.delta_t
        c0 = _bisect_scalar(
            lambda c: spec.rate_scale * float(np.mean(gn(s + c))) - target)
    return B, c0


def fit(spec, X_train, y_train, X_val, y_val, opts=None, projected=False):
    """Proximal adaptive-moment descent with early stopping.

    X_* may be raw designs (projected internally when spec.basis is set) or
    already-projected matrices (projected=True). Returns the parameters at
    the minimum validation cost regardless of the stopping trigger.
    """
    opts = opts or FitOptions()
    y_train = np.asarray(y_train, dtype=np.float64).ravel()
    y_val = np.asarray(y_val, dtype=np.float64).ravel()
    if y_val.size == 0:
        raise DataError("validation set must be non-empty")
    S = None
    if spec.basis is not None and not projected:
        S = spec.basis.full
    Ztr = _project(X_train, S)
    Zva = _project(X_val, S)
    if Ztr.shape[0] != y_train.size or Zva.shape[0] != y_val.size:
        raise DataError("design rows and response length differ")

    B, c = _init_params(spec, Ztr, y_train, opts)
    k, m = B.shape
    has_c = spec.family != "lg"
    n_par = k * m + (1 if has_c else 0)
    theta = np.empty(n_par)
    theta[: k * m] = B.ravel()
    if has_c:
        theta[-1] = c
    mstate = np.zeros(n_par)
    vstate = np.zeros(n_par)
    thresh = opts.lr * opts.l1_weight

    hist = {"train_cost": [], "val_cost": [], "train_corr": [], "val_corr": []}
    best = {"val": np.inf, "theta": theta.copy(), "iter": -1}
    stopped_by = "max_iters"
    gbuf = np.empty(n_par)

    for it in range(1, opts.max_iters + 1):
        Bv = theta[: k * m].reshape(k, m)
        cv = theta[-1] if has_c else 0.0
        gB, gc = _grad_theta(spec, Bv, cv, Ztr, y_train)
        gbuf[: k * m] = gB.ravel()
        if has_c:
            gbuf[-1] = gc
        _kernels.adam_prox_step(theta, gbuf, mstate, vstate, it, opts.lr,
                                0.9, 0.999, 1e-8, thresh, k * m)
        Bv = theta[: k * m].reshape(k, m)
        cv = theta[-1] if has_c else 0.0
        tr_cost, tr_pred = _smooth_cost_and_rate(spec, Bv, cv, Ztr, y_train)
        va_cost, va_pred = _smooth_cost_and_rate(spec, Bv, cv, Zva, y_val)
        if not (np.isfinite(tr_cost) and np.isfinite(va_cost)):
            raise NumericalError(f"cost diverged at iteration {it}")
        tr_total = tr_cost + opts.l1_weight * float(np.abs(Bv).sum())
        hist["train_cost"].append(tr_total)
        hist["val_cost"].append(va_cost)
        hist["train_corr"].append(_safe_corr(y_train, tr_pred))
        hist["val_corr"].append(_safe_corr(y_val, va_pred))
        if va_cost < best["val"]:
            best["val"] = va_cost
            best["theta"] = theta.copy()
            best["iter"] = it - 1
        w = opts.window
        if len(hist["train_cost"]) > w:
            recent = hist["train_cost"][-(w + 1):]
            if max(abs(recent[i + 1] - recent[i]) for i in range(w)) < opts.train_tol:
                stopped_by = "train_plateau"
                break
            vrecent = hist["val_cost"][-(w + 1):]
            if all(vrecent[i + 1] > vrecent[i] for i in range(w)):
                stopped_by = "val_increase"
                break

    theta = best["theta"]
    Bv = theta[: k * m].reshape(k, m).copy()
    cv = float(theta[-1]) if has_c else 0.0
    return FitResult(coeffs=Bv, intercept=cv, history=hist,
                     stopped_by=stopped_by, best_iter=best["iter"],
                     l1_weight=opts.l1_weight)


def predict(spec, coeffs, X, intercept=0.0, projected=False):
    """Predicted rate (or linear output for LG) for a fitted model."""
    S = None
    if spec.basis is not None and not projected:
        S = spec.basis.full
    Z = _project(X, S)
    B = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    if B.shape[1] != Z.shape[1]:
        raise DataError("coefficient length does not match design")
    if spec.family == "lg":
        return Z @ B[0]
    fn, _ = _nl(spec.f)
    if spec.family == "lnp":
        return fn(Z @ B[0] + intercept)
    gn, _ = _nl(spec.g)
    return spec.rate_scale * gn(intercept + fn(Z @ B.T).sum(axis=1))


# ------------------------------------------------------------ grid searches

def gridsearch_df(stimulus, y, data_split, n_lags, df_grid, threads=None):
    """Fit spl_wsta per df combination, score validation correlation.

    df_grid: one candidate list per filter dimension (lag axis first).
    Returns (best_dfs, table); table rows are (dfs tuple, val_corr), in grid
    order, each cell fitted independently.
    """
    from concurrent.futures import ThreadPoolExecutor
    from itertools import product
    from . import backend
    from . import design as design_mod
    from .splines import tensor_basis

    arr = np.asarray(getattr(stimulus, "arr", stimulus), dtype=np.float64)
    spatial = arr.shape[1:]
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(df_grid) != 1 + len(spatial):
        raise DataError("df_grid needs one candidate list per filter dimension")
    combos = list(product(*df_grid))
    if not combos:
        raise DataError("df grid is empty")
    t0, t1 = data_split.train
    v0, v1 = data_split.validation

    def cell(dfs):
        dims = [(n_lags,) + (int(dfs[0]),)] + [
            (int(s), int(d)) for s, d in zip(spatial, dfs[1:])
        ]
        basis = tensor_basis(dims)
        Z = design_mod.spline_design(arr, basis)
        b = sla.lstsq(Z[t0:t1], y[t0:t1], lapack_driver="gelsy")[0]
        return _safe_corr(y[v0:v1], Z[v0:v1] @ b)

    threads = threads if threads is not None else backend.n_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(cell, combos))
    else:
        scores = [cell(c) for c in combos]
    table = [(tuple(int(v) for v in c), s) for c, s in zip(combos, scores)]
    best_dfs = max(table, key=lambda row: row[1])[0]
    return best_dfs, table


def gridsearch_l1(data, spec, alphas, opts=None, projected=False):
    """Ascending L1 sweep with early interruption.

    data = (X_train, y_train, X_val, y_val). The sweep stops as soon as the
    current validation correlation drops below the previous one; ties keep
    the earlier (smaller) alpha. Returns (best_alpha, results, perfs) with
    results/perfs keyed by alpha in visit order.
    """
    alphas = [float(a) for a in alphas]
    if alphas != sorted(alphas):
        raise DataError("alpha list must be ascending")
    opts = opts or FitOptions()
    X_train, y_train, X_val, y_val = data
    results = {}
    perfs = {}
    prev = None
    for a in alphas:
        o = FitOptions(l1_weight=a, max_iters=opts.max_iters, lr=opts.lr,
                       window=opts.window, train_tol=opts.train_tol,
                       seed=opts.seed, init_noise_sd=opts.init_noise_sd)
        res = fit(spec, X_train, y_train, X_val, y_val, o, projected=projected)
        perf = res.history["val_corr"][res.best_iter]
        results[a] = res
        perfs[a] = perf
        if prev is not None and perf < prev:
            break
        prev = perf
    best_alpha = max(perfs, key=lambda a: (perfs[a], -a))
    return best_alpha, results, perfs
