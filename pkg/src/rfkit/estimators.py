"""Closed-form estimators: STA, wSTA, spline wSTA, MAP with ASD/ALD priors,
and evidence optimization of prior hyperparameters.

Least-squares solves go through a rank-revealing complete-orthogonal
factorization (gelsy), which returns the minimum-norm solution on rank
deficiency; no explicit inverses. MAP and the evidence use Cholesky solves on
the jittered prior.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from . import design as design_mod
from .errors import DataError, NumericalError


def _as_matrix(X):
    if isinstance(X, design_mod.DesignMatrix):
        return X.X
    return np.asarray(X, dtype=np.float64)


def _lstsq(A, b):
    sol = sla.lstsq(A, b, lapack_driver="gelsy")[0]
    return sol


def sta(X, y, spikes="auto"):
    """(1/n) X^T y with n = sum(y) for spike counts, n = rows otherwise."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise DataError("X rows and y length differ")
    if spikes == "auto":
        spikes = bool(np.all(y >= 0) and np.allclose(y, np.round(y)))
    n = float(np.sum(y)) if spikes else float(y.size)
    if n == 0:
        raise DataError("no effective samples (sum of response is zero)")
    return (X.T @ y) / n


def sta_frames(stimulus, y, n_lags, spikes="auto"):
    """STA accumulated lag by lag; never materializes the design matrix."""
    frames, spatial = design_mod._frames2d(getattr(stimulus, "arr", stimulus))
    y = np.asarray(y, dtype=np.float64).ravel()
    T, p = frames.shape
    if T != y.size:
        raise DataError("stimulus frames and y length differ")
    if spikes == "auto":
        spikes = bool(np.all(y >= 0) and np.allclose(y, np.round(y)))
    n = float(np.sum(y)) if spikes else float(y.size)
    if n == 0:
        raise DataError("no effective samples (sum of response is zero)")
    w = np.zeros((n_lags, p))
    for l in range(n_lags):
        shift = n_lags - 1 - l
        if shift == 0:
            w[l] = y @ frames
        else:
            w[l] = y[shift:] @ frames[:-shift]
    return (w / n).reshape((n_lags,) + tuple(spatial))


def wsta(X, y):
    """Least-squares solution of X w ~ y (minimum-norm under rank deficiency)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.size:
        raise DataError("X rows and y length differ")
    return _lstsq(X, y)


def spl_wsta(X, y, S):
    """Projected least squares: b solves (XS) b ~ y, w = S b."""
    X = _as_matrix(X)
    S = np.asarray(S, dtype=np.float64)
    if X.shape[1] != S.shape[0]:
        raise DataError("X columns and S rows differ")
    b = _lstsq(X @ S, np.asarray(y, dtype=np.float64).ravel())
    return b, S @ b


def spl_wsta_frames(stimulus, y, basis):
    """Spline wSTA through the structured projection; returns (b, w tensor)."""
    from .splines import expand
    Z = design_mod.spline_design(stimulus, basis)
    b = _lstsq(Z, np.asarray(y, dtype=np.float64).ravel())
    return b, expand(basis, b)


# ------------------------------------------------------------------ priors

@dataclass
class PriorCov:
    kind: str
    params: dict
    C: np.ndarray


@dataclass
class EvidenceState:
    sigma2: float
    mu: np.ndarray
    Lambda: np.ndarray
    nle: float = None
    warn: bool = False

    @property
    def w(self):
        return self.mu


def asd_cov(coords, rho, deltas):
    """Squared-exponential prior, Kronecker over dimensions, scale exp(-rho)."""
    if np.ndim(coords[0]) == 0:
        coords = [coords]
    deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
    if len(deltas) != len(coords):
        raise DataError("one delta per dimension required")
    if np.any(deltas <= 0):
        raise DataError("delta must be positive")
    C = np.ones((1, 1))
    for c, d in zip(coords, deltas):
        c = np.asarray(c, dtype=np.float64).ravel()
        D2 = (c[:, None] - c[None, :]) ** 2
        C = np.kron(C, np.exp(-D2 / (2.0 * d * d)))
    C = C * np.exp(-float(rho))
    return PriorCov(kind="asd", params={"rho": float(rho), "deltas": deltas.tolist()}, C=C)


def real_dft_basis(n):
    """Rows: constant, then cos/sin pairs, Nyquist last for even n. Returns
    (B, omega) with omega the angular frequency 2 pi k / n of each row."""
    B = np.zeros((n, n))
    omega = np.zeros(n)
    t = np.arange(n)
    B[0] = 1.0 / np.sqrt(n)
    r = 1
    for k in range(1, (n - 1) // 2 + 1):
        B[r] = np.sqrt(2.0 / n) * np.cos(2 * np.pi * k * t / n)
        B[r + 1] = np.sqrt(2.0 / n) * np.sin(2 * np.pi * k * t / n)
        omega[r] = omega[r + 1] = 2 * np.pi * k / n
        r += 2
    if n % 2 == 0:
        B[r] = np.cos(np.pi * t) / np.sqrt(n)
        omega[r] = np.pi
    return B, omega


def ald_cov(dims, tau_s, nu_s, tau_f, nu_f):
    """Localized prior: C = C_s^{1/2} (B^T C_f B) C_s^{1/2} per dimension."""
    dims = [int(d) for d in np.atleast_1d(dims)]
    tau_s = np.atleast_1d(np.asarray(tau_s, dtype=np.float64))
    nu_s = np.atleast_1d(np.asarray(nu_s, dtype=np.float64))
    tau_f = np.atleast_1d(np.asarray(tau_f, dtype=np.float64))
    nu_f = np.atleast_1d(np.asarray(nu_f, dtype=np.float64))
    if not (len(tau_s) == len(nu_s) == len(tau_f) == len(nu_f) == len(dims)):
        raise DataError("ALD needs one (tau_s, nu_s, tau_f, nu_f) per dimension")
    if np.any(tau_s <= 0):
        raise DataError("tau_s must be positive")
    C = np.ones((1, 1))
    for i, n in enumerate(dims):
        chi = np.arange(n, dtype=np.float64)
        cs_half = np.exp(-((chi - nu_s[i]) ** 2) / (4.0 * tau_s[i] ** 2))
        B, omega = real_dft_basis(n)
        cf = np.exp(-((np.abs(tau_f[i] * omega) - nu_f[i]) ** 2) / 2.0)
        Cd = (B.T * cf) @ B
        Cd = cs_half[:, None] * Cd * cs_half[None, :]
        C = np.kron(C, Cd)
    params = {
        "tau_s": tau_s.tolist(), "nu_s": nu_s.tolist(),
        "tau_f": tau_f.tolist(), "nu_f": nu_f.tolist(),
    }
    return PriorCov(kind="ald", params=params, C=C)


# ------------------------------------------------------------- MAP/evidence

def _jitter_eps(C):
    d = C.shape[0]
    return 1e-7 * float(np.trace(C)) / d


def _posterior_from_grams(XtX, Xty, C, sigma2, need_logdets=False):
    d = C.shape[0]
    eps = _jitter_eps(C)
    try:
        cf_C = sla.cho_factor(C + eps * np.eye(d), lower=True)
        Cinv = sla.cho_solve(cf_C, np.eye(d))
        Li = XtX / sigma2 + Cinv
        cf_L = sla.cho_factor(Li, lower=True)
        Lam = sla.cho_solve(cf_L, np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"prior covariance singular after jitter: {exc}")
    mu = Lam @ (Xty / sigma2)
    if not need_logdets:
        return mu, Lam, None, None
    logdet_C = 2.0 * np.sum(np.log(np.diag(cf_C[0])))
    logdet_Li = 2.0 * np.sum(np.log(np.diag(cf_L[0])))
    return mu, Lam, logdet_C, logdet_Li


def map_estimate(X, y, C, sigma2):
    """Posterior mean/covariance for the Gaussian model with prior cov C."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    Carr = C.C if isinstance(C, PriorCov) else np.asarray(C, dtype=np.float64)
    if sigma2 <= 0:
        raise DataError("sigma2 must be positive")
    mu, Lam, _, _ = _posterior_from_grams(X.T @ X, X.T @ y, Carr, float(sigma2))
    return EvidenceState(sigma2=float(sigma2), mu=mu, Lambda=Lam)


def neg_log_evidence(X, y, C, sigma2):
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    Carr = C.C if isinstance(C, PriorCov) else np.asarray(C, dtype=np.float64)
    return _nle_from_grams(X.T @ X, X.T @ y, float(y @ y), y.size, Carr, float(sigma2))[0]


def _nle_from_grams(XtX, Xty, yty, n, C, sigma2):
    mu, Lam, logdet_C, logdet_Li = _posterior_from_grams(
        XtX, Xty, C, sigma2, need_logdets=True
    )
    cost = (
        0.5 * n * np.log(2.0 * np.pi * sigma2)
        + (logdet_C + logdet_Li) / n
        - (mu @ (Lam @ mu)) / n
        + yty / (2.0 * sigma2)
    )
    return cost, mu, Lam


def _center_of_mass(v):
    v = np.abs(v)
    s = v.sum()
    if s == 0:
        return 0.5 * (len(v) - 1)
    return float(np.arange(len(v)) @ v / s)


def evidence_optimize(X, y, prior_kind, dims=None):
    """Simplex search over log-hyperparameters (plus log sigma2) of the prior.

    dims: per-dimension sizes of the filter; defaults to a single dimension of
    length d. Returns (PriorCov, EvidenceState) at the best cost found; the
    state carries warn=True if the 500-evaluation budget ran out first.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if n < 10:
        raise DataError("evidence optimization needs n >= 10")
    if dims is None:
        dims = [d]
    dims = [int(v) for v in dims]
    if int(np.prod(dims)) != d:
        raise DataError("prod(dims) must equal the number of columns of X")
    XtX = X.T @ X
    Xty = X.T @ y
    yty = float(y @ y)
    coords = [np.arange(m, dtype=np.float64) for m in dims]
    nd = len(dims)
    s2_0 = max(float(np.var(y)), 1e-8)

    if prior_kind == "asd":
        # theta = [rho, log delta per dim, log sigma2]
        theta0 = np.concatenate(([0.0], [np.log(max(m / 4.0, 1.0)) for m in dims],
                                 [np.log(s2_0)]))

        def build(theta):
            return asd_cov(coords, theta[0], np.exp(theta[1:1 + nd]))

        def unpack_s2(theta):
            return float(np.exp(theta[1 + nd]))
    elif prior_kind == "ald":
        com = [ _center_of_mass(np.abs(sta(X, y)).reshape(dims).sum(
                    axis=tuple(j for j in range(nd) if j != i)))
                for i in range(nd) ]
        theta0 = np.concatenate((
            [np.log(max(m / 4.0, 1.0)) for m in dims],     # log tau_s
            com,                                            # nu_s
            np.zeros(nd),                                   # log tau_f
            np.zeros(nd),                                   # nu_f
            [np.log(s2_0)],
        ))

        def build(theta):
            return ald_cov(dims, np.exp(theta[:nd]), theta[nd:2 * nd],
                           np.exp(theta[2 * nd:3 * nd]), theta[3 * nd:4 * nd])

        def unpack_s2(theta):
            return float(np.exp(theta[4 * nd]))
    else:
        raise DataError(f"unknown prior kind {prior_kind!r}")

    best = {"cost": np.inf, "theta": theta0}

    def objective(theta):
        try:
            # overflow to inf is a legitimate boundary (delta -> inf means a
            # flat prior along that dimension), so only invalid results reject
            with np.errstate(over="ignore"):
                prior = build(theta)
                cost, _, _ = _nle_from_grams(XtX, Xty, yty, n, prior.C,
                                             unpack_s2(theta))
        except (NumericalError, FloatingPointError, OverflowError):
            return np.inf
        if not np.isfinite(cost):
            return np.inf
        if cost < best["cost"]:
            best["cost"] = cost
            best["theta"] = np.array(theta)
        return cost

    # restart the simplex from the incumbent until the evaluation budget is
    # spent or a restart stops improving by the cost tolerance
    budget = 500
    spent = 0
    success = False
    start = theta0
    while spent < budget:
        prev_best = best["cost"]
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"fatol": 1e-6, "xatol": np.inf,
                                "maxfev": budget - spent, "maxiter": 10 ** 9})
        spent += res.nfev
        success = bool(res.success)
        if best["cost"] >= prev_best - 1e-6:
            break
        start = best["theta"]
    theta = best["theta"] if best["cost"] < np.inf else res.x
    with np.errstate(over="ignore"):
        prior = build(theta)
        s2 = unpack_s2(theta)
        cost, mu, Lam = _nle_from_grams(XtX, Xty, yty, n, prior.C, s2)
    state = EvidenceState(sigma2=s2, mu=mu, Lambda=Lam, nle=float(cost),
                          warn=not success)
    return prior, state
