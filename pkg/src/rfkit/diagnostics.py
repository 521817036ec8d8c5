"""STRF quality assessment: posterior covariance, confidence intervals, Wald
test, permutation test, prediction metrics, and the SVD visualization split.

Tail probabilities go through scipy.special's regularized incomplete
gamma/beta routines (gammaincc for the chi-squared survival, stdtr for the
Student t).
"""

import warnings
from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaincc, stdtr

from .errors import DataError, NumericalError
from .glm import NONLIN
from .rng import Rng


@dataclass
class Report:
    ci_low: np.ndarray
    ci_high: np.ndarray
    wald_T: float
    wald_p: float
    perm_corrs: np.ndarray
    perm_p: float
    train_corr: float
    val_corr: float
    train_val_gap: float

    def to_dict(self):
        d = asdict(self)
        d["ci_low"] = np.asarray(d["ci_low"]).tolist()
        d["ci_high"] = np.asarray(d["ci_high"]).tolist()
        d["perm_corrs"] = np.asarray(d["perm_corrs"]).tolist()
        return d


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DataError("length mismatch")
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise DataError("zero variance input to pearson")
    return float(((a - a.mean()) @ (b - b.mean())) / (a.size * sa * sb))


def normalized_mse(w_est, w_true):
    """MSE between Frobenius-normalized tensors."""
    a = np.asarray(getattr(w_est, "arr", w_est), dtype=np.float64).ravel()
    b = np.asarray(getattr(w_true, "arr", w_true), dtype=np.float64).ravel()
    if a.size != b.size:
        raise DataError("shape mismatch")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("zero-norm tensor in normalized_mse")
    d = a / na - b / nb
    return float(d @ d) / a.size


def _sym_jitter_solve(A, rhs):
    A = 0.5 * (A + A.T)
    try:
        cf = sla.cho_factor(A, lower=True)
        return sla.cho_solve(cf, rhs), False
    except np.linalg.LinAlgError:
        eps = 1e-10 * max(float(np.trace(A)) / A.shape[0], 1.0)
        warnings.warn("singular matrix in diagnostics; adding jitter")
        try:
            cf = sla.cho_factor(A + eps * np.eye(A.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"matrix singular even after jitter: {exc}")
        return sla.cho_solve(cf, rhs), True


def posterior_cov(family, X, S, b, y=None, f="exp", intercept=0.0):
    """V_b for the fitted coefficients.

    LG:  (S^T X^T X S)^{-1} sigma^2 with sigma^2 the training residual variance.
    LNP: (S^T X^T W X S)^{-1} with w_ii = 1 / f(XSb)^2, as printed.
    X may already be the projected design (pass S=None).
    """
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    Z = X if S is None else X @ np.asarray(S, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    if Z.shape[1] != b.size:
        raise DataError("coefficient length does not match design")
    if family == "lg":
        if y is None:
            raise DataError("LG posterior covariance needs y")
        y = np.asarray(y, dtype=np.float64).ravel()
        r = y - Z @ b
        sigma2 = float(r @ r) / y.size
        G = Z.T @ Z
        Vb, _ = _sym_jitter_solve(G, np.eye(G.shape[0]) * sigma2)
    elif family == "lnp":
        fn, _ = NONLIN[f]
        lam = fn(Z @ b + intercept)
        wdiag = 1.0 / np.maximum(lam, 1e-12) ** 2
        G = Z.T @ (wdiag[:, None] * Z)
        Vb, _ = _sym_jitter_solve(G, np.eye(G.shape[0]))
    else:
        raise DataError(f"posterior_cov supports lg and lnp, got {family!r}")
    return 0.5 * (Vb + Vb.T)


def confidence_interval(b, V_b, S=None, z=1.96):
    """95% CI in coefficient space; also in w-space when S is given.

    Returns (b_low, b_high) or (b_low, b_high, w_low, w_high).
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    V_b = np.asarray(V_b, dtype=np.float64)
    dvar = np.diag(V_b).copy()
    if np.any(dvar < -1e-12 * max(dvar.max(), 1.0)):
        raise DataError("negative variance in V_b")
    se = np.sqrt(np.maximum(dvar, 0.0))
    lo, hi = b - z * se, b + z * se
    if S is None:
        return lo, hi
    S = np.asarray(S, dtype=np.float64)
    w = S @ b
    wvar = np.einsum("ij,jk,ik->i", S, V_b, S)
    wse = np.sqrt(np.maximum(wvar, 0.0))
    return lo, hi, w - z * wse, w + z * wse


def chi2_sf(T, df):
    """Survival function via the regularized upper incomplete gamma."""
    return float(gammaincc(df / 2.0, T / 2.0))


def t_sf(t, df):
    """One-tailed Student-t survival P(T_df > t)."""
    return float(stdtr(df, -t))


def wald_test(b, V_b):
    b = np.asarray(b, dtype=np.float64).ravel()
    V_b = np.asarray(V_b, dtype=np.float64)
    sol, _ = _sym_jitter_solve(V_b, b)
    T = float(b @ sol)
    return T, chi2_sf(T, b.size)


def permutation_test(predict_frames, val_stimulus, val_response, n_perm=100,
                     seed=0, rng=None):
    """Chance-level baseline by shuffling validation stimulus frames.

    predict_frames: callable mapping a stimulus frame array to a predicted
    response (it must rebuild its design internally). Each repetition
    permutes the frame order, predicts, and records the Pearson correlation
    with the unshuffled response. p is a one-tailed one-sample t-test of
    true_corr against the permuted correlations.
    """
    if n_perm < 10:
        raise DataError("insufficient permutations (minimum 10)")
    frames = np.asarray(getattr(val_stimulus, "arr", val_stimulus), dtype=np.float64)
    y = np.asarray(val_response, dtype=np.float64).ravel()
    if frames.shape[0] != y.size:
        raise DataError("validation stimulus and response length differ")
    if y.size == 0:
        raise DataError("validation set must be non-empty")
    rng = rng or Rng(seed, stream=0)

    def corr_or_zero(pred):
        if np.std(pred) == 0 or np.std(y) == 0:
            warnings.warn("zero-variance prediction; correlation set to 0")
            return 0.0
        return pearson(pred, y)

    true_corr = corr_or_zero(np.asarray(predict_frames(frames)).ravel())
    corrs = np.empty(n_perm)
    for i in range(n_perm):
        order = rng.substream(i).gen.permutation(frames.shape[0])
        pred = np.asarray(predict_frames(frames[order])).ravel()
        corrs[i] = corr_or_zero(pred)
    diffs = true_corr - corrs
    sd = diffs.std(ddof=1)
    if sd == 0:
        p = 1.0 if diffs.mean() <= 0 else 0.0
    else:
        t = diffs.mean() / (sd / np.sqrt(n_perm))
        p = t_sf(t, n_perm - 1)
    return corrs, float(p), float(true_corr)


def svd_split(w):
    """Split a 3D STRF into a temporal trace and a spatial frame.

    SVD of the (time x space) unfolding locates the dominant spatial pixel;
    the returned trace is the original STRF's time course at that pixel, and
    the returned frame is the original spatial slice at the trace extremum.
    """
    warr = np.asarray(getattr(w, "arr", w), dtype=np.float64)
    if warr.ndim != 3:
        raise DataError("svd_split expects a rank-3 tensor")
    if not np.any(warr):
        raise DataError("all-zero STRF")
    nt = warr.shape[0]
    U, s, Vt = np.linalg.svd(warr.reshape(nt, -1), full_matrices=False)
    spatial = Vt[0].reshape(warr.shape[1:])
    px, py = np.unravel_index(np.argmax(np.abs(spatial)), spatial.shape)
    trace = warr[:, px, py]
    t_ext = int(np.argmax(np.abs(trace)))
    frame = warr[t_ext]
    return trace, frame, (t_ext, int(px), int(py))
