"""Time-lagged design matrices, data splits, and structured projections.

build_design materializes X explicitly (row t = frames t-n_lags+1 .. t,
zero-padded before t=0, flattened in STRF axis order with the oldest lag
first). spline_design computes Z = X S without materializing X by projecting
each spatial frame onto the per-dimension bases and contracting the lag
window with the temporal basis; that is what makes 25^3-scale problems fit
in memory. drive computes X w the same way.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError

# explicit design matrices beyond this are almost certainly a mistake
MAX_DESIGN_ELEMENTS = 300_000_000


@dataclass
class DesignMatrix:
    X: np.ndarray
    n_lags: int
    delta_t: float


@dataclass
class DataSplit:
    train: tuple
    validation: tuple
    test: list

    def all_ranges(self):
        return [self.train, self.validation] + list(self.test)


def _frames2d(stimulus):
    arr = np.ascontiguousarray(np.asarray(stimulus, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr.reshape(arr.shape[0], -1), arr.shape[1:]


def build_design(stimulus, n_lags, delta_t=0.033):
    frames, _ = _frames2d(getattr(stimulus, "arr", stimulus))
    T, p = frames.shape
    n_lags = int(n_lags)
    if n_lags < 1:
        raise DataError("n_lags must be >= 1")
    if n_lags > T:
        raise DataError(f"n_lags={n_lags} exceeds the {T} available samples")
    if T * n_lags * p > MAX_DESIGN_ELEMENTS:
        raise DataError(
            "design too large to materialize; use the structured spline path"
        )
    X = _kernels.lag_design(frames, n_lags)
    return DesignMatrix(X=X, n_lags=n_lags, delta_t=float(delta_t))


def split(n_samples, train_len, val_len, n_test_blocks, test_len):
    need = train_len + val_len + n_test_blocks * test_len
    if min(train_len, val_len, test_len) <= 0 or n_test_blocks < 0:
        raise DataError("split lengths must be positive")
    if need > n_samples:
        raise DataError(
            f"insufficient samples: need {need}, have {n_samples}"
        )
    train = (0, train_len)
    val = (train_len, train_len + val_len)
    tests = []
    start = val[1]
    for _ in range(n_test_blocks):
        tests.append((start, start + test_len))
        start += test_len
    return DataSplit(train=train, validation=val, test=tests)


def spline_design(stimulus, basis):
    """Z = X S computed per dimension; rows align with build_design rows."""
    frames, spatial = _frames2d(getattr(stimulus, "arr", stimulus))
    nums = basis.nums
    if tuple(nums[1:]) != tuple(spatial) and not (len(nums) == 1 and spatial in ((), (1,))):
        raise DataError(
            f"basis spatial dims {tuple(nums[1:])} do not match stimulus {tuple(spatial)}"
        )
    T = frames.shape[0]
    n_lags = nums[0]
    if n_lags > T:
        raise DataError(f"n_lags={n_lags} exceeds the {T} available samples")
    St = basis.per_dim[0]
    # project each frame onto the spatial bases
    G = frames
    if len(basis.per_dim) == 2:
        G = frames @ basis.per_dim[1]
    elif len(basis.per_dim) == 3:
        tmp = np.tensordot(frames.reshape((T,) + tuple(spatial)), basis.per_dim[1], axes=(1, 0))
        G = np.tensordot(tmp, basis.per_dim[2], axes=(1, 0)).reshape(T, -1)
    m = G.shape[1] if G.ndim > 1 else 1
    lagged = _kernels.lag_design(G.reshape(T, m), n_lags).reshape(T, n_lags, m)
    Z = np.tensordot(lagged, St, axes=(1, 0))        # (T, m, df_t)
    Z = np.moveaxis(Z, 2, 1).reshape(T, St.shape[1] * m)
    return Z


def drive(stimulus, w):
    """X w without materializing X; w shaped (n_lags, *spatial dims)."""
    frames, spatial = _frames2d(getattr(stimulus, "arr", stimulus))
    warr = np.asarray(getattr(w, "arr", w), dtype=np.float64)
    if warr.ndim == 1 and frames.shape[1] == 1:
        warr = warr[:, None]
    n_lags = warr.shape[0]
    wmat = warr.reshape(n_lags, -1)
    if wmat.shape[1] != frames.shape[1]:
        raise DataError("filter spatial size does not match stimulus")
    T = frames.shape[0]
    P = frames @ wmat.T                              # (T, n_lags)
    out = np.zeros(T)
    for l in range(n_lags):
        shift = n_lags - 1 - l
        if shift == 0:
            out += P[:, l]
        else:
            out[shift:] += P[:-shift, l]
    return out
