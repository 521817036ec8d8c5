"""Natural cubic spline (cardinal) bases and their tensor products.

The 1D basis follows the standard natural-spline construction: with knots
x_0 < ... < x_{k-1} and gaps h_j = x_{j+1} - x_j, the curvature map F solves
the tridiagonal system B F = D (zero curvature rows appended at both ends),
and the value of the cardinal basis at a point x in [x_j, x_{j+1}] is

    a-(x) e_j + a+(x) e_{j+1} + c-(x) F_j + c+(x) F_{j+1}

with the piecewise-cubic weights a+-, c+- below. Column i is then the natural
cubic spline interpolating 1 at knot i and 0 at all others. Evaluation points
are the integer sample indices 0..num_points-1, knots equally spaced over the
same range, so df is the only hyperparameter.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .tensor import Tensor


def _curvature_map(knots):
    # F maps knot values to second derivatives at the knots (k x k),
    # first and last rows zero (natural boundary).
    k = len(knots)
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < k - 3:
            B[i, i + 1] = h[i + 1] / 6.0
            B[i + 1, i] = h[i + 1] / 6.0
    F = np.zeros((k, k))
    F[1:-1] = np.linalg.solve(B, D)
    return F


def cr_basis_at(xs, knots):
    """Rows of the cardinal natural-cubic basis at arbitrary points xs."""
    knots = np.asarray(knots, dtype=np.float64)
    k = len(knots)
    if k < 3:
        raise DataError("need at least 3 knots")
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    if xs.min() < knots[0] - 1e-9 or xs.max() > knots[-1] + 1e-9:
        raise DataError("evaluation points outside the knot span")
    F = _curvature_map(knots)
    j = np.clip(np.searchsorted(knots, xs, side="right") - 1, 0, k - 2)
    h = knots[j + 1] - knots[j]
    dl = xs - knots[j]
    dr = knots[j + 1] - xs
    am = dr / h
    ap = dl / h
    cm = (dr ** 3 / h - h * dr) / 6.0
    cp = (dl ** 3 / h - h * dl) / 6.0
    S = np.zeros((len(xs), k))
    rows = np.arange(len(xs))
    S[rows, j] += am
    S[rows, j + 1] += ap
    S += cm[:, None] * F[j] + cp[:, None] * F[j + 1]
    return S


def cr_knots(num_points, df):
    return np.linspace(0.0, num_points - 1.0, df)


def cr_basis_1d(num_points, df):
    """num_points x df cardinal basis sampled at integer indices."""
    num_points = int(num_points)
    df = int(df)
    if df < 3:
        raise DataError(f"df must be at least 3, got {df}")
    if df > num_points:
        raise DataError(f"df={df} exceeds num_points={num_points}")
    return cr_basis_at(np.arange(num_points, dtype=np.float64), cr_knots(num_points, df))


@dataclass
class SplineBasis:
    dims: list                 # [(num_points, df), ...] in time, x, y order
    per_dim: list              # basis matrix per dimension
    knots: list                # knot vector per dimension
    _full: np.ndarray = field(default=None, repr=False)

    @property
    def nums(self):
        return [n for n, _ in self.dims]

    @property
    def dfs(self):
        return [d for _, d in self.dims]

    @property
    def n_coef(self):
        return int(np.prod(self.dfs))

    @property
    def n_points(self):
        return int(np.prod(self.nums))

    @property
    def full(self):
        # Kronecker product in dimension order; built on first use since the
        # structured per-dimension path rarely needs it.
        if self._full is None:
            full = self.per_dim[0]
            for S in self.per_dim[1:]:
                full = np.kron(full, S)
            self._full = full
        return self._full


def tensor_basis(dims):
    dims = [(int(n), int(d)) for n, d in dims]
    if not 1 <= len(dims) <= 3:
        raise DataError("tensor_basis supports 1 to 3 dimensions")
    per_dim = [cr_basis_1d(n, d) for n, d in dims]
    knots = [cr_knots(n, d) for n, d in dims]
    return SplineBasis(dims=dims, per_dim=per_dim, knots=knots)


def expand(basis, b):
    """w = S b, reshaped to the sample grid. Contracted per dimension."""
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.size != basis.n_coef:
        raise DataError(f"expected {basis.n_coef} coefficients, got {b.size}")
    w = b.reshape(basis.dfs)
    for ax, S in enumerate(basis.per_dim):
        w = np.moveaxis(np.tensordot(S, w, axes=(1, ax)), 0, ax)
    return Tensor(w, labels=["time", "x", "y"][: len(basis.dims)])
