"""Masked loss oracles for the factorized data term.

The data term is evaluated only on the observed index set Omega, so the
residual and all gradients are assembled as |Omega|-aligned value arrays.
No dense m x n product is ever formed: the factor gradients are computed as
sparse-times-dense products R @ Y and R.T @ X in O(|Omega| d) time.

All oracles are pure functions with fixed reduction orders, so a given
input always produces bit-identical output.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Entries per chunk when gathering factor rows; bounds peak memory of the
# |Omega| x d temporaries to ~128 MB for d = 16.
_CHUNK = 1 << 20


class ObservedMatrix:
    """Observed entries of an m x n matrix, stored as aligned triplet arrays.

    Parameters
    ----------
    m, n : int
        Matrix dimensions.
    rows, cols : int arrays, shape (nnz,)
        Indices of the observed entries. Duplicates are rejected.
    vals : float array, shape (nnz,)
        Observed values, aligned with ``rows``/``cols``.

    Row- and column-major index structures are built once and cached so that
    the sparse matrices needed for gradient assembly can be re-materialized
    cheaply with fresh values every iteration.
    """

    def __init__(self, m, n, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, vals must be 1-D arrays of equal length")
        if rows.size < 1:
            raise ValueError("no observations: |Omega| must be >= 1")
        if m < 1 or n < 1:
            raise ValueError("matrix dimensions must be positive")
        if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
            raise ValueError("observed index out of range")
        self.m = int(m)
        self.n = int(n)
        self.rows = rows
        self.cols = cols
        self.vals = vals
        # Row-major (CSR) ordering of the triplets, also used for the
        # duplicate check: equal adjacent (row, col) pairs after sorting.
        perm = np.lexsort((cols, rows))
        rs, cs = rows[perm], cols[perm]
        dup = (rs[1:] == rs[:-1]) & (cs[1:] == cs[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise ValueError(f"duplicate observed entry at ({rs[k]}, {cs[k]})")
        self._perm_r = perm
        self._indices_r = cs.astype(np.int32)
        self._indptr_r = np.concatenate(
            ([0], np.cumsum(np.bincount(rs, minlength=m)))
        ).astype(np.int64)
        # Column-major ordering, for the transpose product.
        perm_c = np.lexsort((rows, cols))
        self._perm_c = perm_c
        self._indices_c = rows[perm_c].astype(np.int32)
        self._indptr_c = np.concatenate(
            ([0], np.cumsum(np.bincount(cols[perm_c], minlength=n)))
        ).astype(np.int64)
        # Row-sorted flat positions, for the blocked-product fast path.
        self._rows_sorted = rs
        self._flat_sorted = rs * np.int64(n) + cs

    @property
    def nnz(self):
        return self.rows.size

    @property
    def shape(self):
        return (self.m, self.n)

    @classmethod
    def from_dense(cls, M, mask=None):
        """Build from a dense matrix; ``mask`` selects entries (default: all)."""
        M = np.asarray(M, dtype=np.float64)
        if mask is None:
            rows, cols = np.indices(M.shape)
            rows, cols = rows.ravel(), cols.ravel()
        else:
            rows, cols = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(M.shape[0], M.shape[1], rows, cols, M[rows, cols])

    def spmat(self, values):
        """CSR matrix with the given Omega-aligned values (cached structure)."""
        return sp.csr_matrix(
            (np.asarray(values, dtype=np.float64)[self._perm_r],
             self._indices_r, self._indptr_r),
            shape=(self.m, self.n),
        )

    def spmat_t(self, values):
        """CSR matrix of the transpose with the given Omega-aligned values."""
        return sp.csr_matrix(
            (np.asarray(values, dtype=np.float64)[self._perm_c],
             self._indices_c, self._indptr_c),
            shape=(self.n, self.m),
        )

    def to_dense(self, values=None):
        """Dense matrix with the given (default: observed) values on Omega."""
        out = np.zeros((self.m, self.n))
        out[self.rows, self.cols] = self.vals if values is None else values
        return out


@dataclass(frozen=True)
class LossKind:
    """Data-fit kind: plain squared loss or the Huber loss with scale delta."""

    tag: str
    delta: float = 0.0

    def __post_init__(self):
        if self.tag not in ("squared", "huber"):
            raise ValueError(f"unknown loss kind {self.tag!r}")
        if self.tag == "huber" and not self.delta > 0:
            raise ValueError("huber delta must be positive")

    @classmethod
    def squared(cls):
        return cls("squared")

    @classmethod
    def huber(cls, delta):
        return cls("huber", float(delta))


@dataclass(frozen=True)
class SparseResidual:
    """Omega-aligned values of (X Y^T + S - M) restricted to the observed set."""

    values: np.ndarray
    data: ObservedMatrix = field(repr=False)


def predicted_values(X, Y, data):
    """Omega-aligned values of X Y^T, i.e. <X_{i,:}, Y_{j,:}> for (i,j) in Omega.

    Two evaluation paths, chosen by density: a row-blocked matrix product
    with an entry gather when the mask covers a sizable fraction of the
    matrix (BLAS-fast; at most one block of rows is ever materialized), and
    a gathered row-product sum otherwise. Path choice depends only on the
    mask shape, so results are reproducible for a fixed dataset.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != data.m or Y.shape[0] != data.n or X.shape[1] != Y.shape[1]:
        raise ValueError(
            f"factor shapes {X.shape} x {Y.shape} inconsistent with data {data.shape}"
        )
    if data.m * data.n <= 8 * data.nnz:
        block = max(1, _CHUNK // data.n)
        out_sorted = np.empty(data.nnz)
        rows_sorted, flat = data._rows_sorted, data._flat_sorted
        starts = np.searchsorted(
            rows_sorted, np.arange(0, data.m + block, block))
        for bi, blo in enumerate(range(0, data.m, block)):
            s, e = starts[bi], starts[bi + 1]
            if s == e:
                continue
            Zb = X[blo: min(blo + block, data.m)] @ Y.T
            np.take(Zb.ravel(), flat[s:e] - blo * data.n, out=out_sorted[s:e])
        out = np.empty(data.nnz)
        out[data._perm_r] = out_sorted
        return out
    out = np.empty(data.nnz)
    for lo in range(0, data.nnz, _CHUNK):
        hi = min(lo + _CHUNK, data.nnz)
        np.einsum(
            "ij,ij->i", X[data.rows[lo:hi]], Y[data.cols[lo:hi]], out=out[lo:hi]
        )
    return out


def residual(X, Y, S_vals, data):
    """Residual (X Y^T + S - M) on Omega; S is given by its Omega-aligned values.

    Pass ``S_vals=None`` for S identically zero.
    """
    vals = predicted_values(X, Y, data)
    if S_vals is not None:
        S_vals = np.asarray(S_vals, dtype=np.float64)
        if S_vals.shape != (data.nnz,):
            raise ValueError("S_vals must be aligned with the observed entries")
        vals += S_vals
    vals -= data.vals
    return SparseResidual(vals, data)


def loss_value(res, kind):
    """f(Z, S) evaluated from the sparse residual: 0.5 * sum r^2, or sum huber(r)."""
    v = res.values
    if kind.tag == "squared":
        return 0.5 * float(np.dot(v, v))
    d = kind.delta
    a = np.abs(v)
    quad = a <= d
    return float(0.5 * np.dot(v[quad], v[quad]) + np.sum(d * (a[~quad] - 0.5 * d)))


def grad_sparse(res, kind):
    """Gradient of the loss w.r.t. S, restricted to Omega.

    For the squared loss this is the residual itself; for Huber, the clipped
    derivative (the kink takes the linear-branch value). Off Omega the
    gradient vanishes identically and is not represented.
    """
    if kind.tag == "squared":
        return res.values.copy()
    return np.clip(res.values, -kind.delta, kind.delta)


def grad_factors(res, X, Y):
    """Factor gradients (G_X, G_Y) = (R Y, R^T X) for the sparse matrix R.

    ``res.values`` must already hold the loss derivative at the residual
    (for the squared loss that is the residual itself; see ``grad_sparse``).
    Cost O(|Omega| d); no dense m x n matrix is materialized.
    """
    data = res.data
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != data.m or Y.shape[0] != data.n or X.shape[1] != Y.shape[1]:
        raise ValueError("factor shapes inconsistent with residual support")
    G_X = data.spmat(res.values) @ Y
    G_Y = data.spmat_t(res.values) @ X
    return G_X, G_Y
