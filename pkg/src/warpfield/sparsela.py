"""Minimal sparse linear algebra: CSR matrices and an SPD direct solver.

Thin, contract-checked wrappers over scipy.sparse.  The factorization uses
SuperLU in symmetric mode with a minimum-degree ordering and no pivoting,
which on an SPD input is a Cholesky-style LDL^T decomposition; a negative
or zero pivot certifies the input was not positive definite (typically a
Laplacian that was never pinned).  A diagonally preconditioned conjugate
gradient solver is available as a factor-free fallback for meshes too
large to factorize.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotSpdError

_SYMMETRY_TOL = 1e-12


class SparseMatrix:
    """Immutable CSR matrix with sorted, deduplicated column indices."""

    def __init__(self, csr):
        csr = csr.tocsr()
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.nnz and not np.all(np.isfinite(csr.data)):
            raise ValueError("sparse matrix contains non-finite values")
        self._csr = csr

    @classmethod
    def from_triplets(cls, n_rows, n_cols, triplets):
        """Build from (i, j, value) triplets; duplicate entries are summed."""
        if triplets:
            rows, cols, vals = zip(*triplets)
            rows = np.asarray(rows, dtype=np.int64)
            cols = np.asarray(cols, dtype=np.int64)
            if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
                raise ValueError("row index out of range")
            if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
                raise ValueError("column index out of range")
            vals = np.asarray(vals, dtype=np.float64)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0, dtype=np.float64)
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
        return cls(coo.tocsr())

    @classmethod
    def from_arrays(cls, n_rows, n_cols, rows, cols, values):
        """Vectorized variant of :meth:`from_triplets`."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("column index out of range")
        coo = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
        return cls(coo.tocsr())

    @classmethod
    def diagonal(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(sp.diags(values).tocsr())

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self):
        return self._csr.nnz

    @property
    def row_offsets(self):
        return self._csr.indptr

    @property
    def column_indices(self):
        return self._csr.indices

    @property
    def values(self):
        return self._csr.data

    @property
    def T(self):
        return SparseMatrix(self._csr.T.tocsr())

    def scipy(self):
        return self._csr

    def toarray(self):
        return self._csr.toarray()

    def submatrix(self, row_keep, col_keep):
        return SparseMatrix(self._csr[np.ix_(row_keep, col_keep)].tocsr())

    def __matmul__(self, other):
        return multiply(self, other)


def multiply(a, b):
    """Exact product of a SparseMatrix with a SparseMatrix or dense block."""
    if isinstance(b, SparseMatrix):
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
        return SparseMatrix(a.scipy() @ b.scipy())
    dense = np.asarray(b, dtype=np.float64)
    if a.shape[1] != dense.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {dense.shape}")
    return a.scipy() @ dense


class SpdFactor:
    """Reusable factorization of a symmetric positive definite matrix."""

    def __init__(self, splu_factor, n):
        self._lu = splu_factor
        self.n = n

    @property
    def permutation(self):
        """Fill-reducing ordering p: A[p][:, p] = L L^T for the lower factor."""
        import numpy as _np

        return _np.argsort(self._lu.perm_c)

    @property
    def lower(self):
        """Lower-triangular Cholesky factor of the permuted matrix (L*sqrt(D))."""
        d = np.sqrt(self._lu.U.diagonal())
        return SparseMatrix((self._lu.L @ sp.diags(d)).tocsr())

    def solve(self, rhs):
        """Solve A x = rhs for one vector or an (n, k) block."""
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {self.n}")
        return self._lu.solve(rhs)


def cholesky(a):
    """Factor an SPD :class:`SparseMatrix` for repeated solves.

    Raises
    ------
    NotSpdError
        If the matrix is not symmetric, is singular, or produces a
        non-positive pivot (the signature of a missing pin).
    """
    n_rows, n_cols = a.shape
    if n_rows != n_cols:
        raise NotSpdError(f"matrix is not square: {a.shape}")
    csr = a.scipy()
    asym = abs(csr - csr.T)
    max_asym = asym.max() if asym.nnz else 0.0
    scale = abs(csr).max() if csr.nnz else 1.0
    if max_asym > _SYMMETRY_TOL * max(scale, 1.0):
        raise NotSpdError(f"matrix is not symmetric (max asymmetry {max_asym:.3e})")
    try:
        lu = spla.splu(
            csr.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise NotSpdError(f"factorization failed: {exc}") from exc
    pivots = lu.U.diagonal()
    if np.any(pivots <= 0.0) or not np.all(np.isfinite(pivots)):
        raise NotSpdError(
            "non-positive pivot encountered: matrix is not positive definite "
            "(is the system pinned?)"
        )
    # a pivot collapsing by ~machine epsilon marks numerical singularity
    # (the constant null space of an unpinned Laplacian)
    if pivots.min() <= 1e-12 * pivots.max():
        raise NotSpdError(
            f"matrix is numerically singular (pivot ratio "
            f"{pivots.min() / pivots.max():.2e}); is the system pinned?"
        )
    return SpdFactor(lu, n_rows)


def solve(factor, rhs):
    """Solve against a prepared :class:`SpdFactor` (unlimited reuse)."""
    return factor.solve(rhs)


class CgSolver:
    """Jacobi-preconditioned conjugate gradient with the SpdFactor interface.

    Fallback for systems too large to factorize directly; tolerance chosen
    to meet the same 1e-10 relative-residual contract as the direct path.
    """

    def __init__(self, a, rtol=1e-12, maxiter=None):
        n_rows, n_cols = a.shape
        if n_rows != n_cols:
            raise NotSpdError(f"matrix is not square: {a.shape}")
        self._a = a.scipy()
        diag = self._a.diagonal()
        if np.any(diag <= 0):
            raise NotSpdError("non-positive diagonal entry; not SPD")
        self._precond = spla.LinearOperator(
            a.shape, matvec=lambda x: x / diag, dtype=np.float64
        )
        self.n = n_rows
        self.rtol = rtol
        self.maxiter = maxiter if maxiter is not None else 20 * n_rows

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {self.n}")
        single = rhs.ndim == 1
        block = rhs[:, None] if single else rhs
        out = np.empty_like(block)
        for k in range(block.shape[1]):
            x, info = spla.cg(
                self._a, block[:, k], rtol=self.rtol, atol=0.0,
                maxiter=self.maxiter, M=self._precond,
            )
            if info != 0:
                raise NotSpdError(f"conjugate gradient did not converge (info={info})")
            out[:, k] = x
        return out[:, 0] if single else out
