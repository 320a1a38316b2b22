"""Dense and CSR-sparse matrix arithmetic, plus a small symmetric eigensolver.

Dense matrices are plain 2-D float64 numpy arrays. Sparse operators are
:class:`CsrMatrix`, a validated CSR container; products go through scipy's
compiled CSR kernels. The Jacobi eigensolver is deliberately simple and is
used only as a test oracle on small matrices (n <= 256).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .validation import check_dense, check_symmetric

EIG_ORACLE_MAX_N = 256
JACOBI_MAX_SWEEPS = 100
LAMBDA_MAX_TOL = 1e-6
LAMBDA_MAX_ITERS = 10_000


class SparseShapeError(ValueError):
    """Dimension mismatch in a sparse-dense product."""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed-sparse-row matrix with validated structure.

    Invariants: ``row_ptr`` is non-decreasing with ``row_ptr[rows] == nnz``,
    column indices are strictly increasing within each row, and no explicit
    zeros are stored. ``symmetric=True`` additionally asserts that every
    stored value equals its transposed counterpart.
    """

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _scipy: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)
        self._validate()
        handle = sp.csr_matrix((values, col_idx, row_ptr), shape=(self.rows, self.cols))
        object.__setattr__(self, "_scipy", handle)

    def _validate(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if self.row_ptr.shape != (self.rows + 1,):
            raise ValueError("row_ptr must have length rows + 1")
        if self.row_ptr[0] != 0 or np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing and start at 0")
        nnz = int(self.row_ptr[-1])
        if self.col_idx.shape != (nnz,) or self.values.shape != (nnz,):
            raise ValueError("col_idx/values length must equal row_ptr[rows]")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise ValueError("column index out of range")
            for r in range(self.rows):
                lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
                if hi - lo > 1 and np.any(np.diff(self.col_idx[lo:hi]) <= 0):
                    raise ValueError(f"column indices not strictly increasing in row {r}")
            if np.any(self.values == 0.0):
                raise ValueError("explicit zeros are not allowed")
            if not np.all(np.isfinite(self.values)):
                raise ValueError("values must be finite")
        if self.symmetric:
            if self.rows != self.cols:
                raise ValueError("symmetric flag requires a square matrix")
            t = self.to_scipy().T.tocsr()
            t.sort_indices()
            if not (
                np.array_equal(t.indptr, self.row_ptr)
                and np.array_equal(t.indices, self.col_idx)
                and np.array_equal(t.data, self.values)
            ):
                raise ValueError("symmetric flag set but values differ from transpose")

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_scipy(self) -> sp.csr_matrix:
        return self._scipy

    def to_dense(self) -> np.ndarray:
        return self._scipy.toarray().astype(np.float64)

    def transpose(self) -> "CsrMatrix":
        if self.symmetric:
            return self
        t = self._scipy.T.tocsr()
        t.sort_indices()
        return CsrMatrix.from_scipy(t)

    def diagonal(self) -> np.ndarray:
        return self._scipy.diagonal().astype(np.float64)

    @staticmethod
    def from_scipy(m, symmetric: bool = False) -> "CsrMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        return CsrMatrix(
            rows=m.shape[0],
            cols=m.shape[1],
            row_ptr=m.indptr.astype(np.int64),
            col_idx=m.indices.astype(np.int64),
            values=m.data.astype(np.float64),
            symmetric=symmetric,
        )

    @staticmethod
    def from_coo(rows, cols, r, c, v, symmetric: bool = False) -> "CsrMatrix":
        """Build from coordinate triplets; duplicates are summed, zeros dropped."""
        m = sp.coo_matrix((np.asarray(v, dtype=np.float64), (r, c)), shape=(rows, cols))
        return CsrMatrix.from_scipy(m.tocsr(), symmetric=symmetric)

    @staticmethod
    def from_dense(A, symmetric: bool = False) -> "CsrMatrix":
        return CsrMatrix.from_scipy(sp.csr_matrix(np.asarray(A, dtype=np.float64)), symmetric=symmetric)

    @staticmethod
    def identity(n: int) -> "CsrMatrix":
        return CsrMatrix.from_scipy(sp.identity(n, format="csr"), symmetric=True)

    @staticmethod
    def zeros(rows: int, cols: int) -> "CsrMatrix":
        return CsrMatrix(
            rows=rows,
            cols=cols,
            row_ptr=np.zeros(rows + 1, dtype=np.int64),
            col_idx=np.zeros(0, dtype=np.int64),
            values=np.zeros(0, dtype=np.float64),
            symmetric=rows == cols,
        )


class EigenDecomposition(NamedTuple):
    """Eigenvalues in ascending order with orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class EigNonConvergence(RuntimeError):
    """Jacobi sweeps exhausted before the off-diagonal norm fell below tol."""


def spmm(S: CsrMatrix, X: np.ndarray) -> np.ndarray:
    """Sparse-dense product S @ X."""
    X = check_dense(X, "X", allow_1d=True)
    if S.cols != X.shape[0]:
        raise SparseShapeError(f"cannot multiply {S.shape} by {X.shape}")
    out = S.to_scipy() @ X
    return np.asarray(out, dtype=np.float64)


def _offdiag_norm(A: np.ndarray) -> float:
    off = A - np.diag(np.diag(A))
    return float(np.sqrt(np.sum(off * off)))


def symmetric_eig(A, tol: float = 1e-10) -> EigenDecomposition:
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Stops once the off-diagonal Frobenius norm drops below ``tol``; raises
    :class:`EigNonConvergence` after 100 sweeps. Intended as an oracle, so the
    input size is capped at 256.
    """
    A = check_symmetric(A, "A", tol=1e-12)
    n = A.shape[0]
    if n > EIG_ORACLE_MAX_N:
        raise ValueError(f"oracle eigensolver capped at n <= {EIG_ORACLE_MAX_N}, got {n}")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n <= 1:
        return EigenDecomposition(np.diag(A).copy(), V)

    for _ in range(JACOBI_MAX_SWEEPS):
        if _offdiag_norm(A) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # Two-sided rotation in the (p, q) plane: A <- J^T A J, V <- V J.
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise EigNonConvergence(
            f"off-diagonal norm {_offdiag_norm(A):.3e} after {JACOBI_MAX_SWEEPS} sweeps"
        )

    eigenvalues = np.diag(A).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], V[:, order])


def estimate_lambda_max(
    S: CsrMatrix,
    tol: float = LAMBDA_MAX_TOL,
    max_iters: int = LAMBDA_MAX_ITERS,
) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Emits a warning and returns the best iterate if the Rayleigh quotient has
    not stabilized within ``max_iters``.
    """
    if S.rows != S.cols:
        raise ValueError("lambda_max requires a square operator")
    n = S.rows
    if n == 0:
        return 0.0
    if S.nnz == 0:
        return 0.0
    # Fixed internal seed: deterministic, and a random start vector avoids
    # starting orthogonal to the top eigenvector (e.g. the constant vector
    # on a bipartite Laplacian).
    rng = np.random.Generator(np.random.PCG64(0x1A2B3C4D))
    v = rng.uniform(-1.0, 1.0, size=n)
    v /= np.linalg.norm(v)
    handle = S.to_scipy()
    lam = 0.0
    for _ in range(max_iters):
        w = handle @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # v landed in the null space; restart from a fresh direction.
            v = rng.uniform(-1.0, 1.0, size=n)
            v /= np.linalg.norm(v)
            continue
        v_next = w / norm
        lam_next = float(v_next @ (handle @ v_next))
        if abs(lam_next - lam) <= tol * max(abs(lam_next), 1e-30):
            return lam_next
        v, lam = v_next, lam_next
    warnings.warn(
        f"power iteration did not converge within {max_iters} iterations; "
        f"returning best estimate {lam:.6g}",
        RuntimeWarning,
    )
    return lam
