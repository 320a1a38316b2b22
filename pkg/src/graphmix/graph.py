"""Undirected weighted graphs and the derived operators the filters run on."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import CsrMatrix, spmm
from .validation import check_dense


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph held as a symmetric CSR adjacency.

    Edge weights are non-negative, the diagonal is zero, and isolated
    vertices are allowed. ``vertex_positions`` (n x 2) is present for grid
    and superpixel graphs and absent for citation graphs.
    """

    adjacency: CsrMatrix
    vertex_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        A = self.adjacency
        if A.rows != A.cols:
            raise ValueError("adjacency must be square")
        if not A.symmetric:
            raise ValueError("adjacency must carry the symmetric flag")
        if A.nnz and A.values.min() < 0:
            raise ValueError("edge weights must be non-negative")
        if np.any(A.diagonal() != 0.0):
            raise ValueError("adjacency diagonal must be zero")
        if self.vertex_positions is not None:
            pos = check_dense(self.vertex_positions, "vertex_positions")
            if pos.shape != (A.rows, 2):
                raise ValueError(f"vertex_positions must be ({A.rows}, 2), got {pos.shape}")
            object.__setattr__(self, "vertex_positions", pos)

    @property
    def n(self) -> int:
        return self.adjacency.rows

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (each stored twice in the adjacency)."""
        return self.adjacency.nnz // 2

    @staticmethod
    def from_edges(
        n: int,
        edges: Sequence[tuple[int, int]] | np.ndarray,
        weights=None,
        positions=None,
    ) -> "Graph":
        """Build from undirected edge pairs; duplicates are summed."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed in the adjacency")
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
        r = np.concatenate([edges[:, 0], edges[:, 1]])
        c = np.concatenate([edges[:, 1], edges[:, 0]])
        v = np.concatenate([w, w])
        adj = CsrMatrix.from_coo(n, n, r, c, v, symmetric=True)
        return Graph(adjacency=adj, vertex_positions=positions)

    def undirected_edge_list(self) -> np.ndarray:
        """Edges as (u, v) pairs with u < v, sorted lexicographically."""
        coo = self.adjacency.to_scipy().tocoo()
        mask = coo.row < coo.col
        pairs = np.stack([coo.row[mask], coo.col[mask]], axis=1).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]


def degrees(g: Graph) -> np.ndarray:
    """Weighted vertex degrees d_i = sum_j w_ij."""
    return np.asarray(g.adjacency.to_scipy().sum(axis=1)).ravel().astype(np.float64)


def laplacian(g: Graph) -> CsrMatrix:
    """Unnormalized Laplacian: degree matrix minus adjacency."""
    d = degrees(g)
    L = sp.diags(d) - g.adjacency.to_scipy()
    return CsrMatrix.from_scipy(L.tocsr(), symmetric=True)


def rescaled_laplacian(L: CsrMatrix, lambda_max: float) -> CsrMatrix:
    """Affine rescaling (2 / lambda_max) L - I, mapping the spectrum into [-1, 1]."""
    if lambda_max <= 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    M = (2.0 / lambda_max) * L.to_scipy() - sp.identity(L.rows, format="csr")
    return CsrMatrix.from_scipy(M.tocsr(), symmetric=True)


def renormalized_adjacency(g: Graph) -> CsrMatrix:
    """Self-loop-augmented, symmetrically normalized adjacency.

    With W~ = W + I the degrees are taken over the full rows of W~ (self-loop
    included), which keeps the largest eigenvalue at most 1.
    """
    W_tilde = g.adjacency.to_scipy() + sp.identity(g.n, format="csr")
    d_tilde = np.asarray(W_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(d_tilde)
    A_hat = sp.diags(inv_sqrt) @ W_tilde @ sp.diags(inv_sqrt)
    return CsrMatrix.from_scipy(A_hat.tocsr(), symmetric=True)


def random_walk_matrix(g: Graph) -> CsrMatrix:
    """Row-stochastic transition matrix; rows of degree-0 vertices stay zero."""
    d = degrees(g)
    inv = np.zeros_like(d)
    pos = d > 0
    inv[pos] = 1.0 / d[pos]
    P = sp.diags(inv) @ g.adjacency.to_scipy()
    return CsrMatrix.from_scipy(P.tocsr(), symmetric=False)


def walk_powers(P: CsrMatrix, r: int, F: np.ndarray) -> list[np.ndarray]:
    """[F, PF, ..., P^(r-1) F] by repeated products, never materializing P^j."""
    if r < 1:
        raise ValueError("r must be at least 1")
    F = check_dense(F, "F")
    out = [F]
    for _ in range(r - 1):
        out.append(spmm(P, out[-1]))
    return out
