"""Small dense linear-algebra helpers shared across modules."""
from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.linalg import blas

__all__ = ["HouseholderProduct", "StackedRows", "haar_orthogonal", "spectral_matrix", "symmetrize_inplace", "is_symmetric"]

_SYM_BLOCK = 1024


def is_symmetric(M: np.ndarray, rtol: float = 1e-10) -> bool:
    """``max|M - M^T| <= rtol * max(max|M|, 1)``, checked blockwise to avoid n x n temporaries."""
    n = M.shape[0]
    defect = scale = 0.0
    for i in range(0, n, _SYM_BLOCK):
        ib = slice(i, min(i + _SYM_BLOCK, n))
        for j in range(i, n, _SYM_BLOCK):
            jb = slice(j, min(j + _SYM_BLOCK, n))
            defect = max(defect, float(np.abs(M[ib, jb] - M[jb, ib].T).max()))
            scale = max(scale, float(np.abs(M[ib, jb]).max()), float(np.abs(M[jb, ib]).max()))
    return defect <= rtol * max(scale, 1.0)


def symmetrize_inplace(M: np.ndarray, from_lower: bool = False) -> np.ndarray:
    """Replace ``M`` by ``(M + M^T) / 2`` (or mirror its lower triangle) without an n x n temporary."""
    n = M.shape[0]
    for i in range(0, n, _SYM_BLOCK):
        ib = slice(i, min(i + _SYM_BLOCK, n))
        D = M[ib, ib]
        if from_lower:
            D[...] = np.tril(D) + np.tril(D, -1).T
        else:
            D[...] = 0.5 * (D + D.T)
        for j in range(i + _SYM_BLOCK, n, _SYM_BLOCK):
            jb = slice(j, min(j + _SYM_BLOCK, n))
            if from_lower:
                M[ib, jb] = M[jb, ib].T
            else:
                avg = 0.5 * (M[ib, jb] + M[jb, ib].T)
                M[ib, jb] = avg
                M[jb, ib] = avg.T
    return M


class HouseholderProduct:
    """Orthogonal matrix ``Q = H_1 H_2 ... H_k`` stored in compact WY form.

    ``Q = I - Y W Y^T`` with ``Y`` of shape ``(n, k)`` and ``W`` upper
    triangular.  Products with a block of vectors cost ``O(n k)`` per vector,
    which is what makes random ``n = 10**4`` problems affordable.  ``Q.T``
    returns the transpose as another ``HouseholderProduct``.
    """

    # make ``ndarray @ Q`` dispatch to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, Y: np.ndarray, W: np.ndarray, transposed: bool = False):
        self.Y = Y
        self.W = W
        self.transposed = transposed

    @classmethod
    def random(cls, n: int, k: int, rng: np.random.Generator) -> "HouseholderProduct":
        Y = np.zeros((n, k))
        W = np.zeros((k, k))
        for j in range(k):
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            if j:
                W[:j, j] = -2.0 * W[:j, :j] @ (Y[:, :j].T @ v)
            W[j, j] = 2.0
            Y[:, j] = v
        return cls(Y, W)

    @property
    def shape(self) -> tuple[int, int]:
        n = self.Y.shape[0]
        return (n, n)

    @property
    def T(self) -> "HouseholderProduct":
        return HouseholderProduct(self.Y, self.W, not self.transposed)

    def _core(self) -> np.ndarray:
        return self.W.T if self.transposed else self.W

    def __matmul__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X - self.Y @ (self._core() @ (self.Y.T @ X))

    def __rmatmul__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X - ((X @ self.Y) @ self._core()) @ self.Y.T

    def toarray(self) -> np.ndarray:
        return self @ np.eye(self.shape[0])


def haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR with the sign correction of Mezzadri."""
    z = rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * np.sign(np.diag(r))


def spectral_matrix(Q, eigvals: np.ndarray) -> np.ndarray:
    """Dense symmetric ``Q diag(eigvals) Q^T`` for a dense or Householder ``Q``."""
    eigvals = np.asarray(eigvals, dtype=float)
    if isinstance(Q, HouseholderProduct):
        # Q = I - V Y^T with V = Y W
        Y = Q.Y
        W = Y @ Q._core()
        Z = eigvals[:, None] * Y
        R = W @ (Y.T @ Z)
        left = np.hstack([R - Z, -W])
        right = np.hstack([W, Z])
        M = left @ right.T
        M[np.diag_indices_from(M)] += eigvals
        return symmetrize_inplace(M)
    return symmetrize_inplace((Q * eigvals) @ Q.T)


class StackedRows:
    """Vertical stack of dense and sparse row blocks acting as one ``(M, n)`` matrix.

    Keeps a dense tangent block next to sparse box rows without densifying
    the latter, and computes ``G^T diag(w) G`` in row chunks so no scaled copy
    of a large dense block is ever formed.
    """

    chunk_rows = 2048

    def __init__(self, blocks, n: int | None = None):
        blocks = [b if sparse.issparse(b) else np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
        if n is None:
            if not blocks:
                raise ValueError("cannot infer the column count of an empty stack")
            n = blocks[0].shape[1]
        for blk in blocks:
            if blk.shape[1] != n:
                raise ValueError(f"row block has {blk.shape[1]} columns, expected {n}")
        self.blocks = [b for b in blocks if b.shape[0] > 0]
        self.n = n
        self.offsets = np.cumsum([0] + [b.shape[0] for b in self.blocks])

    @classmethod
    def wrap(cls, G, n: int | None = None) -> "StackedRows":
        if isinstance(G, cls):
            return G
        if G is None:
            return cls([], n=n)
        if not sparse.issparse(G):
            G = np.asarray(G, dtype=float)
            if G.size == 0:
                return cls([], n=n if n is not None else (G.shape[1] if G.ndim == 2 else 0))
        return cls([G], n=n)

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.offsets[-1]), self.n)

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.blocks:
            return np.zeros((0,) + x.shape[1:])
        return np.concatenate([np.asarray(b @ x) for b in self.blocks])

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """``G^T y``."""
        out = np.zeros(self.n)
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            out += np.asarray(blk.T @ y[lo:hi]).reshape(-1)
        return out

    def row_norms(self) -> np.ndarray:
        parts = []
        for blk in self.blocks:
            if sparse.issparse(blk):
                parts.append(np.sqrt(np.asarray(blk.multiply(blk).sum(axis=1)).reshape(-1)))
            else:
                parts.append(np.sqrt(np.einsum("ij,ij->i", blk, blk)))
        return np.concatenate(parts) if parts else np.zeros(0)

    def gram(self, weights: np.ndarray | None = None, lower_only: bool = False) -> np.ndarray:
        """Dense ``G^T diag(weights) G`` (``weights`` default to ones).

        The result is Fortran-ordered.  Dense blocks go through a rank-k
        update of the lower triangle; with ``lower_only`` the upper triangle
        is left partially filled, which is enough for a lower Cholesky.
        """
        M = self.shape[0]
        w = np.ones(M) if weights is None else np.asarray(weights, dtype=float)
        out = np.zeros((self.n, self.n), order="F")
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            wb = w[lo:hi]
            if sparse.issparse(blk):
                prod = sparse.coo_matrix(blk.T @ sparse.diags(wb) @ blk)
                np.add.at(out, (prod.row, prod.col), prod.data)
                continue
            sw = np.sqrt(wb)
            for start in range(0, blk.shape[0], self.chunk_rows):
                chunk = blk[start:start + self.chunk_rows] * sw[start:start + self.chunk_rows, None]
                # chunk.T is Fortran-contiguous, so syrk reads it without a copy
                out = blas.dsyrk(1.0, chunk.T, beta=1.0, c=out, trans=0, lower=1, overwrite_c=1)
        if not lower_only:
            symmetrize_inplace(out, from_lower=True)
        return out

    def take(self, rows: np.ndarray) -> np.ndarray:
        """Dense copy of the selected rows."""
        rows = np.asarray(rows, dtype=np.int64)
        out = np.zeros((len(rows), self.n))
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            sel = (rows >= lo) & (rows < hi)
            if sel.any():
                sub = blk[rows[sel] - lo]
                out[sel] = sub.toarray() if sparse.issparse(sub) else sub
        return out

    def permute(self, perm: np.ndarray) -> "StackedRows":
        return StackedRows([self.take(perm)], n=self.n)

    def toarray(self) -> np.ndarray:
        return self.take(np.arange(self.shape[0]))
