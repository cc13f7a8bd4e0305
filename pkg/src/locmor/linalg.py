"""Small dense/sparse linear algebra helpers shared by the algorithms."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

REORTH_RATIO = 0.1
REJECT_RATIO = 1e-10


def _apply(M, x):
    return M @ x


def inner(M, x, y):
    return float(x @ _apply(M, y))


def norm(M, x):
    return float(np.sqrt(max(inner(M, x, x), 0.0)))


def gram_schmidt_vector(basis, v, M, reorth=REORTH_RATIO, reject=REJECT_RATIO, max_passes=4):
    """Orthogonalize ``v`` against the M-orthonormal columns of ``basis``.

    Re-iterates while a pass removes more than ``1 - reorth`` of the norm.
    Returns the normalized vector, or None when the remaining norm drops
    below ``reject`` times the original.
    """
    v = np.array(v, dtype=float, copy=True)
    initial = norm(M, v)
    if initial == 0.0 or not np.isfinite(initial):
        return None
    current = initial
    for _ in range(max_passes):
        if basis is not None and basis.shape[1]:
            v -= basis @ (basis.T @ _apply(M, v))
        new = norm(M, v)
        if new < reject * initial:
            return None
        if new >= reorth * current:
            return v / new
        current = new
    return v / current if current >= reject * initial else None


def gram_schmidt(vectors, M, basis=None, **kw):
    """Orthonormalize the columns of ``vectors`` (appending to ``basis``).

    Returns the combined basis and the indices of accepted columns.
    """
    n = M.shape[0]
    B = np.zeros((n, 0)) if basis is None else np.array(basis, dtype=float)
    cols, accepted = [B[:, i] for i in range(B.shape[1])], []
    for j in range(vectors.shape[1]):
        cur = np.column_stack(cols) if cols else np.zeros((n, 0))
        w = gram_schmidt_vector(cur, vectors[:, j], M, **kw)
        if w is not None:
            cols.append(w)
            accepted.append(j)
    return (np.column_stack(cols) if cols else np.zeros((n, 0))), accepted


def dense(M):
    return M.toarray() if sps.issparse(M) else np.asarray(M, float)


def generalized_eigh(A, B, descending=True):
    """Symmetric-definite pencil via Cholesky reduction of ``B``."""
    A, B = dense(A), dense(B)
    L = np.linalg.cholesky(B)
    C = sla.solve_triangular(L, sla.solve_triangular(L, A, lower=True).T, lower=True)
    w, V = np.linalg.eigh((C + C.T) / 2)
    X = sla.solve_triangular(L.T, V, lower=False)
    if descending:
        w, X = w[::-1], X[:, ::-1]
    return w, X


def gram_error(B, M):
    if B.shape[1] == 0:
        return 0.0
    G = B.T @ _apply(M, B)
    return float(np.abs(G - np.eye(B.shape[1])).max())
