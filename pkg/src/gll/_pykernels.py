"""Pure numpy/scipy fallbacks for the compiled kernels in _ckernels.pyx."""

import numpy as np
import scipy.sparse as sparse

# Row block size for the pairwise-distance loop; bounds peak memory at
# roughly block * n * d doubles.
_BLOCK = 256


def sqdist(X):
    """Full matrix of pairwise squared Euclidean distances (direct differences)."""
    n = X.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for s in range(0, n, _BLOCK):
        e = min(s + _BLOCK, n)
        diff = X[s:e, None, :] - X[None, :, :]
        out[s:e] = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(out, 0.0)
    return out


def knn_select(D, k):
    """Per-row k smallest off-diagonal entries of a squared-distance matrix.

    Rows are ordered by (distance, index); ties resolve to the lower index.
    """
    n = D.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    cols = np.arange(n)
    for i in range(n):
        row = D[i].copy()
        row[i] = np.inf
        order = np.lexsort((cols, row))[:k]
        idx[i] = order
        dist[i] = row[order]
    return idx, dist


def pcg(indptr, indices, data, inv_diag, b, x, rtol, atol, maxiter):
    """Jacobi-preconditioned conjugate gradient on a CSR matrix, in place on x.

    Stops when ||r||_2 <= max(rtol*||b||_2, atol). Returns
    (iterations, final residual norm, ||b||_2).
    """
    n = b.shape[0]
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0, 0.0
    A = sparse.csr_matrix((data, indices, indptr), shape=(n, n))
    thresh = max(rtol * bnorm, atol)

    r = b - A @ x
    rnorm = float(np.linalg.norm(r))
    if rnorm <= thresh:
        return 0, rnorm, bnorm
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        ap = A @ p
        pap = float(p @ ap)
        if pap == 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= thresh:
            return it, rnorm, bnorm
        z = inv_diag * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return maxiter, rnorm, bnorm
