"""Shared numerical kernels.

Economy orthonormalization, power-of-two FFTs, sparse least squares by
orthogonal factorization, power-method error estimates and a dense
Sylvester solver.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import aslinearoperator

from .errors import ConfigurationError, SingularPencilError, UnderdeterminedError


def orth(M, cutoff=1e-12, rank=None, abs_tol=None):
    """Orthonormal basis for the column space of ``M``.

    Singular directions below ``cutoff * sigma_1`` (or below ``abs_tol`` when
    given) are dropped. ``rank`` caps the number of returned columns. A zero
    matrix gives an empty ``(n, 0)`` basis.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    n = M.shape[0]
    if M.size == 0:
        return np.zeros((n, 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, 0))
    tol = cutoff * s[0] if abs_tol is None else max(abs_tol, 0.0)
    r = int(np.count_nonzero(s > tol))
    if rank is not None:
        r = min(r, int(rank))
    return U[:, :r]


def _check_pow2(n):
    if n < 1 or (n & (n - 1)) != 0:
        raise ConfigurationError(f"FFT length must be a power of two, got {n}")


def fft(x):
    """Unnormalized DFT along the first axis (power-of-two lengths only)."""
    x = np.asarray(x)
    _check_pow2(x.shape[0])
    return np.fft.fft(x, axis=0)


def ifft(x):
    """Inverse of :func:`fft`."""
    x = np.asarray(x)
    _check_pow2(x.shape[0])
    return np.fft.ifft(x, axis=0)


def qr_lstsq(A, b, rank_tol=1e-10):
    """Dense least squares through a Householder QR factorization.

    Returns ``(x, residual_norm)``. Raises :class:`UnderdeterminedError`
    when the triangular factor has ``sigma_min <= rank_tol * sigma_max``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m < n:
        raise UnderdeterminedError(f"{m} equations for {n} unknowns; take more queries")
    if n == 0:
        return np.zeros((0,) + b.shape[1:]), float(np.linalg.norm(b))
    Q, R = np.linalg.qr(A, mode="reduced")
    s = np.linalg.svd(R, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= rank_tol * s[0]:
        raise UnderdeterminedError(
            "least-squares system is numerically rank deficient "
            f"(sigma_min/sigma_max = {s[-1] / s[0] if s[0] else 0.0:.2e}); take more queries"
        )
    qtb = Q.T @ b
    x = sla.solve_triangular(R, qtb)
    res = float(np.linalg.norm(b - A @ x))
    return x, res


def sparse_lsq(triplets, rhs, shape=None, rank_tol=1e-10):
    """Sparse least squares by orthogonal factorization.

    ``triplets`` is ``(rows, cols, vals)`` or any scipy sparse matrix. The
    bipartite row/column graph is split into connected components and each
    component is solved by Householder QR on its own rows and columns, so
    the normal equations are never formed. Returns ``(x, residual_norm)``.
    """
    if sp.issparse(triplets):
        A = triplets.tocsr()
    else:
        rows, cols, vals = triplets
        if shape is None:
            shape = (int(np.max(rows)) + 1, int(np.max(cols)) + 1)
        A = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    b = np.asarray(rhs, dtype=float)
    m, n = A.shape
    if b.shape[0] != m:
        raise ConfigurationError("right-hand side length does not match row count")
    if m < n:
        raise UnderdeterminedError(f"{m} equations for {n} unknowns; take more queries")

    # bipartite graph: nodes 0..m-1 are rows, m..m+n-1 are columns
    coo = A.tocoo()
    keep = coo.data != 0
    r, c = coo.row[keep], coo.col[keep]
    graph = sp.coo_matrix((np.ones(r.size), (r, c + m)), shape=(m + n, m + n))
    ncomp, labels = connected_components(graph, directed=False)
    row_lab, col_lab = labels[:m], labels[m:]

    x = np.zeros(n)
    res2 = 0.0
    row_order = np.argsort(row_lab, kind="stable")
    col_order = np.argsort(col_lab, kind="stable")
    row_bounds = np.searchsorted(row_lab[row_order], np.arange(ncomp + 1))
    col_bounds = np.searchsorted(col_lab[col_order], np.arange(ncomp + 1))
    for comp in range(ncomp):
        ri = row_order[row_bounds[comp]:row_bounds[comp + 1]]
        ci = col_order[col_bounds[comp]:col_bounds[comp + 1]]
        if ci.size == 0:
            res2 += float(b[ri] @ b[ri])
            continue
        block = A[ri][:, ci].toarray()
        xc, rc = qr_lstsq(block, b[ri], rank_tol=rank_tol)
        x[ci] = xc
        res2 += rc * rc
    return x, float(np.sqrt(res2))


def spectral_norm_estimate(op, N=None, iters=20, seed=0):
    """Power method on ``op^T op`` from a seeded Gaussian start."""
    L = aslinearoperator(op)
    N = L.shape[1] if N is None else N
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    nx = np.linalg.norm(x)
    x /= nx
    est = 0.0
    for _ in range(iters):
        y = L.matvec(x)
        est = float(np.linalg.norm(y))
        z = L.rmatvec(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return est
        x = z / nz
    return float(np.linalg.norm(L.matvec(x)))


def spectral_relative_error(apply_diff, N, iters=20, seed=0, reference=None):
    """Estimate ``||A - Ahat||_2 / ||A||_2`` with ``iters`` power iterations.

    ``apply_diff`` and ``reference`` are anything scipy accepts as a linear
    operator (dense arrays, sparse matrices, ``LinearOperator``). Without a
    reference the absolute norm of the difference is returned.
    """
    d = spectral_norm_estimate(apply_diff, N, iters, seed)
    if reference is None:
        return d
    a = spectral_norm_estimate(reference, N, iters, seed)
    if a == 0.0:
        return 0.0 if d == 0.0 else float("inf")
    return d / a


def sylvester_solve(P, Q, R, tol=1e-10):
    """Solve ``P X - X Q = R`` by the Bartels-Stewart algorithm."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    lp = np.linalg.eigvals(P)
    lq = np.linalg.eigvals(Q)
    if lp.size and lq.size:
        gap = np.min(np.abs(lp[:, None] - lq[None, :]))
        if gap <= tol:
            raise SingularPencilError(f"spectra of P and Q collide (gap {gap:.2e})")
    return sla.solve_sylvester(P, -Q, R)
