"""Randomized recovery of low-rank matrices and non-uniqueness witnesses.

The witnesses build, for a given matrix and set of probe vectors, a second
matrix in the same class that reproduces every observed product. They turn
the lower bounds on query counts into checkable certificates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IllConditionedInputError
from .numerics import orth
from .oracle import OracleHandle, query, query_transpose
from .structured import LowRankForm, rng_for


@dataclass
class SketchConfig:
    k: int
    p: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("target rank k must be at least 1")
        if self.p < 0:
            raise ConfigurationError("oversampling p must be nonnegative")


def rsvd_recover(oracle: OracleHandle, cfg: SketchConfig) -> LowRankForm:
    """Randomized SVD with ``k + p`` forward and ``k`` transpose products.

    ``Q`` spans the sketch (rank at most ``k``); the transpose products
    give ``B = A^T Q`` so that ``A = Q B^T``.
    """
    X = rng_for(cfg.seed, 201).standard_normal((oracle.dim, cfg.k + cfg.p))
    Y = query(oracle, X)
    Q = orth(Y, cutoff=1e-12, rank=cfg.k)
    B = query_transpose(oracle, Q)
    return LowRankForm(Q, B)


def _pinv(M, cutoff=1e-12):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(M.T.shape), 0
    r = int(np.count_nonzero(s > cutoff * s[0]))
    return (Vt[:r].T / s[:r]) @ U[:, :r].T, r


def nystrom_recover_symmetric(oracle: OracleHandle, cfg: SketchConfig) -> LowRankForm:
    """Nystrom approximation ``Y (X^T Y)^+ Y^T`` from ``k + p`` products."""
    X = rng_for(cfg.seed, 202).standard_normal((oracle.dim, cfg.k + cfg.p))
    Y = query(oracle, X)
    core_pinv, r = _pinv(X.T @ Y)
    ry = orth(Y).shape[1]
    if r < ry:
        raise IllConditionedInputError("Nystrom core lost rank; reseed")
    return LowRankForm(Y @ core_pinv, Y)


# ---------------------------------------------------------------------------
# witnesses
# ---------------------------------------------------------------------------


def _split(A, X, tol):
    """Orthonormal ``(X_hat, X_tilde)`` with ``col(X_hat) = col(X) & null(A)``."""
    _, s, Vt = np.linalg.svd(A @ X)
    p = int(np.count_nonzero(s > tol))
    V = Vt.T
    return X @ V[:, p:], X @ V[:, :p]


def _null_vector(M):
    """Unit vector orthogonal to every column of ``M``."""
    N = M.shape[0]
    if M.shape[1] == 0:
        v = np.zeros(N)
        v[0] = 1.0
        return v
    U, s, _ = np.linalg.svd(M, full_matrices=True)
    r = int(np.count_nonzero(s > 1e-12 * max(s[0], 1e-300)))
    if r >= N:
        raise ConfigurationError("probe vectors span the whole space")
    return U[:, r]


def _farther(A, *cands):
    return max(cands, key=lambda B: np.linalg.norm(B - A))


def _case2(A, W_hat, W_tilde):
    # B = P^T W~^T A with P W~ = I and P W^ = 0
    v = _null_vector(np.hstack([W_hat, W_tilde]))
    P1 = W_tilde.T
    P2 = W_tilde.T.copy()
    P2[0] += v
    B1 = P1.T @ W_tilde.T @ A
    B2 = P2.T @ W_tilde.T @ A
    return _farther(A, B1, B2)


def witness_lowrank(X, W, A, k=None):
    """Matrix ``B != A`` of rank at most ``k`` with ``B X = A X`` and ``B^T W = A^T W``.

    ``X`` (``N x k1``) and ``W`` (``N x k2``) must have orthonormal columns
    with ``min(k1, k2) < k`` and ``max(k1, k2) < N``. ``k`` defaults to the
    numerical rank of ``A``.
    """
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if W.ndim == 1:
        W = W[:, None]
    N = A.shape[0]
    if A.shape != (N, N) or X.shape[0] != N or W.shape[0] != N:
        raise ConfigurationError("A must be square and X, W must have N rows")
    k1, k2 = X.shape[1], W.shape[1]
    sA = np.linalg.svd(A, compute_uv=False)
    tol = 1e-12 * max(sA[0], 1.0) if sA.size else 0.0
    rank_A = int(np.count_nonzero(sA > tol))
    if k is None:
        k = max(rank_A, 1)
    if rank_A > k:
        raise ConfigurationError(f"A has rank {rank_A} > k={k}")
    if not (min(k1, k2) < k and max(k1, k2) < N):
        raise ConfigurationError("need min(k1, k2) < k and max(k1, k2) < N")
    for M in (X, W):
        if M.shape[1] and np.linalg.norm(M.T @ M - np.eye(M.shape[1])) > 1e-10:
            raise ConfigurationError("probe blocks must have orthonormal columns")

    X_hat, X_t = _split(A, X, tol)
    W_hat, W_t = _split(A.T, W, tol)
    p, q = X_t.shape[1], W_t.shape[1]

    if p == 0 and q == 0:
        if rank_A > 0:
            return 2.0 * A
        u = _null_vector(W)
        v = _null_vector(X)
        return np.outer(u, v)
    if p == 0:
        return _case2(A, W_hat, W_t)
    if q == 0:
        return _case2(A.T, X_hat, X_t).T

    Y_t = A @ X_t
    Z_t = A.T @ W_t
    # left factor biorthogonal to W~ and inside col(A); equals W~ whenever
    # col(W~) already lies in col(A)
    PA = orth(A, cutoff=1e-12)
    PW = PA @ (PA.T @ W_t)
    W_l = PW @ np.linalg.inv(W_t.T @ PW)
    ZX = Z_t.T @ X_t
    WY = W_t.T @ Y_t

    def family(C):
        M = np.block([
            [np.eye(p) - C @ ZX, C],
            [(WY @ C - np.eye(q)) @ ZX, np.eye(q) - WY @ C],
        ])
        return np.hstack([Y_t, W_l]) @ M @ np.vstack([X_t.T, Z_t.T])

    C = np.ones((p, q))
    B = _farther(A, family(C), family(2.0 * C))
    if np.linalg.norm(B - A) > 1e-8 * max(np.linalg.norm(A), 1.0):
        return B
    # the whole family collapsed onto A (possible once col(W) pins col(A));
    # perturb inside a fixed k-dimensional row space instead
    return _rank_one_witness(A, X, W, k, rank_A)


def _rank_one_witness(A, X, W, k, rank_A):
    """``A + a (R b)^T`` with ``a`` orthogonal to ``W`` and ``R b`` to ``X``.

    ``R`` is an orthonormal ``N x k`` basis containing the row space of
    ``A``, so the rank stays at most ``k``. Needs ``k1 < k`` and ``k2 < N``;
    otherwise the transposed problem is used.
    """
    if X.shape[1] >= k:
        return _rank_one_witness(A.T, W, X, k, rank_A).T
    _, _, Vt = np.linalg.svd(A)
    R = Vt[:rank_A].T
    if rank_A < k:
        extra = _null_basis(R)[:, : k - rank_A]
        R = np.hstack([R, extra])
    b = _null_vector(R.T @ X) if X.shape[1] else np.eye(k)[:, 0]
    a = _null_vector(W)
    return A + np.outer(a, R @ b)


def _null_basis(M):
    N = M.shape[0]
    if M.shape[1] == 0:
        return np.eye(N)
    U, s, _ = np.linalg.svd(M, full_matrices=True)
    r = int(np.count_nonzero(s > 1e-12 * max(s[0], 1e-300)))
    return U[:, r:]


def _complement_vector(A, X):
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = A.shape[0]
    if A.shape != (N, N) or X.shape[0] != N:
        raise ConfigurationError("A must be square and X must have N rows")
    if X.shape[1] > N - 1:
        raise ConfigurationError(f"expected at most N-1={N - 1} probe vectors, got {X.shape[1]}")
    s = np.linalg.svd(X, compute_uv=False) if X.shape[1] else np.zeros(0)
    if s.size and np.count_nonzero(s > 1e-12 * s[0]) >= N:
        raise ConfigurationError("probe vectors have a trivial orthogonal complement")
    return A, _null_vector(X)


def witness_symmetric(A, X):
    """``B = A + v v^T`` with unit ``v`` orthogonal to the probes."""
    A, v = _complement_vector(A, X)
    return A + np.outer(v, v)


def witness_orthogonal(A, X):
    """Householder-reflected ``B = A (I - 2 v v^T)``; still orthogonal."""
    A, v = _complement_vector(A, X)
    return A - 2.0 * np.outer(A @ v, v)
