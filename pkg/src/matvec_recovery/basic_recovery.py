"""Exact recovery of diagonal, banded, circulant, Toeplitz, Hankel and
Toeplitz-like matrices from a handful of products."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, IllConditionedInputError, UnderdeterminedError
from .numerics import fft, ifft, qr_lstsq
from .oracle import OracleHandle, query, query_transpose
from .structured import (
    CirculantForm,
    DenseForm,
    DiagonalForm,
    DisplacementForm,
    HankelForm,
    ToeplitzForm,
    TridiagonalForm,
    displacement_to_dense,
    rng_for,
    shift_matrix,
)


def recover_diagonal(oracle: OracleHandle) -> DiagonalForm:
    return DiagonalForm(query(oracle, np.ones(oracle.dim)))


def recover_block_diagonal(oracle: OracleHandle, k: int) -> DenseForm:
    """Block-diagonal matrix with ``k x k`` blocks from ``k`` comb inputs."""
    N = oracle.dim
    if k < 1 or N % k:
        raise ConfigurationError(f"block size {k} does not divide N={N}")
    X = np.zeros((N, k))
    for j in range(k):
        X[j::k, j] = 1.0
    Y = query(oracle, X)
    A = np.zeros((N, N))
    for t in range(N // k):
        s = slice(t * k, (t + 1) * k)
        A[s, s] = Y[s]
    return DenseForm(A)


def _parity_inputs(N):
    X = np.zeros((N, 2))
    X[0::2, 0] = 1.0
    X[1::2, 1] = 1.0
    return X


def _diag_and_pairs(Y):
    # even rows see only the diagonal through the even input, odd rows
    # through the odd input; the other column holds sub + super
    N = Y.shape[0]
    even = np.arange(N) % 2 == 0
    main = np.where(even, Y[:, 0], Y[:, 1])
    pair = np.where(even, Y[:, 1], Y[:, 0])
    return main, pair


def recover_tridiagonal(oracle: OracleHandle, mode: str = "recursive") -> TridiagonalForm:
    """Tridiagonal matrix from (2, 1) products (``recursive``) or 3 forward
    products (``comb``)."""
    N = oracle.dim
    if mode == "comb":
        X = np.zeros((N, 3))
        for r in range(3):
            X[r::3, r] = 1.0
        Y = query(oracle, X)
        i = np.arange(N)
        main = Y[i, i % 3]
        sub = Y[i[1:], (i[1:] - 1) % 3]
        sup = Y[i[:-1], (i[:-1] + 1) % 3]
        return TridiagonalForm(main, sub, sup)
    if mode != "recursive":
        raise ConfigurationError(f"unknown tridiagonal mode {mode!r}")
    Y = query(oracle, _parity_inputs(N))
    z = query_transpose(oracle, np.ones(N))
    main, pair = _diag_and_pairs(Y)
    # pair[i] = sub[i-1] + sup[i];  z[i] - main[i] = sup[i-1] + sub[i]
    colrest = z - main
    sub = np.zeros(max(N - 1, 0))
    sup = np.zeros(max(N - 1, 0))
    for i in range(N - 1):
        sup[i] = pair[i] - (sub[i - 1] if i > 0 else 0.0)
        sub[i] = colrest[i] - (sup[i - 1] if i > 0 else 0.0)
    return TridiagonalForm(main, sub, sup)


def recover_symmetric_tridiagonal(oracle: OracleHandle) -> TridiagonalForm:
    N = oracle.dim
    Y = query(oracle, _parity_inputs(N))
    main, pair = _diag_and_pairs(Y)
    off = np.zeros(max(N - 1, 0))
    for i in range(N - 1):
        off[i] = pair[i] - (off[i - 1] if i > 0 else 0.0)
    return TridiagonalForm(main, off, off.copy(), symmetric=True)


def recover_circulant(oracle: OracleHandle, mode: str = "randomized", seed: int = 0) -> CirculantForm:
    N = oracle.dim
    if mode == "deterministic":
        e1 = np.zeros(N)
        e1[0] = 1.0
        return CirculantForm(query(oracle, e1))
    if mode != "randomized":
        raise ConfigurationError(f"unknown circulant mode {mode!r}")
    g = rng_for(seed, 101).standard_normal(N)
    lam = fft(g)
    if np.min(np.abs(lam)) < 1e-12 * np.linalg.norm(g):
        raise IllConditionedInputError("DFT of the probe vector has a near-zero entry; reseed")
    y = query(oracle, g)
    # C_g c = y and C_g = F^{-1} diag(F g) F
    return CirculantForm(np.real(ifft(fft(y) / lam)))


def toeplitz_system(G):
    """Coefficient matrix for Toeplitz products ``T G`` in the unknowns
    ``(t1[0], ..., t1[N-1], t2[N-1], ..., t2[1])``."""
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    N, s = G.shape
    M = np.zeros((s * N, 2 * N - 1))
    i = np.arange(N)[:, None]
    j = np.arange(N)[None, :]
    col = np.where(i >= j, i - j, 2 * N - 1 - (j - i))
    for q in range(s):
        block = M[q * N:(q + 1) * N]
        np.add.at(block, (np.broadcast_to(i, (N, N)), col), np.broadcast_to(G[:, q], (N, N)))
    return M


def _toeplitz_from_theta(theta, N):
    t1 = theta[:N].copy()
    t2 = np.empty(N)
    t2[0] = t1[0]
    t2[1:] = theta[N:][::-1]
    return ToeplitzForm(t1, t2)


def recover_toeplitz(oracle: OracleHandle, mode: str = "randomized", seed: int = 0) -> ToeplitzForm:
    N = oracle.dim
    if mode == "deterministic":
        e1 = np.zeros(N)
        e1[0] = 1.0
        t1 = query(oracle, e1)
        t2 = query_transpose(oracle, e1)
        # both products see the shared corner; keep one value
        t2[0] = t1[0]
        return ToeplitzForm(t1, t2)
    if mode != "randomized":
        raise ConfigurationError(f"unknown Toeplitz mode {mode!r}")
    G = rng_for(seed, 102).standard_normal((N, 2))
    Y = query(oracle, G)
    M = toeplitz_system(G)
    try:
        theta, _ = qr_lstsq(M, Y.T.reshape(-1))
    except UnderdeterminedError as exc:
        raise IllConditionedInputError(str(exc)) from exc
    return _toeplitz_from_theta(theta, N)


def recover_hankel(oracle: OracleHandle, seed: int = 0) -> HankelForm:
    """Hankel ``H = P T`` recovered through the Toeplitz solver on ``P H``."""
    flipped = OracleHandle(
        oracle.dim,
        lambda X: oracle.apply(X)[::-1],
        lambda X: oracle.apply_transpose(X[::-1]),
        oracle.ledger,
    )
    T = recover_toeplitz(flipped, "randomized", seed)
    # T = P H gives T[i, j] = h[N - 1 - i + j]
    return HankelForm(np.concatenate([T.t1[::-1], T.t2[1:]]))


def _pinv(M, cutoff=1e-12):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(M.T.shape), 0
    r = int(np.count_nonzero(s > cutoff * s[0]))
    return (Vt[:r].T / s[:r]) @ U[:, :r].T, r


def recover_toeplitz_like(oracle: OracleHandle, p: int = 5, seed: int = 0) -> DisplacementForm:
    """Matrix with ``Z_1 A - A Z_{-1} = G H^T`` of rank two.

    ``G H^T`` is sketched from both sides and rebuilt by generalized
    Nystrom, then ``A`` is the solution of the Sylvester equation.
    """
    if p < 0:
        raise ConfigurationError("oversampling must be nonnegative")
    N = oracle.dim
    w = 2 + p
    rng = rng_for(seed, 103)
    X = rng.standard_normal((N, w))
    Yt = rng.standard_normal((N, w))
    Z1 = shift_matrix(N, 1.0)
    Zm1 = shift_matrix(N, -1.0)
    MX = Z1 @ query(oracle, X) - query(oracle, Zm1 @ X)  # G H^T X
    MY = query_transpose(oracle, Z1.T @ Yt) - Zm1.T @ query_transpose(oracle, Yt)  # H G^T Y
    core = Yt.T @ MX
    core_pinv, r = _pinv(core)
    sx = np.linalg.svd(MX, compute_uv=False)
    rank_mx = int(np.count_nonzero(sx > 1e-12 * sx[0])) if sx.size and sx[0] > 0 else 0
    if r < rank_mx:
        raise IllConditionedInputError("Nystrom core lost rank; reseed")
    GH = MX @ core_pinv @ MY.T
    U, s, Vt = np.linalg.svd(GH)
    G = U[:, :2] * s[:2]
    H = Vt[:2].T
    return DisplacementForm(G, H, displacement_to_dense(G, H))
