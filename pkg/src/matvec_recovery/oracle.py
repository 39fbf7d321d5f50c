"""Black-box access to a matrix through forward and transpose products."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputShapeError

FORWARD_STREAM = 0
TRANSPOSE_STREAM = 1


@dataclass
class QueryLedger:
    """Counts of forward (``m``) and transpose (``n``) products."""

    m: int = 0
    n: int = 0

    def as_tuple(self):
        return (self.m, self.n)


@dataclass
class NoiseSpec:
    epsilon: float = 0.0
    seed: int = 0


@dataclass
class OracleHandle:
    """Matrix access through ``apply`` and ``apply_transpose``.

    Both callables take an ``N x s`` block and return an ``N x s`` block.
    Use :func:`query` / :func:`query_transpose` (or the methods of the same
    name) so that the ledger is charged one unit per column.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_transpose: Callable[[np.ndarray], np.ndarray]
    ledger: QueryLedger = field(default_factory=QueryLedger)

    def query(self, X):
        return query(self, X)

    def query_transpose(self, X):
        return query_transpose(self, X)


def _as_block(oracle, X):
    X = np.asarray(X, dtype=float)
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != oracle.dim:
        raise InputShapeError(
            f"query block must have {oracle.dim} rows, got shape {np.shape(X)}"
        )
    return X, vec


def query(oracle: OracleHandle, X):
    """Forward products ``A X``; charges ``X.shape[1]`` to ``ledger.m``."""
    Xb, vec = _as_block(oracle, X)
    if Xb.shape[1] == 0:
        return Xb.copy()
    Y = np.asarray(oracle.apply(Xb), dtype=float).reshape(oracle.dim, Xb.shape[1])
    oracle.ledger.m += Xb.shape[1]
    return Y[:, 0] if vec else Y


def query_transpose(oracle: OracleHandle, X):
    """Transpose products ``A^T X``; charges ``X.shape[1]`` to ``ledger.n``."""
    Xb, vec = _as_block(oracle, X)
    if Xb.shape[1] == 0:
        return Xb.copy()
    Y = np.asarray(oracle.apply_transpose(Xb), dtype=float).reshape(oracle.dim, Xb.shape[1])
    oracle.ledger.n += Xb.shape[1]
    return Y[:, 0] if vec else Y


def dense_oracle(A) -> OracleHandle:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputShapeError("dense oracle needs a square matrix")
    return OracleHandle(A.shape[0], lambda X: A @ X, lambda X: A.T @ X)


def form_oracle(form) -> OracleHandle:
    """Oracle backed by the exact applier of a structured form."""
    from .structured import apply_form, apply_form_transpose, form_dim

    return OracleHandle(
        form_dim(form),
        lambda X: apply_form(form, X),
        lambda X: apply_form_transpose(form, X),
    )


def noise_vector(seed, stream, index, N):
    """Standard Gaussian vector keyed by ``(seed, stream, index)``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(N)


def with_noise(oracle: OracleHandle, spec: NoiseSpec) -> OracleHandle:
    """Wrap ``oracle`` so each product column gets ``epsilon * w`` added.

    ``w`` is drawn from a counter-based stream keyed by the seed and the
    running query index, so a fixed ``(seed, epsilon)`` makes every run
    reproducible. The wrapped oracle shares the base ledger.
    """
    eps = float(spec.epsilon)
    if eps < 0:
        raise ValueError("noise scale must be nonnegative")
    N = oracle.dim
    ledger = oracle.ledger

    def perturb(Y, stream, start):
        if eps == 0.0:
            return Y
        Y = np.array(Y, dtype=float, copy=True)
        for j in range(Y.shape[1]):
            Y[:, j] += eps * noise_vector(spec.seed, stream, start + j, N)
        return Y

    def apply(X):
        return perturb(oracle.apply(X), FORWARD_STREAM, ledger.m)

    def apply_t(X):
        return perturb(oracle.apply_transpose(X), TRANSPOSE_STREAM, ledger.n)

    return OracleHandle(N, apply, apply_t, ledger)


def sub_oracle(oracle: OracleHandle, rows, cols) -> OracleHandle:
    """Oracle for the block ``A[rows, cols]`` built from full-size queries.

    Inputs are zero-padded outside ``cols`` and outputs restricted to
    ``rows``; transposes go the other way. Every column still costs one
    query on the parent ledger.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if rows.size != cols.size:
        raise InputShapeError("sub-oracle must be square")
    N = oracle.dim

    def apply(X):
        Z = np.zeros((N, X.shape[1]))
        Z[cols] = X
        return query(oracle, Z)[rows]

    def apply_t(X):
        Z = np.zeros((N, X.shape[1]))
        Z[rows] = X
        return query_transpose(oracle, Z)[cols]

    # the parent ledger is charged inside apply; the sub-oracle keeps its own count too
    return OracleHandle(rows.size, apply, apply_t)
