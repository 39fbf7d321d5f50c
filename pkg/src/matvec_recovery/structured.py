"""Ground-truth parameterizations of structured matrices.

Every form has an exact applier (``apply_form`` / ``apply_form_transpose``),
a dense ``materialize`` and a seeded random generator ``random_form``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, InputShapeError
from .numerics import sylvester_solve


# ---------------------------------------------------------------------------
# simple forms
# ---------------------------------------------------------------------------


@dataclass
class DiagonalForm:
    d: np.ndarray
    kind = "diagonal"


@dataclass
class TridiagonalForm:
    main: np.ndarray
    sub: np.ndarray
    sup: np.ndarray
    symmetric: bool = False
    kind = "tridiagonal"


@dataclass
class CirculantForm:
    c: np.ndarray
    kind = "circulant"


@dataclass
class ToeplitzForm:
    t1: np.ndarray  # first column
    t2: np.ndarray  # first row
    kind = "toeplitz"

    def __post_init__(self):
        if len(self.t1) != len(self.t2) or self.t1[0] != self.t2[0]:
            raise ConfigurationError("Toeplitz column and row must share their first entry")


@dataclass
class HankelForm:
    h: np.ndarray  # length 2N-1, entry (i, j) = h[i + j]
    kind = "hankel"


@dataclass
class DisplacementForm:
    """Solution of ``Z_1 A - A Z_{-1} = G H^T``."""

    G: np.ndarray
    H: np.ndarray
    A_dense: np.ndarray
    kind = "displacement"


@dataclass
class LowRankForm:
    Uf: np.ndarray
    Vf: np.ndarray
    kind = "lowrank"


@dataclass
class DenseForm:
    A: np.ndarray
    kind = "dense"


# ---------------------------------------------------------------------------
# HSS
# ---------------------------------------------------------------------------


def hss_leaf_level(k):
    """Terminal level: blocks are ``2**ell`` with ``ell = floor(log2 k) + 1``."""
    if k < 1:
        raise ConfigurationError("rank must be positive")
    return int(np.floor(np.log2(k))) + 1


@dataclass
class TreeNode:
    index: int
    start: int
    size: int
    depth: int
    parent: int
    children: tuple = ()

    @property
    def is_leaf(self):
        return not self.children


class BinaryTree:
    """Complete binary tree over ``[0, N)`` with leaves of size ``leaf``.

    Nodes are stored in depth-first preorder, root first.
    """

    def __init__(self, N, leaf):
        if N < leaf or N % leaf or (N // leaf) & (N // leaf - 1):
            raise ConfigurationError(f"N={N} is not a power-of-two multiple of leaf size {leaf}")
        self.N = N
        self.leaf = leaf
        self.nodes: list[TreeNode] = []
        self._build(0, N, 0, -1)
        self.leaves = [nd.index for nd in self.nodes if nd.is_leaf]

    def _build(self, start, size, depth, parent):
        idx = len(self.nodes)
        node = TreeNode(idx, start, size, depth, parent)
        self.nodes.append(node)
        if size > self.leaf:
            h = size // 2
            c0 = self._build(start, h, depth + 1, idx)
            c1 = self._build(start + h, h, depth + 1, idx)
            node.children = (c0, c1)
        return idx

    def ancestors(self, idx):
        """Chain of ``(ancestor, side)`` from the parent up to the root."""
        out = []
        child = idx
        p = self.nodes[idx].parent
        while p >= 0:
            side = 0 if self.nodes[p].children[0] == child else 1
            out.append((p, side))
            child = p
            p = self.nodes[p].parent
        return out


@dataclass
class HssForm:
    """Rank-``k`` HSS matrix.

    ``U, V, W, Z`` are the ``N/2 x r`` top-level factors: the bottom-left
    block is ``U V^T`` and the top-right block is ``W Z^T``. Inside the top
    half every off-diagonal block is ``W[rows] H V[cols]^T``; inside the
    bottom half it is ``U[rows] H Z[cols]^T`` (indices relative to the
    half). ``coupling[i]`` holds ``(H_upper, H_lower)`` for the i-th internal
    node below the root in preorder; ``leaves`` are the dense terminal
    blocks of size ``2**ell``.
    """

    N: int
    k: int
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    coupling: np.ndarray  # (n_internal, 2, r, r)
    leaves: np.ndarray  # (n_leaves, b, b)
    symmetric: bool = False
    kind = "hss"

    @property
    def ell(self):
        return int(np.log2(self.leaves.shape[1]))

    @cached_property
    def tree(self):
        return BinaryTree(self.N, self.leaves.shape[1])

    @cached_property
    def _levels(self):
        return hss_level_index(self.tree)


def hss_level_index(tree: BinaryTree):
    """Group internal non-root nodes by (half, depth).

    Returns a dict ``(half, depth) -> (coupling indices, starts within half)``
    with nodes in left-to-right order, and the coupling index of each node.
    """
    coupling_of = {}
    for nd in tree.nodes:
        if nd.depth >= 1 and not nd.is_leaf:
            coupling_of[nd.index] = len(coupling_of)
    half = tree.N // 2
    groups: dict = {}
    for idx, ci in coupling_of.items():
        nd = tree.nodes[idx]
        h = 0 if nd.start < half else 1
        groups.setdefault((h, nd.depth), []).append((nd.start - h * half, ci))
    out = {}
    for key, items in groups.items():
        items.sort()
        out[key] = (np.array([c for _, c in items]), np.array([s for s, _ in items]))
    return out, coupling_of


def _hss_apply(form: HssForm, X, transpose=False):
    N = form.N
    h = N // 2
    U, V, W, Z = form.U, form.V, form.W, form.Z
    C = form.coupling
    if transpose:
        # A^T has bottom-left Z W^T and top-right V U^T; inside halves the
        # roles of row and column factors swap and couplings transpose.
        U, V, W, Z = Z, W, V, U
        C = np.swapaxes(C, -1, -2)[:, ::-1]
    Y = np.zeros_like(X)
    Y[h:] += U @ (V.T @ X[:h])
    Y[:h] += W @ (Z.T @ X[h:])
    levels, _ = form._levels
    for (half, depth), (cidx, starts) in levels.items():
        Fr, Fc = (W, V) if half == 0 else (U, Z)
        off = half * h
        size = h >> (depth - 1)
        s2 = size // 2
        n = len(cidx)
        base = starts[0]
        sl = slice(off + base, off + base + n * size)
        xs = X[sl].reshape(n, 2, s2, -1)
        frs = Fr[base:base + n * size].reshape(n, 2, s2, -1)
        fcs = Fc[base:base + n * size].reshape(n, 2, s2, -1)
        proj = np.swapaxes(fcs, -1, -2) @ xs
        H = C[cidx]
        ys = np.zeros_like(xs)
        ys[:, 0] = frs[:, 0] @ (H[:, 0] @ proj[:, 1])
        ys[:, 1] = frs[:, 1] @ (H[:, 1] @ proj[:, 0])
        Y[sl] += ys.reshape(n * size, -1)
    b = form.leaves.shape[1]
    D = form.leaves if not transpose else np.swapaxes(form.leaves, 1, 2)
    Y += (D @ X.reshape(-1, b, X.shape[1])).reshape(N, -1)
    return Y


def _hss_materialize(form: HssForm):
    N = form.N
    h = N // 2
    A = np.zeros((N, N))
    A[h:, :h] = form.U @ form.V.T
    A[:h, h:] = form.W @ form.Z.T
    tree = form.tree
    _, coupling_of = form._levels
    for idx, ci in coupling_of.items():
        nd = tree.nodes[idx]
        half = 0 if nd.start < h else 1
        Fr, Fc = (form.W, form.V) if half == 0 else (form.U, form.Z)
        off = half * h
        a = nd.start - off
        s2 = nd.size // 2
        r0 = slice(a, a + s2)
        r1 = slice(a + s2, a + nd.size)
        g0 = slice(off + a, off + a + s2)
        g1 = slice(off + a + s2, off + a + nd.size)
        A[g0, g1] = Fr[r0] @ form.coupling[ci, 0] @ Fc[r1].T
        A[g1, g0] = Fr[r1] @ form.coupling[ci, 1] @ Fc[r0].T
    b = form.leaves.shape[1]
    for i, D in enumerate(form.leaves):
        A[i * b:(i + 1) * b, i * b:(i + 1) * b] = D
    return A


def hss_parameter_count(N, k, symmetric=False):
    """Number of free parameters of a generic rank-``k`` HSS matrix."""
    ell = hss_leaf_level(k)
    b = 2**ell
    if N < 2 * b or N & (N - 1):
        raise ConfigurationError(f"need N a power of two with N >= {2 * b}, got N={N}")
    n_leaves = N // b
    n_couple = n_leaves - 2  # internal nodes below the root
    if symmetric:
        return k * N + k * k * n_couple + (b * (b + 1) // 2) * n_leaves
    return 4 * k * (N // 2) + 2 * k * k * n_couple + b * b * n_leaves


# ---------------------------------------------------------------------------
# HODLR
# ---------------------------------------------------------------------------


@dataclass
class HodlrForm:
    """HODLR matrix in the level layout of the standard block diagram.

    ``levels[l - 1]`` is a dict with arrays ``U, V, W, Z`` of shape
    ``(2**(l-1), N / 2**l, r)``: for node ``t`` with first child rows ``I``
    and second child rows ``J`` the block ``A[J, I]`` is ``U_t V_t^T`` and
    ``A[I, J]`` is ``W_t Z_t^T``. A level may be ``None`` when it has not
    been recovered. ``leaves`` are dense diagonal blocks (``None`` when
    missing).
    """

    N: int
    k: int
    levels: list
    leaves: np.ndarray | None
    symmetric: bool = False
    meta: dict = field(default_factory=dict)
    kind = "hodlr"

    @property
    def leaf_size(self):
        return self.N >> len(self.levels)


def hodlr_leaf_size(N, k):
    """Blocks are split while larger than ``2k``."""
    b = N
    while b > 2 * k and b % 2 == 0:
        b //= 2
    return b


def _hodlr_apply(form: HodlrForm, X, transpose=False):
    N = form.N
    Y = np.zeros_like(X)
    for lvl, fac in enumerate(form.levels, start=1):
        if fac is None:
            continue
        n = 2 ** (lvl - 1)
        b = N // (2 * n)
        xs = X.reshape(n, 2, b, -1)
        ys = Y.reshape(n, 2, b, -1)
        U, V, W, Z = fac["U"], fac["V"], fac["W"], fac["Z"]
        if transpose:
            U, V, W, Z = Z, W, V, U
        ys[:, 1] += U @ (np.swapaxes(V, 1, 2) @ xs[:, 0])
        ys[:, 0] += W @ (np.swapaxes(Z, 1, 2) @ xs[:, 1])
    if form.leaves is not None:
        b = form.leaves.shape[1]
        D = form.leaves if not transpose else np.swapaxes(form.leaves, 1, 2)
        Y += (D @ X.reshape(-1, b, X.shape[1])).reshape(N, -1)
    return Y


def _hodlr_materialize(form: HodlrForm):
    return _hodlr_apply(form, np.eye(form.N))


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def form_dim(form):
    k = form.kind
    if k == "diagonal":
        return len(form.d)
    if k == "tridiagonal":
        return len(form.main)
    if k == "circulant":
        return len(form.c)
    if k == "toeplitz":
        return len(form.t1)
    if k == "hankel":
        return (len(form.h) + 1) // 2
    if k == "displacement":
        return form.A_dense.shape[0]
    if k == "lowrank":
        return form.Uf.shape[0]
    if k in ("hss", "hodlr"):
        return form.N
    if k == "dense":
        return form.A.shape[0]
    if hasattr(form, "to_dense"):
        return form.N
    raise ConfigurationError(f"unknown form kind {k!r}")


def _toeplitz_dense(t1, t2):
    N = len(t1)
    i = np.arange(N)
    d = i[:, None] - i[None, :]
    return np.where(d >= 0, np.asarray(t1)[np.clip(d, 0, None)], np.asarray(t2)[np.clip(-d, 0, None)])


def materialize(form) -> np.ndarray:
    """Dense ``N x N`` matrix of a form."""
    k = form.kind
    if k == "diagonal":
        return np.diag(np.asarray(form.d, dtype=float))
    if k == "tridiagonal":
        return (np.diag(form.main) + np.diag(form.sub, -1) + np.diag(form.sup, 1)).astype(float)
    if k == "circulant":
        c = np.asarray(form.c, dtype=float)
        i = np.arange(len(c))
        return c[(i[:, None] - i[None, :]) % len(c)]
    if k == "toeplitz":
        return _toeplitz_dense(np.asarray(form.t1, float), np.asarray(form.t2, float))
    if k == "hankel":
        N = form_dim(form)
        i = np.arange(N)
        return np.asarray(form.h, dtype=float)[i[:, None] + i[None, :]]
    if k == "displacement":
        return np.array(form.A_dense, dtype=float)
    if k == "lowrank":
        return form.Uf @ form.Vf.T
    if k == "hss":
        return _hss_materialize(form)
    if k == "hodlr":
        return _hodlr_materialize(form)
    if k == "dense":
        return np.array(form.A, dtype=float)
    if hasattr(form, "to_dense"):
        return form.to_dense()
    raise ConfigurationError(f"unknown form kind {k!r}")


def _apply(form, X, transpose):
    N = form_dim(form)
    X = np.asarray(X, dtype=float)
    vec = X.ndim == 1
    if vec:
        X = X[:, None]
    if X.shape[0] != N:
        raise InputShapeError(f"expected {N} rows, got {X.shape[0]}")
    k = form.kind
    if k == "diagonal":
        Y = np.asarray(form.d, dtype=float)[:, None] * X
    elif k == "tridiagonal":
        main, sub, sup = (np.asarray(a, dtype=float) for a in (form.main, form.sub, form.sup))
        if transpose:
            sub, sup = sup, sub
        Y = main[:, None] * X
        Y[1:] += sub[:, None] * X[:-1]
        Y[:-1] += sup[:, None] * X[1:]
    elif k == "lowrank":
        Y = form.Uf @ (form.Vf.T @ X) if not transpose else form.Vf @ (form.Uf.T @ X)
    elif k == "hss":
        Y = _hss_apply(form, X, transpose)
    elif k == "hodlr":
        Y = _hodlr_apply(form, X, transpose)
    else:
        A = _dense_cache(form)
        Y = A.T @ X if transpose else A @ X
    return Y[:, 0] if vec else Y


def _dense_cache(form):
    A = getattr(form, "_dense", None)
    if A is None:
        A = materialize(form)
        object.__setattr__(form, "_dense", A)
    return A


def apply_form(form, x):
    """``materialize(form) @ x`` without forming the matrix where possible."""
    return _apply(form, x, False)


def apply_form_transpose(form, x):
    return _apply(form, x, True)


# ---------------------------------------------------------------------------
# displacement structure
# ---------------------------------------------------------------------------


def shift_matrix(N, t):
    """``Z_t``: ones on the subdiagonal and ``t`` in the top-right corner."""
    Zt = np.diag(np.ones(N - 1), -1)
    Zt[0, N - 1] = t
    return Zt


def displacement_to_dense(G, H):
    """Unique ``A`` with ``Z_1 A - A Z_{-1} = G H^T`` (Bartels-Stewart)."""
    G = np.asarray(G, dtype=float)
    H = np.asarray(H, dtype=float)
    N = G.shape[0]
    return sylvester_solve(shift_matrix(N, 1.0), shift_matrix(N, -1.0), G @ H.T)


# ---------------------------------------------------------------------------
# random generators
# ---------------------------------------------------------------------------


KINDS = (
    "diagonal", "block_diagonal", "tridiagonal", "circulant", "toeplitz", "hankel",
    "displacement", "lowrank", "hss", "hodlr", "dense", "orthogonal",
)


def rng_for(seed, stream=0):
    """Counter-based generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _decay_width(rho, cap):
    # singular values below 1e-20 relative are dropped; they are far below
    # double precision and would only cost storage
    t = int(np.floor(np.log(1e-20) / np.log(rho))) + 1
    return max(1, min(t, cap))


def _haar(rng, n, r):
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return Q * np.sign(np.diag(R))


def _sym(M):
    return np.triu(M) + np.triu(M, 1).swapaxes(-1, -2)


def random_hss(N, k, rng, symmetric=False, decay=None):
    ell = hss_leaf_level(k)
    b = 2**ell
    if N < 2 * b or N & (N - 1):
        raise ConfigurationError(f"HSS needs N a power of two with N >= {2 * b}; got N={N}, k={k}")
    h = N // 2
    tree = BinaryTree(N, b)
    n_couple = sum(1 for nd in tree.nodes if nd.depth >= 1 and not nd.is_leaf)
    n_leaves = len(tree.leaves)
    if decay is None:
        r = k
        U = rng.standard_normal((h, r))
        V = rng.standard_normal((h, r))
        if symmetric:
            W, Z = V, U
        else:
            W = rng.standard_normal((h, r))
            Z = rng.standard_normal((h, r))
        C = rng.standard_normal((n_couple, 2, r, r))
    else:
        if not 0 < decay < 1:
            raise ConfigurationError("decay rate must lie in (0, 1)")
        r = _decay_width(decay, h)
        D = decay ** np.arange(r)
        U = _haar(rng, h, r) * D
        V = _haar(rng, h, r)
        if symmetric:
            W, Z = V, U
        else:
            W = _haar(rng, h, r)
            Z = _haar(rng, h, r) * D
        C = rng.standard_normal((n_couple, 2, r, r))
        # top-half blocks use the undamped factors W, V: damp the cores
        levels, _ = hss_level_index(tree)
        for (half, _depth), (cidx, _starts) in levels.items():
            if half == 0:
                C[cidx] *= D[:, None] * D[None, :]
    if symmetric:
        C[:, 1] = np.swapaxes(C[:, 0], -1, -2)
    leaves = rng.standard_normal((n_leaves, b, b))
    if symmetric:
        leaves = _sym(leaves)
    return HssForm(N, k, U, V, W, Z, C, leaves, symmetric)


def random_hodlr(N, k, rng, symmetric=False, decay=None, leaf=None):
    if N & (N - 1) or N < 1:
        raise ConfigurationError(f"HODLR generator needs N a power of two, got {N}")
    b_leaf = hodlr_leaf_size(N, k) if leaf is None else leaf
    n_levels = int(np.log2(N // b_leaf))
    levels = []
    for lvl in range(1, n_levels + 1):
        n = 2 ** (lvl - 1)
        bs = N // (2 * n)
        if decay is None:
            r = k
            U = rng.standard_normal((n, bs, r))
            V = rng.standard_normal((n, bs, r))
            W = V if symmetric else rng.standard_normal((n, bs, r))
            Z = U if symmetric else rng.standard_normal((n, bs, r))
        else:
            if not 0 < decay < 1:
                raise ConfigurationError("decay rate must lie in (0, 1)")
            r = _decay_width(decay, bs)
            D = decay ** np.arange(r)
            U = np.stack([_haar(rng, bs, r) for _ in range(n)]) * D
            V = np.stack([_haar(rng, bs, r) for _ in range(n)])
            if symmetric:
                W, Z = V, U
            else:
                W = np.stack([_haar(rng, bs, r) for _ in range(n)]) * D
                Z = np.stack([_haar(rng, bs, r) for _ in range(n)])
        levels.append({"U": U, "V": V, "W": W, "Z": Z})
    leaves = rng.standard_normal((N // b_leaf, b_leaf, b_leaf))
    if symmetric:
        leaves = _sym(leaves)
    return HodlrForm(N, k, levels, leaves, symmetric)


def random_form(kind, N, k=1, seed=0, symmetric=False, decay=None):
    """Seeded random instance of a structure; parameters are i.i.d. Gaussian.

    With ``decay`` (HSS/HODLR only) off-diagonal blocks get singular values
    ``decay**(j-1)`` instead of exact rank ``k``.
    """
    rng = rng_for(seed)
    if N < 1:
        raise ConfigurationError("N must be positive")
    if decay is not None and kind not in ("hss", "hodlr"):
        raise ConfigurationError("decay mode applies to hss and hodlr only")
    if kind == "diagonal":
        return DiagonalForm(rng.standard_normal(N))
    if kind == "block_diagonal":
        if N % k:
            raise ConfigurationError("block size must divide N")
        blocks = rng.standard_normal((N // k, k, k))
        A = np.zeros((N, N))
        for t, B in enumerate(blocks):
            A[t * k:(t + 1) * k, t * k:(t + 1) * k] = B
        return DenseForm(A)
    if kind == "tridiagonal":
        main = rng.standard_normal(N)
        sub = rng.standard_normal(N - 1)
        sup = sub.copy() if symmetric else rng.standard_normal(N - 1)
        return TridiagonalForm(main, sub, sup, symmetric)
    if kind == "circulant":
        return CirculantForm(rng.standard_normal(N))
    if kind == "toeplitz":
        t1 = rng.standard_normal(N)
        t2 = rng.standard_normal(N)
        t2[0] = t1[0]
        return ToeplitzForm(t1, t2)
    if kind == "hankel":
        return HankelForm(rng.standard_normal(2 * N - 1))
    if kind == "displacement":
        G = rng.standard_normal((N, 2))
        H = rng.standard_normal((N, 2))
        return DisplacementForm(G, H, displacement_to_dense(G, H))
    if kind == "lowrank":
        Uf = rng.standard_normal((N, k))
        Vf = Uf.copy() if symmetric else rng.standard_normal((N, k))
        return LowRankForm(Uf, Vf)
    if kind == "hss":
        return random_hss(N, k, rng, symmetric, decay)
    if kind == "hodlr":
        if N & (N - 1):
            # centred block of a padded instance, so zero padding restores the tree
            Nt = 1 << (N - 1).bit_length()
            N1 = (Nt - N) // 2
            big = materialize(random_hodlr(Nt, k, rng, symmetric, decay))
            return DenseForm(big[N1:N1 + N, N1:N1 + N])
        return random_hodlr(N, k, rng, symmetric, decay)
    if kind == "dense":
        A = rng.standard_normal((N, N))
        return DenseForm(_sym(A) if symmetric else A)
    if kind == "orthogonal":
        return DenseForm(_haar(rng, N, N))
    raise ConfigurationError(f"unknown kind {kind!r}; choose from {KINDS}")


def free_parameter_count(form: HssForm) -> int:
    """Count the free parameters stored in an HSS form, honoring symmetry."""
    h, r = form.U.shape
    b = form.leaves.shape[1]
    n_leaves = form.leaves.shape[0]
    n_couple = form.coupling.shape[0]
    if form.symmetric:
        return 2 * h * r + n_couple * r * r + n_leaves * b * (b + 1) // 2
    return 4 * h * r + 2 * n_couple * r * r + n_leaves * b * b


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_ARRAY_FIELDS = {
    "diagonal": ("d",),
    "tridiagonal": ("main", "sub", "sup"),
    "circulant": ("c",),
    "toeplitz": ("t1", "t2"),
    "hankel": ("h",),
    "displacement": ("G", "H", "A_dense"),
    "lowrank": ("Uf", "Vf"),
    "dense": ("A",),
    "hss": ("U", "V", "W", "Z", "coupling", "leaves"),
}

_CLASSES = {
    "diagonal": DiagonalForm, "tridiagonal": TridiagonalForm, "circulant": CirculantForm,
    "toeplitz": ToeplitzForm, "hankel": HankelForm, "displacement": DisplacementForm,
    "lowrank": LowRankForm, "dense": DenseForm, "hss": HssForm,
}


def save_form(form, path, seed=None):
    """Write a form to an ``.npz`` container with a kind tag."""
    data = {"kind": np.array(form.kind), "seed": np.array(-1 if seed is None else int(seed))}
    header = {}
    if form.kind == "hodlr":
        header.update(N=form.N, k=form.k, symmetric=form.symmetric, n_levels=len(form.levels),
                      meta=form.meta)
        for i, lvl in enumerate(form.levels):
            if lvl is None:
                continue
            for name in "UVWZ":
                data[f"level{i}_{name}"] = lvl[name]
        if form.leaves is not None:
            data["leaves"] = form.leaves
    else:
        for name in _ARRAY_FIELDS[form.kind]:
            data[name] = np.asarray(getattr(form, name))
        if form.kind == "hss":
            header.update(N=form.N, k=form.k, symmetric=form.symmetric)
        if form.kind == "tridiagonal":
            header.update(symmetric=form.symmetric)
    data["header"] = np.array(json.dumps(header))
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_form(path):
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["kind"])
        header = json.loads(str(z["header"]))
        if kind == "hodlr":
            levels = []
            for i in range(header["n_levels"]):
                if f"level{i}_U" in z:
                    levels.append({name: z[f"level{i}_{name}"] for name in "UVWZ"})
                else:
                    levels.append(None)
            leaves = z["leaves"] if "leaves" in z else None
            return HodlrForm(header["N"], header["k"], levels, leaves, header["symmetric"],
                             header.get("meta", {}))
        arrays = {name: z[name] for name in _ARRAY_FIELDS[kind]}
    if kind == "hss":
        return HssForm(header["N"], header["k"], symmetric=header["symmetric"], **arrays)
    if kind == "tridiagonal":
        return TridiagonalForm(symmetric=header["symmetric"], **arrays)
    return _CLASSES[kind](**arrays)
