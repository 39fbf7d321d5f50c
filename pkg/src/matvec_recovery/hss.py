"""HSS recovery: sketch the top-level factors, then solve one sparse
least-squares system for every nested coupling block and diagonal block.

Each query contributes ``N`` equations. Coefficients of a coupling block are
Kronecker products ``F_r[row] (x) (F_c^T x)``; coefficients of a dense
diagonal block are shifted copies of the input. The system is solved by a
multifrontal QR that follows the HSS tree: every leaf eliminates its own
unknowns, passes a compressed contribution block to its parent, and so on
up to the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, UnderdeterminedError
from .lowrank import SketchConfig, rsvd_recover
from .numerics import orth
from .oracle import OracleHandle, query, sub_oracle
from .structured import BinaryTree, HssForm, hss_leaf_level, hss_parameter_count, rng_for

__all__ = [
    "HssConfig",
    "HssSystem",
    "NestedLayout",
    "RestrictedHssForm",
    "assemble_hss_system",
    "full_hss_layout",
    "node_bases",
    "solve_restricted",
    "pack_hss",
    "hss_parameter_count",
    "recover_hss",
    "recover_restricted_hss",
    "recover_top_factors",
    "solve_hss_system",
    "system_query_count",
]


@dataclass
class HssConfig:
    """Options for :func:`recover_hss`.

    ``system_queries`` overrides the number of queries used for the
    least-squares stage. ``query_rule="ceiling"`` uses the smallest count
    giving at least as many equations as unknowns; the default ``"cap"``
    uses ``3k`` (symmetric) or ``4k`` (general). With ``reuse_queries``
    the forward products spent on the top-level factors are appended to the
    system as extra equations; they are free and make the solve much less
    sensitive to noisy products.
    """

    k: int
    p: int = 5
    seed: int = 0
    system_queries: int | None = None
    query_rule: str = "cap"
    rank_tol: float = 1e-10
    reuse_queries: bool = True

    def __post_init__(self):
        if self.k < 1 or self.p < 0:
            raise ConfigurationError("need k >= 1 and p >= 0")
        if self.query_rule not in ("cap", "ceiling"):
            raise ConfigurationError(f"unknown query rule {self.query_rule!r}")


def system_query_count(N, k, symmetric, rule="cap"):
    """Queries for the least-squares stage."""
    if rule == "cap":
        return 3 * k if symmetric else 4 * k
    b = 2 ** hss_leaf_level(k)
    if symmetric:
        return math.ceil(k * k / b - 2 * k * k / N + b)
    return math.ceil(2 * k * k / b - 4 * k * k / N + b)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def _sym_pairs(n):
    a, c = np.triu_indices(n)
    return a, c


class NestedLayout:
    """Unknown layout of a nested-basis matrix over a binary tree.

    ``row_factor[node]`` and ``col_factor[node]`` give, for every non-root
    node, the basis whose span holds the rows / columns of each off-diagonal
    block touching that node. ``param_nodes`` are the internal nodes whose
    two coupling blocks are unknown. Leaves are either ``"dense"`` blocks or
    ``"core"`` blocks ``Fr S Fc^T``.

    Unknowns are ordered depth-first over the tree: coupling blocks first
    (upper then lower block per node; a single block when symmetric), then
    leaves left to right, row-major inside each block. Symmetric leaves keep
    only their upper triangle.
    """

    def __init__(self, tree: BinaryTree, row_factor: dict, col_factor: dict, param_nodes,
                 leaf_kind="dense", symmetric=False, leaf_row=None, leaf_col=None, sides=None):
        if leaf_kind not in ("dense", "core"):
            raise ConfigurationError(f"unknown leaf kind {leaf_kind!r}")
        self.tree = tree
        self.N = tree.N
        self.Fr = row_factor
        self.Fc = col_factor
        # core bases of the leaves; default to the coupling bases
        self.Lr = row_factor if leaf_row is None else leaf_row
        self.Lc = (self.Lr if symmetric else col_factor) if leaf_col is None else leaf_col
        self.leaf_kind = leaf_kind
        self.symmetric = symmetric
        self.param_nodes = [nd.index for nd in tree.nodes if nd.index in set(param_nodes)]
        self.blocks: dict = {}  # (node, side) -> (offset, rows, cols)
        self.colmap: list = []
        off = 0
        for t in self.param_nodes:
            c0, c1 = tree.nodes[t].children
            use = (True, True) if sides is None else sides.get(t, (True, True))
            if use[0] or (symmetric and use[1]):
                shp = (self.Fr[c0].shape[1], self.Fc[c1].shape[1])
                self.blocks[(t, 0)] = (off, *shp)
                self.colmap += [(("coupling", t, "upper"), (a, b)) for a in range(shp[0]) for b in range(shp[1])]
                off += shp[0] * shp[1]
            if symmetric:
                if (t, 0) in self.blocks:
                    self.blocks[(t, 1)] = self.blocks[(t, 0)]
            elif use[1]:
                shp = (self.Fr[c1].shape[1], self.Fc[c0].shape[1])
                self.blocks[(t, 1)] = (off, *shp)
                self.colmap += [(("coupling", t, "lower"), (a, b)) for a in range(shp[0]) for b in range(shp[1])]
                off += shp[0] * shp[1]
        self.n_coupling = off
        self.leaf_cols: dict = {}
        for leaf in tree.leaves:
            pairs = self._leaf_pairs(leaf)
            self.leaf_cols[leaf] = (off, pairs)
            self.colmap += [(("leaf", leaf), (int(a), int(c))) for a, c in zip(*pairs)]
            off += len(pairs[0])
        self.n_unknowns = off

    def _leaf_shape(self, leaf):
        if self.leaf_kind == "dense":
            b = self.tree.nodes[leaf].size
            return b, b
        return self.Lr[leaf].shape[1], self.Lc[leaf].shape[1]

    def _leaf_pairs(self, leaf):
        nr, nc = self._leaf_shape(leaf)
        if self.symmetric:
            return _sym_pairs(nr)
        a, c = np.indices((nr, nc))
        return a.ravel(), c.ravel()

    def ancestor_blocks(self, node):
        """``(ancestor, side)`` pairs with unknowns, nearest ancestor first."""
        return [(a, s) for a, s in self.tree.ancestors(node) if (a, s) in self.blocks]

    def block_columns(self, t, side):
        off, r, c = self.blocks[(t, side)]
        return np.arange(off, off + r * c)

    def own_columns(self, node):
        nd = self.tree.nodes[node]
        if nd.is_leaf:
            off, pairs = self.leaf_cols[node]
            return np.arange(off, off + len(pairs[0]))
        sides = (0,) if self.symmetric else (0, 1)
        parts = [self.block_columns(node, sd) for sd in sides if (node, sd) in self.blocks]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def rest_columns(self, node):
        parts = [self.block_columns(a, s) for a, s in self.ancestor_blocks(node)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def projections(self, X):
        """``Fc[node]^T X[node range]`` for every non-root node."""
        out = {}
        for nd in self.tree.nodes:
            if nd.index in self.Fc:
                out[nd.index] = self.Fc[nd.index].T @ X[nd.start:nd.start + nd.size]
        return out

    def leaf_frontal(self, leaf, X, proj):
        """Coefficients of the ``s * b`` equations on a leaf's rows.

        Returns the column indices and the dense coefficient block; rows are
        ordered query-major.
        """
        nd = self.tree.nodes[leaf]
        s = X.shape[1]
        b = nd.size
        Xl = X[nd.start:nd.start + b]  # b x s
        pa, pc = self.leaf_cols[leaf][1]
        if self.leaf_kind == "dense":
            eye = np.eye(b)
            # coefficient of D[a, c] in row i is x_c when a == i
            M = eye[:, pa][None, :, :] * Xl.T[:, pc][:, None, :]
            if self.symmetric:
                off = (pa != pc).astype(float)
                M = M + eye[:, pc][None, :, :] * (Xl.T[:, pa] * off)[:, None, :]
        else:
            Q = self.Lr[leaf]
            cq = self.Lc[leaf].T @ Xl  # r x s
            M = Q[:, pa][None, :, :] * cq.T[:, pc][:, None, :]
            if self.symmetric:
                off = (pa != pc).astype(float)
                M = M + Q[:, pc][None, :, :] * (cq.T[:, pa] * off)[:, None, :]
        blocks = [M.reshape(s * b, -1)]
        cols = [self.own_columns(leaf)]
        for a, side in self.ancestor_blocks(leaf):
            c0, c1 = self.tree.nodes[a].children
            child = (c0, c1)[side]
            rel = nd.start - self.tree.nodes[child].start
            Fr_rows = self.Fr[child][rel:rel + b]
            other = proj[(c1, c0)[side]]  # r x s
            if side == 1 and self.symmetric:
                # lower block is the transpose of the upper one
                K = np.einsum("qb,ia->qiba", other.T, Fr_rows)
            else:
                K = np.einsum("ia,qb->qiab", Fr_rows, other.T)
            blocks.append(K.reshape(s * b, -1))
            cols.append(self.block_columns(a, side))
        return np.concatenate(cols), np.hstack(blocks)


def full_hss_layout(N, leaf, U, V, W=None, Z=None, symmetric=False):
    """Layout of the unknowns of an HSS matrix whose top factors are known."""
    if symmetric:
        W, Z = V, U
    tree = BinaryTree(N, leaf)
    h = N // 2
    Fr, Fc = {}, {}
    for nd in tree.nodes:
        if nd.depth == 0:
            continue
        half = 0 if nd.start < h else 1
        a = nd.start - half * h
        rows = slice(a, a + nd.size)
        Fr[nd.index] = (W if half == 0 else U)[rows]
        Fc[nd.index] = (V if half == 0 else Z)[rows]
    params = [nd.index for nd in tree.nodes if nd.depth >= 1 and not nd.is_leaf]
    return NestedLayout(tree, Fr, Fc, params, "dense", symmetric)


# ---------------------------------------------------------------------------
# system
# ---------------------------------------------------------------------------


@dataclass
class HssSystem:
    """Least-squares system ``M theta = rhs`` for the HSS unknowns.

    Rows are ordered query-major (``row = q * N + i``). The sparse matrix is
    available as triplets (``rows``, ``cols``, ``vals``) or via
    :meth:`to_sparse`; ``colmap[j]`` names the block and position of
    unknown ``j``.
    """

    layout: NestedLayout
    inputs: np.ndarray
    rhs: np.ndarray
    frontals: dict = field(repr=False)

    @property
    def shape(self):
        return (self.layout.N * self.inputs.shape[1], self.layout.n_unknowns)

    @property
    def colmap(self):
        return self.layout.colmap

    @cached_property
    def _triplets(self):
        N = self.layout.N
        s = self.inputs.shape[1]
        R, C, Vv = [], [], []
        for leaf, (cols, M) in self.frontals.items():
            nd = self.layout.tree.nodes[leaf]
            b = nd.size
            rows = (np.arange(s)[:, None] * N + nd.start + np.arange(b)[None, :]).ravel()
            ii, jj = np.nonzero(M)
            R.append(rows[ii])
            C.append(cols[jj])
            Vv.append(M[ii, jj])
        if not R:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(R), np.concatenate(C), np.concatenate(Vv)

    @property
    def rows(self):
        return self._triplets[0]

    @property
    def cols(self):
        return self._triplets[1]

    @property
    def vals(self):
        return self._triplets[2]

    def to_sparse(self):
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)

    def write_matrix_market(self, path):
        scipy.io.mmwrite(path, self.to_sparse().tocoo())


def assemble_hss_system(layout: NestedLayout, inputs, outputs) -> HssSystem:
    """Build the system from queries ``inputs`` and reduced ``outputs``.

    ``outputs`` must already have the contribution of every known block
    (for a full HSS matrix: the two top-level blocks) subtracted.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(outputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape != Y.shape or X.shape[0] != layout.N:
        raise ConfigurationError(f"inputs {X.shape} and outputs {Y.shape} must both be N x s with N={layout.N}")
    proj = layout.projections(X)
    frontals = {leaf: layout.leaf_frontal(leaf, X, proj) for leaf in layout.tree.leaves}
    return HssSystem(layout, X, Y.T.reshape(-1), frontals)


@dataclass
class _Eliminated:
    own: np.ndarray
    rest: np.ndarray
    R: np.ndarray
    S: np.ndarray
    top: np.ndarray


def solve_hss_system(system: HssSystem, rank_tol=1e-10, equilibrate=True):
    """Least-squares solution by multifrontal Householder QR over the tree.

    Returns ``(theta, residual_norm)``. Raises :class:`UnderdeterminedError`
    when a pivot block has ``sigma_min <= rank_tol * sigma_max``.
    """
    layout = system.layout
    tree = layout.tree
    N = layout.N
    n = layout.n_unknowns
    s = system.inputs.shape[1]
    if N * s < n:
        raise UnderdeterminedError(f"{N * s} equations for {n} unknowns; take more queries")

    # column equilibration from the leaf blocks (every row lives in one leaf)
    norm2 = np.zeros(n)
    for cols, M in system.frontals.values():
        np.add.at(norm2, cols, np.einsum("ij,ij->j", M, M))
    if np.any(norm2 == 0.0):
        raise UnderdeterminedError("some unknowns do not appear in any equation; take more queries")
    scale = 1.0 / np.sqrt(norm2) if equilibrate else np.ones(n)

    rhs = system.rhs.reshape(s, N)
    elim: dict[int, _Eliminated] = {}
    contrib: dict[int, tuple] = {}
    sv_min, sv_max = np.inf, 0.0
    worst = None
    for nd in reversed(tree.nodes):  # children always follow parents in preorder
        idx = nd.index
        own = layout.own_columns(idx)
        rest = layout.rest_columns(idx)
        if nd.is_leaf:
            cols, M = system.frontals[idx]
            b = rhs[:, nd.start:nd.start + nd.size].reshape(-1)
            F = np.hstack([M * scale[cols], b[:, None]])
            # frontal columns are own ++ rest by construction
        else:
            pos = {int(c): i for i, c in enumerate(np.concatenate([own, rest]))}
            ncol = len(own) + len(rest)
            parts = []
            for ch in nd.children:
                ccols, C = contrib.pop(ch)
                block = np.zeros((C.shape[0], ncol + 1))
                block[:, [pos[int(c)] for c in ccols]] = C[:, :-1]
                block[:, -1] = C[:, -1]
                parts.append(block)
            F = np.vstack(parts)
        k = len(own)
        if F.shape[0] < k:
            raise UnderdeterminedError(
                f"node {idx}: {F.shape[0]} equations left for {k} unknowns; take more queries"
            )
        R = np.linalg.qr(F, mode="r") if F.shape[0] else np.zeros((0, F.shape[1]))
        if k:
            Rown = R[:k, :k]
            sv = np.linalg.svd(Rown, compute_uv=False)
            sv_max = max(sv_max, sv[0])
            if sv[-1] < sv_min:
                sv_min, worst = sv[-1], idx
            elim[idx] = _Eliminated(own, rest, Rown, R[:k, k:-1], R[:k, -1])
        contrib[idx] = (rest, R[k:, k:])
    if sv_max == 0.0 or sv_min <= rank_tol * sv_max:
        raise UnderdeterminedError(
            f"system is numerically rank deficient at node {worst} "
            f"(sigma_min/sigma_max = {sv_min / sv_max if sv_max else 0.0:.2e}); take more queries"
        )
    _, last = contrib.pop(0)
    residual = float(np.linalg.norm(last[:, -1])) if last.size else 0.0

    theta = np.zeros(n)
    for nd in tree.nodes:
        e = elim.get(nd.index)
        if e is None:
            continue
        r = e.top - e.S @ theta[e.rest] if e.rest.size else e.top
        theta[e.own] = sla.solve_triangular(e.R, r)
    return theta * scale, residual


# ---------------------------------------------------------------------------
# full HSS recovery
# ---------------------------------------------------------------------------


def recover_top_factors(oracle: OracleHandle, cfg, symmetric=False):
    """Factors of the two top-level off-diagonal blocks by randomized SVD.

    Returns ``(U, V)`` with ``A[h:, :h] = U V^T`` (symmetric) or
    ``(U, V, W, Z)`` with additionally ``A[:h, h:] = W Z^T``. ``U`` and
    ``W`` have orthonormal columns.
    """
    N = oracle.dim
    if N % 2:
        raise ConfigurationError("HSS recovery needs even N")
    h = N // 2
    top = np.arange(h)
    bot = np.arange(h, N)
    sk = SketchConfig(cfg.k, cfg.p, cfg.seed)
    if symmetric:
        # the transpose of the lower-left block is the upper-right block
        lower = sub_oracle(oracle, bot, top)
        upper = sub_oracle(oracle, top, bot)
        sym_lower = OracleHandle(h, lower.apply, upper.apply)
        lr = rsvd_recover(sym_lower, sk)
        return lr.Uf, lr.Vf
    lr1 = rsvd_recover(sub_oracle(oracle, bot, top), sk)
    lr2 = rsvd_recover(sub_oracle(oracle, top, bot), SketchConfig(cfg.k, cfg.p, cfg.seed + 7919))
    return lr1.Uf, lr1.Vf, lr2.Uf, lr2.Vf


def _pad(M, r):
    return np.hstack([M, np.zeros((M.shape[0], r - M.shape[1]))])


def recover_hss(oracle: OracleHandle, cfg: HssConfig, symmetric=False, return_info=False):
    """Recover a rank-``k`` HSS matrix.

    Ledger: ``(5k + p, 0)`` symmetric, ``(6k + 2p, 2k)`` general with the
    default query rule.
    """
    N = oracle.dim
    k = cfg.k
    ell = hss_leaf_level(k)
    b = 2**ell
    if N & (N - 1) or N < 2 * b:
        raise ConfigurationError(f"need N a power of two with N >= {2 * b}; got N={N}, k={k}")
    seen = []
    if cfg.reuse_queries:
        def apply_logged(X, base=oracle.apply):
            Y = base(X)
            seen.append((np.array(X, dtype=float), np.array(Y, dtype=float)))
            return Y

        logged = OracleHandle(N, apply_logged, oracle.apply_transpose, oracle.ledger)
    else:
        logged = oracle
    fac = recover_top_factors(logged, cfg, symmetric)
    if symmetric:
        U, V = fac
        W, Z = V, U
    else:
        U, V, W, Z = fac
    s = cfg.system_queries or system_query_count(N, k, symmetric, cfg.query_rule)
    X = rng_for(cfg.seed, 301).standard_normal((N, s))
    Y = query(oracle, X)
    if seen:
        X = np.hstack([X] + [x for x, _ in seen])
        Y = np.hstack([Y] + [y for _, y in seen])
    h = N // 2
    Y = Y.copy()
    Y[h:] -= U @ (V.T @ X[:h])
    Y[:h] -= W @ (Z.T @ X[h:])
    layout = full_hss_layout(N, b, U, V, W, Z, symmetric)
    system = assemble_hss_system(layout, X, Y)
    theta, residual = solve_hss_system(system, rank_tol=cfg.rank_tol)
    form = pack_hss(layout, theta, N, k, U, V, W, Z, symmetric)
    if return_info:
        return form, {"residual": residual, "rhs_norm": float(np.linalg.norm(system.rhs)),
                      "system_shape": system.shape, "system_queries": s,
                      "reused_queries": X.shape[1] - s}
    return form


def pack_hss(layout: NestedLayout, theta, N, k, U, V, W, Z, symmetric):
    """Repackage a solution vector into an :class:`HssForm`."""
    r = max(U.shape[1], V.shape[1], W.shape[1], Z.shape[1], 1)
    tree = layout.tree
    couplings = np.zeros((len(layout.param_nodes), 2, r, r))
    for i, t in enumerate(layout.param_nodes):
        for side in (0, 1):
            off, nr, nc = layout.blocks[(t, side)]
            H = theta[off:off + nr * nc].reshape(nr, nc)
            if symmetric and side == 1:
                H = H.T
            couplings[i, side, :H.shape[0], :H.shape[1]] = H
    b = layout.tree.leaf
    leaves = np.zeros((len(tree.leaves), b, b))
    for i, leaf in enumerate(tree.leaves):
        off, (pa, pc) = layout.leaf_cols[leaf]
        vals = theta[off:off + len(pa)]
        leaves[i][pa, pc] = vals
        if symmetric:
            leaves[i][pc, pa] = vals
    return HssForm(N, k, _pad(U, r), _pad(V, r), _pad(W, r), _pad(Z, r), couplings, leaves, symmetric)


# ---------------------------------------------------------------------------
# restricted HSS
# ---------------------------------------------------------------------------


@dataclass
class RestrictedHssForm:
    """Nested-basis matrix with known per-block orthonormal bases.

    Every off-diagonal block ``A[c0, c1]`` of internal node ``t`` is
    ``Qr[c0] H_up Qc[c1]^T`` and ``A[c1, c0] = Qr[c1] H_lo Qc[c0]^T``; leaf
    blocks are ``Qr[l] S Qc[l]^T``.
    """

    tree: BinaryTree
    Qr: dict
    Qc: dict
    coupling: dict  # node -> (H_up, H_lo)
    cores: dict  # leaf -> S
    symmetric: bool = True
    Lr: dict | None = None  # leaf core bases, default Qr / Qc
    Lc: dict | None = None
    kind = "restricted_hss"

    @property
    def N(self):
        return self.tree.N

    def to_dense(self):
        A = np.zeros((self.N, self.N))
        nodes = self.tree.nodes
        for t, (Hu, Hl) in self.coupling.items():
            c0, c1 = nodes[t].children
            r0 = slice(nodes[c0].start, nodes[c0].start + nodes[c0].size)
            r1 = slice(nodes[c1].start, nodes[c1].start + nodes[c1].size)
            A[r0, r1] = self.Qr[c0] @ Hu @ self.Qc[c1].T
            A[r1, r0] = self.Qr[c1] @ Hl @ self.Qc[c0].T
        Lr = self.Qr if self.Lr is None else self.Lr
        Lc = self.Qc if self.Lc is None else self.Lc
        for leaf, S in self.cores.items():
            nd = nodes[leaf]
            r = slice(nd.start, nd.start + nd.size)
            A[r, r] = Lr[leaf] @ S @ Lc[leaf].T
        return A


def node_bases(tree: BinaryTree, F, cutoff=1e-12):
    """Orthonormal basis of ``F[range]`` for every node of the tree."""
    out = {}
    for nd in tree.nodes:
        out[nd.index] = orth(F[nd.start:nd.start + nd.size], cutoff=cutoff)
    return out


def recover_restricted_hss(oracle: OracleHandle, row_factor, col_factor=None, m_rank=None,
                           leaf_size=None, seed=0, rank_tol=1e-10, return_info=False):
    """Recover a restricted HSS matrix in ``2 * m_rank`` forward queries.

    ``row_factor`` (``N x m``) spans the column spaces of every block when
    restricted to the block's rows; ``col_factor`` does the same for row
    spaces (``None`` means symmetric with ``col_factor = row_factor``).
    Only the coupling and diagonal cores are unknown.
    """
    N = oracle.dim
    F = np.asarray(row_factor, dtype=float)
    symmetric = col_factor is None
    G = F if symmetric else np.asarray(col_factor, dtype=float)
    m = F.shape[1] if m_rank is None else int(m_rank)
    if leaf_size is None:
        leaf_size = max(2, 1 << max(m - 1, 0).bit_length())
    leaf_size = min(leaf_size, N)
    tree = BinaryTree(N, leaf_size)
    Qr = node_bases(tree, F)
    Qc = Qr if symmetric else node_bases(tree, G)
    return solve_restricted(oracle, tree, Qr, Qc, symmetric=symmetric, queries=2 * m, seed=seed,
                            rank_tol=rank_tol, return_info=return_info)


def solve_restricted(oracle: OracleHandle, tree: BinaryTree, Qr: dict, Qc: dict, Lr=None, Lc=None,
                     sides=None, symmetric=True, queries=None, seed=0, rank_tol=1e-10,
                     return_info=False, extend=False):
    """Nested-basis recovery with explicit per-node bases.

    ``Qr``/``Qc`` hold the coupling bases of every node, ``Lr``/``Lc`` the
    leaf core bases (default: the same). ``sides`` maps an internal node to
    ``(upper, lower)`` flags selecting which coupling blocks are unknown.
    With ``extend=True`` a rank-deficient system triggers further batches of
    queries (half the initial count each) until it is solvable.
    """
    N = oracle.dim
    Lr = Qr if Lr is None else Lr
    Lc = (Lr if symmetric else Qc) if Lc is None else Lc
    Fr = {i: Q for i, Q in Qr.items() if i != 0}
    Fc = {i: Q for i, Q in Qc.items() if i != 0}
    params = [nd.index for nd in tree.nodes if not nd.is_leaf]
    layout = NestedLayout(tree, Fr, Fc, params, "core", symmetric, Lr, Lc, sides)
    if layout.n_unknowns == 0:
        form = RestrictedHssForm(tree, Qr, Qc, {}, {}, symmetric, Lr, Lc)
        return (form, {"residual": 0.0, "queries": 0}) if return_info else form
    s = max(int(queries) if queries is not None else 2, 1)
    rng = rng_for(seed, 401)
    X = rng.standard_normal((N, s))
    Y = query(oracle, X)
    while True:
        system = assemble_hss_system(layout, X, Y)
        try:
            theta, residual = solve_hss_system(system, rank_tol=rank_tol)
            break
        except UnderdeterminedError:
            if not extend or X.shape[1] >= N:
                raise
            Xn = rng.standard_normal((N, min(max(s // 2, 1), N - X.shape[1])))
            X = np.hstack([X, Xn])
            Y = np.hstack([Y, query(oracle, Xn)])
    coupling = {}
    for t in params:
        mats = []
        for side in (0, 1):
            c0, c1 = tree.nodes[t].children
            if (t, side) not in layout.blocks:
                rows, cols = (Qr[c0], Qc[c1]) if side == 0 else (Qr[c1], Qc[c0])
                mats.append(np.zeros((rows.shape[1], cols.shape[1])))
                continue
            off, nr, nc = layout.blocks[(t, side)]
            H = theta[off:off + nr * nc].reshape(nr, nc)
            mats.append(H.T if symmetric and side == 1 else H)
        coupling[t] = tuple(mats)
    cores = {}
    for leaf in tree.leaves:
        off, (pa, pc) = layout.leaf_cols[leaf]
        nr, nc = Lr[leaf].shape[1], Lc[leaf].shape[1]
        S = np.zeros((nr, nc))
        S[pa, pc] = theta[off:off + len(pa)]
        if symmetric:
            S[pc, pa] = theta[off:off + len(pa)]
        cores[leaf] = S
    form = RestrictedHssForm(tree, Qr, Qc, coupling, cores, symmetric, Lr, Lc)
    if return_info:
        return form, {"residual": residual, "rhs_norm": float(np.linalg.norm(system.rhs)),
                      "queries": int(X.shape[1])}
    return form
