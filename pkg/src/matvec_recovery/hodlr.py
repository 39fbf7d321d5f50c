"""HODLR recovery by level-by-level sketching with projected inputs.

Level ``l`` has ``2**(l-1)`` nodes; node ``t`` owns the sibling ranges
``I`` (first half) and ``J`` (second half) and the off-diagonal blocks
``A[J, I]`` (lower) and ``A[I, J]`` (upper). Inputs at a level are
projected away from a *blacklist*: the row spaces of every block already
processed, restricted to the input range. Those blocks then contribute
nothing, and each level block can be sketched on its own.

Blocks whose projected sketch comes back (numerically) empty are *failed*.
They are recovered up to their projection onto the blacklist by a second
pass that projects outputs instead of inputs. What is left over is a
restricted HSS matrix in the blacklist bases, recovered by a final
least-squares solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegeneracyError
from .hss import RestrictedHssForm, solve_restricted
from .numerics import orth
from .oracle import OracleHandle, QueryLedger, query, query_transpose
from .structured import BinaryTree, HodlrForm, apply_form, apply_form_transpose, rng_for

FAIL_REL = 1e-8  # failure threshold relative to |input| * |A|
COND_MAX = 1e6  # largest acceptable condition number of a pass-1 core
RANK_REL = 1e-13  # numerical rank cutoff relative to a block's largest singular value


def stop_level(N, k, p):
    """Smallest level ``w`` with ``2**(n-w) - (w-1)*k < k + p``, capped at ``n``."""
    n = _log2_exact(N)
    for ell in range(1, n + 1):
        if 2 ** (n - ell) - (ell - 1) * k < k + p:
            return ell
    return max(n, 1)


def _log2_exact(N):
    if N < 1 or N & (N - 1):
        raise ConfigurationError(f"N must be a power of two, got {N}")
    return N.bit_length() - 1


def _basis(F, start, size):
    """Orthonormal basis of the blacklist restricted to ``[start, start + size)``."""
    if F is None or F.shape[1] == 0:
        return np.zeros((size, 0))
    return orth(F[start:start + size], cutoff=1e-12)


def _perp(Q, X):
    return X - Q @ (Q.T @ X) if Q.shape[1] else X.copy()


def project_inputs(X, blacklist, level, part="first"):
    """Project the level-``level`` input blocks away from the blacklist.

    ``part`` picks the blocks: ``"first"`` for the ``I`` halves,
    ``"second"`` for the ``J`` halves, ``"both"`` for every block. Other rows
    are returned unchanged.
    """
    X = np.array(X, dtype=float, copy=True)
    F = blacklist.matrix if isinstance(blacklist, Blacklist) else blacklist
    N = X.shape[0]
    b = N >> level
    offs = {"first": (0,), "second": (1,), "both": (0, 1)}[part]
    for t in range(1 << (level - 1)):
        for o in offs:
            s = (2 * t + o) * b
            X[s:s + b] = _perp(_basis(F, s, b), X[s:s + b])
    return X


@dataclass
class Blacklist:
    """Per-level ``N x k`` blocks of blacklist vectors."""

    N: int
    levels: list = field(default_factory=list)

    @property
    def matrix(self):
        if not self.levels:
            return np.zeros((self.N, 0))
        return np.hstack(self.levels)

    @property
    def m(self):
        return sum(B.shape[1] for B in self.levels)


def hodlr_reconstruct_apply(form: HodlrForm, x):
    """Apply a (possibly partially recovered) HODLR form."""
    return apply_form(form, x)


# ---------------------------------------------------------------------------
# generic symmetric rank-1 recovery
# ---------------------------------------------------------------------------


def _residual_ops(oracle, partial, symmetric):
    def fwd(X):
        return query(oracle, X) - apply_form(partial, X)

    def tr(X):
        if symmetric:
            return fwd(X)
        return query_transpose(oracle, X) - apply_form_transpose(partial, X)

    return fwd, tr


def _pad_levels(level_nodes, n, b):
    """Stack per-node factor lists into padded ``(n, b, r)`` arrays."""
    r = max([M.shape[1] for M in level_nodes] + [1])
    out = np.zeros((n, b, r))
    for t, M in enumerate(level_nodes):
        out[t, :, :M.shape[1]] = M
    return out


def _clean_terminal(fwd, tr, N, bw, p, rng, symmetric):
    """Diagonal blocks of a residual whose off-diagonal part is zero."""
    nl = N // bw
    X = rng.standard_normal((N, bw + p))
    W = fwd(X)
    Qs = [orth(W[i * bw:(i + 1) * bw], cutoff=1e-12) for i in range(nl)]
    r = max([Q.shape[1] for Q in Qs] + [0])
    leaves = np.zeros((nl, bw, bw))
    if r == 0:
        return leaves
    Uw = np.zeros((N, r))
    for i, Q in enumerate(Qs):
        Uw[i * bw:(i + 1) * bw, :Q.shape[1]] = Q
    Vw = tr(Uw)
    for i, Q in enumerate(Qs):
        leaves[i] = Q @ Vw[i * bw:(i + 1) * bw, :Q.shape[1]].T
    return leaves


def recover_hodlr_generic_rank1(oracle: OracleHandle, p=5, seed=0) -> HodlrForm:
    """Symmetric rank-1 HODLR recovery for generic (random) parameters.

    Per level: one batch of ``1 + p`` projected inputs on the ``I`` blocks
    reveals each ``u``; one re-projected input per ``J`` block reveals
    ``v``. Terminal blocks of size ``2**(n-w+1)`` are then sketched against
    the residual oracle.
    """
    N = oracle.dim
    n = _log2_exact(N)
    w = stop_level(N, 1, p)
    rng = rng_for(seed, 501)
    F = np.zeros((N, 0))
    levels = []
    for ell in range(1, w):
        b = N >> ell
        nn = 1 << (ell - 1)
        X = np.zeros((N, 1 + p))
        for t in range(nn):
            s = 2 * t * b
            X[s:s + b] = rng.standard_normal((b, 1 + p))
        X = project_inputs(X, F, ell, "first")
        Wout = query(oracle, X)
        us, Y = [], np.zeros((N, 1))
        for t in range(nn):
            J = (2 * t + 1) * b
            block = Wout[J:J + b]
            if np.linalg.norm(block) == 0.0:
                raise DegeneracyError(f"level {ell}, node {t}: projected output vanished")
            u = np.linalg.svd(block, full_matrices=False)[0][:, :1]
            us.append(u)
            Y[J:J + b] = _perp(_basis(F, J, b), u)
        Vout = query(oracle, Y)
        Us, Vs = [], []
        col = np.zeros((N, 1))
        for t in range(nn):
            I, J = 2 * t * b, (2 * t + 1) * b
            den = float(Y[J:J + b, 0] @ us[t][:, 0])
            if abs(den) <= 1e-12:
                raise DegeneracyError(f"level {ell}, node {t}: vanishing normalization")
            v = Vout[I:I + b] / den
            Us.append(us[t])
            Vs.append(v)
            col[I:I + b] = v
            col[J:J + b] = us[t]
        F = np.hstack([F, col])
        U = _pad_levels(Us, nn, b)
        V = _pad_levels(Vs, nn, b)
        levels.append({"U": U, "V": V, "W": V, "Z": U})
    bw = 2 ** (n - w + 1)
    partial = HodlrForm(N, 1, levels, None, True)
    fwd, tr = _residual_ops(oracle, partial, True)
    leaves = _clean_terminal(fwd, tr, N, bw, p, rng, True)
    return HodlrForm(N, 1, levels, leaves, True, {"stop_level": w, "blacklist_size": F.shape[1]})


# ---------------------------------------------------------------------------
# general recovery
# ---------------------------------------------------------------------------


def _new_directions(S_vectors, ref, k):
    """Orthonormal directions of projected vectors that are not round-off."""
    if S_vectors.shape[1] == 0 or ref == 0.0:
        return np.zeros((S_vectors.shape[0], 0))
    return orth(S_vectors, abs_tol=RANK_REL * ref, rank=k)


class _State:
    def __init__(self, N, k, symmetric):
        self.N = N
        self.k = k
        self.symmetric = symmetric
        self.Fc = np.zeros((N, 0))  # row spaces of processed blocks
        self.Fr = np.zeros((N, 0))  # column spaces
        self.norm_est = 0.0
        self.failures = 0
        self.warnings: list = []
        self.status: dict = {}
        self.snapshots: dict = {}  # level -> blacklists before that level
        self.failed: dict = {}  # level -> node -> (upper failed, lower failed)

    def threshold(self, X):
        return FAIL_REL * np.linalg.norm(X) * self.norm_est

    def check_ambiguous(self, value, tau, where):
        if tau > 0 and tau / 10 < value <= 10 * tau:
            self.warnings.append(f"{where}: output norm {value:.3e} within 10x of threshold {tau:.3e}")


def _sketch_direction(st, fwd, tr, level, rng, p, lower):
    """Pass 1 and pass 2 for the lower (``A[J, I]``) or upper blocks.

    Returns per-node factors ``(U, V)`` with ``block = U V^T`` and the new
    blacklist directions ``(row-space at src, column-space at dst)``.
    """
    N, k = st.N, st.k
    b = N >> level
    nn = 1 << (level - 1)
    pairs = []
    for t in range(nn):
        I, J = 2 * t * b, (2 * t + 1) * b
        pairs.append((I, J) if lower else (J, I))  # (src, dst)
    Qc = [_basis(st.Fc, s, b) for s, _ in pairs]
    Qr = [_basis(st.Fr, d, b) for _, d in pairs]

    X = np.zeros((N, k + p))
    for t, (s, d) in enumerate(pairs):
        X[s:s + b] = _perp(Qc[t], rng.standard_normal((b, k + p)))
    O = fwd(X)
    nx = np.linalg.norm(X)
    if nx > 0:
        st.norm_est = max(st.norm_est, np.linalg.norm(O) / nx)

    Q1s, fwd_oks = [], []
    Y = np.zeros((N, k + p))
    for t, (s, d) in enumerate(pairs):
        Od = O[d:d + b]
        fwd_ok = np.linalg.norm(Od) > st.threshold(X[s:s + b])
        Q1 = orth(Od, cutoff=RANK_REL, rank=k) if fwd_ok else np.zeros((b, 0))
        Q1s.append(Q1)
        fwd_oks.append(fwd_ok)
        Y[d:d + b] = _perp(Qr[t], rng.standard_normal((b, k + p)))
    T = tr(Y)
    ny = np.linalg.norm(Y)
    if ny > 0:
        st.norm_est = max(st.norm_est, np.linalg.norm(T) / ny)

    factors = [None] * nn
    failed = []
    flags = []
    side = "lower" if lower else "upper"
    for t, (s, d) in enumerate(pairs):
        Od, Td = O[d:d + b], T[s:s + b]
        Yt = Y[d:d + b]
        tx, ty = st.threshold(X[s:s + b]), st.threshold(Yt)
        fwd_ok, Q1 = fwd_oks[t], Q1s[t]
        nt = np.linalg.norm(Td)
        tr_ok = nt > ty
        st.check_ambiguous(np.linalg.norm(Od), tx, f"level {level} node {t} {side} forward")
        st.check_ambiguous(nt, ty, f"level {level} node {t} {side} transpose")
        flags.append((bool(fwd_ok), bool(tr_ok)))
        ok = fwd_ok and tr_ok and Q1.shape[1] == k
        if ok:
            M = Q1.T @ Yt
            sv = np.linalg.svd(M, compute_uv=False)
            ok = sv[-1] > 0 and sv[0] / sv[-1] < COND_MAX
        if ok:
            # block = Q1 C with C^T (Q1^T S Y) = block^T S Y
            Ct = np.linalg.lstsq(M.T, Td.T, rcond=None)[0].T
            factors[t] = (Q1, Ct)
        else:
            Q2 = orth(Td, cutoff=RANK_REL, rank=k) if tr_ok else np.zeros((b, 0))
            failed.append((t, Q1, Q2))

    if failed:
        st.failures += len(failed)
        r1 = max(Q1.shape[1] for _, Q1, _ in failed)
        r2 = max(Q2.shape[1] for _, _, Q2 in failed)
        B1s, B2s = {}, {}
        if r1:
            Z = np.zeros((N, r1))
            for t, Q1, _ in failed:
                d = pairs[t][1]
                Z[d:d + b, :Q1.shape[1]] = Q1
            R = tr(Z)
            for t, Q1, _ in failed:
                s = pairs[t][0]
                B1s[t] = _perp(Qc[t], R[s:s + b, :Q1.shape[1]])
        if r2:
            Z = np.zeros((N, r2))
            for t, _, Q2 in failed:
                s = pairs[t][0]
                Z[s:s + b, :Q2.shape[1]] = Q2
            R = fwd(Z)
            for t, _, Q2 in failed:
                d = pairs[t][1]
                B2s[t] = _perp(Qr[t], R[d:d + b, :Q2.shape[1]])
        for t, Q1, Q2 in failed:
            B1 = B1s.get(t, np.zeros((b, 0)))
            B2 = B2s.get(t, np.zeros((b, 0)))
            # block - P_r block P_c = block S_c + S_r block P_c
            PQ2 = Q2 - _perp(Qc[t], Q2)
            factors[t] = (np.hstack([Q1, B2]), np.hstack([B1, PQ2]))

    new_c, new_r = [], []
    for t in range(nn):
        U, V = factors[t]
        new_c.append(_new_directions(_perp(Qc[t], V), np.linalg.norm(V, 2) if V.size else 0.0, k))
        new_r.append(_new_directions(_perp(Qr[t], U), np.linalg.norm(U, 2) if U.size else 0.0, k))
    return pairs, factors, new_c, new_r, flags, {t for t, _, _ in failed}


def _place(N, b, pairs, vecs, which, k):
    """Blacklist block of ``k`` columns holding ``vecs[t]`` at each range."""
    B = np.zeros((N, k))
    for t, v in enumerate(vecs):
        start = pairs[t][which]
        B[start:start + b, :v.shape[1]] = v
    return B


def _recover_general(oracle: OracleHandle, k, p, seed, symmetric):
    N = oracle.dim
    n = _log2_exact(N)
    if k < 1 or p < 0:
        raise ConfigurationError("need k >= 1 and p >= 0")
    w = stop_level(N, k, p)
    rng = rng_for(seed, 601)
    st = _State(N, k, symmetric)

    def fwd(X):
        return query(oracle, X)

    def tr(X):
        return query(oracle, X) if symmetric else query_transpose(oracle, X)

    levels = []
    for ell in range(1, w):
        b = N >> ell
        nn = 1 << (ell - 1)
        st.snapshots[ell] = (st.Fc, st.Fr)
        pairs, facL, ncL, nrL, flagsL, failL = _sketch_direction(st, fwd, tr, ell, rng, p, lower=True)
        UL = _pad_levels([f[0] for f in facL], nn, b)
        VL = _pad_levels([f[1] for f in facL], nn, b)
        if symmetric:
            levels.append({"U": UL, "V": VL, "W": VL, "Z": UL})
            st.status[ell] = [{"lower": fl[0], "upper": fl[1]} for fl in flagsL]
            st.failed[ell] = {t: (t in failL, t in failL) for t in range(nn)}
            # row space of the lower block sits at I, its column space at J
            blk = _place(N, b, pairs, ncL, 0, k) + _place(N, b, pairs, nrL, 1, k)
            st.Fc = st.Fr = np.hstack([st.Fc, blk])
        else:
            pairsK, facK, ncK, nrK, flagsK, failK = _sketch_direction(st, fwd, tr, ell, rng, p, lower=False)
            st.failed[ell] = {t: (t in failK, t in failL) for t in range(nn)}
            UK = _pad_levels([f[0] for f in facK], nn, b)
            VK = _pad_levels([f[1] for f in facK], nn, b)
            levels.append({"U": UL, "V": VL, "W": UK, "Z": VK})
            st.status[ell] = [
                {"lower": fl[0], "lower_transpose": fl[1], "upper": fk[0], "upper_transpose": fk[1]}
                for fl, fk in zip(flagsL, flagsK)
            ]
            st.Fc = np.hstack([st.Fc, _place(N, b, pairs, ncL, 0, k) + _place(N, b, pairsK, ncK, 0, k)])
            st.Fr = np.hstack([st.Fr, _place(N, b, pairs, nrL, 1, k) + _place(N, b, pairsK, nrK, 1, k)])
        # drop all-zero blacklist columns
        st.Fc = st.Fc[:, np.any(st.Fc != 0, axis=0)]
        st.Fr = st.Fc if symmetric else st.Fr[:, np.any(st.Fr != 0, axis=0)]

    bw = 2 ** (n - w + 1)
    nl = N // bw
    partial = HodlrForm(N, k, levels, None, symmetric)
    rfwd, rtr = _residual_ops(oracle, partial, symmetric)
    meta = {"stop_level": w, "terminal_size": bw, "status": {str(l): v for l, v in st.status.items()},
            "warnings": st.warnings, "failed_blocks": st.failures}

    if st.failures == 0:
        leaves = _clean_terminal(rfwd, rtr, N, bw, p, rng, symmetric)
        meta.update(blacklist_size=int(st.Fc.shape[1]), pass3=False)
        return HodlrForm(N, k, levels, leaves, symmetric, meta)

    # terminal blocks modulo the blacklist: D - P_r D P_c = D S_c + S_r D - S_r D S_c
    Qc = [_basis(st.Fc, i * bw, bw) for i in range(nl)]
    Qr = Qc if symmetric else [_basis(st.Fr, i * bw, bw) for i in range(nl)]
    dc = max(bw - Q.shape[1] for Q in Qc)
    X = np.zeros((N, dc + p))
    for i in range(nl):
        X[i * bw:(i + 1) * bw] = _perp(Qc[i], rng.standard_normal((bw, dc + p)))
    O = rfwd(X)
    DSc = [O[i * bw:(i + 1) * bw] @ np.linalg.pinv(X[i * bw:(i + 1) * bw], rcond=1e-10) for i in range(nl)]
    if symmetric:
        SrD = [M.T for M in DSc]
    else:
        dr = max(bw - Q.shape[1] for Q in Qr)
        Y = np.zeros((N, dr + p))
        for i in range(nl):
            Y[i * bw:(i + 1) * bw] = _perp(Qr[i], rng.standard_normal((bw, dr + p)))
        T = rtr(Y)
        SrD = [(T[i * bw:(i + 1) * bw] @ np.linalg.pinv(Y[i * bw:(i + 1) * bw], rcond=1e-10)).T
               for i in range(nl)]
    leaves = np.stack([DSc[i] + SrD[i] - _perp(Qr[i], DSc[i]) for i in range(nl)])
    partial = HodlrForm(N, k, levels, leaves, symmetric)

    # the remainder is a restricted HSS matrix: failed level blocks live in
    # the blacklist bases of their own level, leaves in the final bases
    def res_apply(X):
        return query(oracle, X) - apply_form(partial, X)

    def res_apply_t(X):
        return query_transpose(oracle, X) - apply_form_transpose(partial, X)

    res = OracleHandle(N, res_apply, res_apply if symmetric else res_apply_t, QueryLedger())
    tree = BinaryTree(N, bw)
    Qr, Qc, sides = {}, {}, {}
    for nd in tree.nodes:
        rng_ = slice(nd.start, nd.start + nd.size)
        if nd.depth == 0:
            Qr[nd.index] = Qc[nd.index] = np.zeros((nd.size, 0))
            continue
        Fc_l, Fr_l = st.snapshots[nd.depth]
        Qr[nd.index] = orth(Fr_l[rng_], cutoff=1e-12) if Fr_l.shape[1] else np.zeros((nd.size, 0))
        Qc[nd.index] = Qr[nd.index] if symmetric else (
            orth(Fc_l[rng_], cutoff=1e-12) if Fc_l.shape[1] else np.zeros((nd.size, 0)))
    by_depth: dict = {}
    for nd in tree.nodes:
        if not nd.is_leaf:
            by_depth.setdefault(nd.depth, []).append(nd)
    for d, nodes in by_depth.items():
        for t, nd in enumerate(sorted(nodes, key=lambda x: x.start)):
            sides[nd.index] = st.failed[d + 1][t]
    Lr = {leaf: _basis(st.Fr, tree.nodes[leaf].start, bw) for leaf in tree.leaves}
    Lc = Lr if symmetric else {leaf: _basis(st.Fc, tree.nodes[leaf].start, bw) for leaf in tree.leaves}
    m = max(st.Fc.shape[1], st.Fr.shape[1])
    rform, info = solve_restricted(res, tree, Qr, Qc, Lr, Lc, sides, symmetric, queries=2 * m,
                                   seed=seed + 1, return_info=True, extend=True)
    levels, leaves = _merge_restricted(levels, leaves, rform, N, symmetric)
    meta.update(blacklist_size=int(m), pass3=True, pass3_queries=info["queries"],
                pass3_residual=info["residual"])
    return HodlrForm(N, k, levels, leaves, symmetric, meta)


def _merge_restricted(levels, leaves, rform: RestrictedHssForm, N, symmetric):
    """Add the restricted-HSS remainder to the level factors and leaves."""
    tree = rform.tree
    by_depth: dict = {}
    for nd in tree.nodes:
        if not nd.is_leaf:
            by_depth.setdefault(nd.depth, []).append(nd)
    out = []
    for ell, fac in enumerate(levels, start=1):
        nodes = sorted(by_depth.get(ell - 1, []), key=lambda nd: nd.start)
        b = N >> ell
        Us, Vs, Ws, Zs = [], [], [], []
        for t, nd in enumerate(nodes):
            c0, c1 = nd.children
            Hu, Hl = rform.coupling.get(nd.index, (None, None))
            U0, V0, W0, Z0 = fac["U"][t], fac["V"][t], fac["W"][t], fac["Z"][t]
            if Hl is None:
                Us.append(U0), Vs.append(V0), Ws.append(W0), Zs.append(Z0)
                continue
            # A[J, I] += Qr[J] H_lo Qc[I]^T and A[I, J] += Qr[I] H_up Qc[J]^T
            Us.append(np.hstack([U0, rform.Qr[c1] @ Hl]))
            Vs.append(np.hstack([V0, rform.Qc[c0]]))
            Ws.append(np.hstack([W0, rform.Qr[c0] @ Hu]))
            Zs.append(np.hstack([Z0, rform.Qc[c1]]))
        n_nodes = len(nodes)
        U, V = _pad_levels(Us, n_nodes, b), _pad_levels(Vs, n_nodes, b)
        if symmetric:
            out.append({"U": U, "V": V, "W": V, "Z": U})
        else:
            out.append({"U": U, "V": V, "W": _pad_levels(Ws, n_nodes, b), "Z": _pad_levels(Zs, n_nodes, b)})
    new_leaves = leaves.copy()
    bw = leaves.shape[1]
    for leaf, S in rform.cores.items():
        nd = tree.nodes[leaf]
        new_leaves[nd.start // bw] += rform.Lr[leaf] @ S @ rform.Lc[leaf].T
    return out, new_leaves


def recover_hodlr_symmetric(oracle: OracleHandle, k, p=5, seed=0) -> HodlrForm:
    """Symmetric rank-``k`` HODLR recovery with failure handling.

    Ledger at most ``(6k + 2p) log2(N)`` forward products.
    """
    return _recover_general(oracle, k, p, seed, symmetric=True)


def pad_oracle(oracle: OracleHandle):
    """Embed an ``N x N`` oracle in the next power of two with zero padding.

    Returns ``(padded, N1)``; the original block sits at rows and columns
    ``N1 : N1 + N`` with ``N1 = (Ntilde - N) // 2``.
    """
    N = oracle.dim
    Nt = 1 << max(N - 1, 0).bit_length()
    N1 = (Nt - N) // 2

    def lift(apply):
        def f(X):
            out = np.zeros((Nt, X.shape[1]))
            out[N1:N1 + N] = apply(X[N1:N1 + N])
            return out
        return f

    return OracleHandle(Nt, lift(oracle.apply), lift(oracle.apply_transpose), oracle.ledger), N1


def recover_hodlr_general(oracle: OracleHandle, k, p=5, seed=0, symmetric=False) -> HodlrForm:
    """Rank-``k`` HODLR recovery for any ``N`` using forward and transpose products.

    Non-power-of-two sizes are zero-padded; ``meta["embedding"]`` records
    ``(N1, N)`` and :func:`unpad` extracts the original matrix. Ledger at most
    ``(10k + 4p) log2(Ntilde)`` products.
    """
    N = oracle.dim
    if N & (N - 1) == 0:
        return _recover_general(oracle, k, p, seed, symmetric)
    padded, N1 = pad_oracle(oracle)
    form = _recover_general(padded, k, p, seed, symmetric)
    _zero_outside(form, N1, N)
    form.meta["embedding"] = [N1, N]
    return form


def _zero_outside(form: HodlrForm, N1, N):
    """Clear factor rows that belong to the zero padding."""
    mask = np.zeros(form.N, dtype=bool)
    mask[N1:N1 + N] = True
    for ell, fac in enumerate(form.levels, start=1):
        b = form.N >> ell
        nn = 1 << (ell - 1)
        m = mask.reshape(nn, 2, b)
        fac["U"] = fac["U"] * m[:, 1, :, None]
        fac["V"] = fac["V"] * m[:, 0, :, None]
        if form.symmetric:
            fac["W"], fac["Z"] = fac["V"], fac["U"]
        else:
            fac["W"] = fac["W"] * m[:, 0, :, None]
            fac["Z"] = fac["Z"] * m[:, 1, :, None]
    bw = form.leaves.shape[1]
    ml = mask.reshape(-1, bw)
    form.leaves = form.leaves * ml[:, :, None] * ml[:, None, :]


def unpad(form: HodlrForm):
    """Dense original matrix from a padded recovery."""
    from .structured import materialize

    A = materialize(form)
    if "embedding" not in form.meta:
        return A
    N1, N = form.meta["embedding"]
    return A[N1:N1 + N, N1:N1 + N]


def ledger_cap(N, k, p, kind):
    """Query bound for each HODLR routine."""
    Nt = 1 << max(N - 1, 0).bit_length()
    lg = np.log2(Nt)
    if kind == "generic_rank1":
        return (6 + p) * lg + 5 * p
    if kind == "symmetric":
        return (6 * k + 2 * p) * lg
    return (10 * k + 4 * p) * lg
