import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matvec_recovery import hodlr as H
from matvec_recovery.cli import spectral_errors
from matvec_recovery.errors import ConfigurationError
from matvec_recovery.oracle import dense_oracle, form_oracle, query
from matvec_recovery.structured import HodlrForm, materialize, random_form


def spectral_rel(A, B):
    return np.linalg.norm(A - B, 2) / np.linalg.norm(A, 2)


def column_blacklist(form, upto):
    """Column-space blacklist of levels ``1..upto`` (``V`` at ``I``, ``Z`` at ``J``)."""
    N, cols = form.N, []
    for lvl in range(1, upto + 1):
        fac = form.levels[lvl - 1]
        n, b = 2 ** (lvl - 1), N >> lvl
        for j in range(fac["V"].shape[2]):
            c = np.zeros(N)
            for t in range(n):
                c[2 * t * b:(2 * t + 1) * b] = fac["V"][t, :, j]
                c[(2 * t + 1) * b:(2 * t + 2) * b] = fac["Z"][t, :, j]
            cols.append(c)
    return np.column_stack(cols) if cols else np.zeros((N, 0))


def c81_fixture(seed=0, c=1.7):
    """Symmetric C_{8,1} whose level-2 blocks reuse the level-1 factors."""
    rng = np.random.default_rng(seed)
    u0, v0 = rng.standard_normal((2, 4, 1))
    u1 = rng.standard_normal((2, 1))
    v1, v2, u2 = c * v0[0:2], c * u0[0:2], c * u0[2:4]
    L1 = {"U": u0[None], "V": v0[None]}
    L1["W"], L1["Z"] = L1["V"], L1["U"]
    U2, V2 = np.stack([u1, u2]), np.stack([v1, v2])
    L2 = {"U": U2, "V": V2, "W": V2, "Z": U2}
    D = rng.standard_normal((4, 2, 2))
    return HodlrForm(8, 1, [L1, L2], D + D.transpose(0, 2, 1), True)


# --- stopping level --------------------------------------------------------


def test_stop_level_example():
    # 2**3 - 6 = 2 < 6 at level 7, while 2**4 - 5 = 11 >= 6 at level 6
    assert H.stop_level(1024, 1, 5) == 7


@given(n=st.integers(2, 18), k=st.integers(1, 12), p=st.integers(0, 10))
def test_stop_level_bounds(n, k, p):
    w = H.stop_level(2**n, k, p)
    assert 1 <= w <= n
    assert w > n - math.log2(n * k + p) - 1
    # minimality of the scan
    for ell in range(1, w):
        assert 2 ** (n - ell) - (ell - 1) * k >= k + p


def test_stop_level_needs_power_of_two():
    with pytest.raises(ConfigurationError):
        H.stop_level(100, 1, 5)


# --- projection ------------------------------------------------------------


def test_project_empty_blacklist_is_identity():
    X = np.random.default_rng(0).standard_normal((32, 3))
    np.testing.assert_array_equal(H.project_inputs(X, np.zeros((32, 0)), 2, "both"), X)


def test_project_full_blacklist_gives_zero():
    X = np.random.default_rng(0).standard_normal((16, 2))
    out = H.project_inputs(X, np.eye(16)[:, :8] + np.eye(16)[:, 8:], 1, "first")
    assert np.abs(out[:8]).max() <= 1e-13
    np.testing.assert_array_equal(out[8:], X[8:])


def test_project_orthogonal_to_restricted_blacklist():
    f = random_form("hodlr", 64, k=1, seed=3, symmetric=True)
    F = column_blacklist(f, 1)
    X = np.random.default_rng(1).standard_normal((64, 4))
    P = H.project_inputs(X, F, 2, "both")
    for s in range(0, 64, 16):
        assert np.abs(F[s:s + 16].T @ P[s:s + 16]).max() <= 1e-12


@pytest.mark.parametrize("sym", [True, False])
@pytest.mark.parametrize("N,k", [(64, 1), (128, 2), (256, 2)])
def test_projection_isolates_level(sym, N, k):
    f = random_form("hodlr", N, k=k, seed=N + k, symmetric=sym)
    A = materialize(f)
    normA = np.linalg.norm(A, 2)
    rng = np.random.default_rng(0)
    for level in range(2, H.stop_level(N, k, 3)):
        F = column_blacklist(f, level - 1)
        X = np.zeros((N, k + 3))
        b = N >> level
        for t in range(2 ** (level - 1)):
            X[2 * t * b:(2 * t + 1) * b] = rng.standard_normal((b, k + 3))
        Xp = H.project_inputs(X, F, level, "first")
        Y = A @ Xp
        for t in range(2 ** (level - 1)):
            I = slice(2 * t * b, (2 * t + 1) * b)
            J = slice((2 * t + 1) * b, (2 * t + 2) * b)
            alone = A[J, I] @ Xp[I]
            assert np.abs(Y[J] - alone).max() <= 1e-11 * normA * np.linalg.norm(Xp[I])


# --- reconstruction --------------------------------------------------------


def test_reconstruct_apply():
    f = random_form("hodlr", 64, k=2, seed=1)
    A = materialize(f)
    x = np.random.default_rng(2).standard_normal(64)
    assert np.linalg.norm(H.hodlr_reconstruct_apply(f, x) - A @ x) <= 1e-12 * np.linalg.norm(A @ x)
    empty = HodlrForm(64, 2, [None] * len(f.levels), None)
    np.testing.assert_array_equal(H.hodlr_reconstruct_apply(empty, x), 0)
    partial = HodlrForm(64, 2, f.levels[:2] + [None] * (len(f.levels) - 2), None)
    masked = np.zeros_like(A)
    for lvl in (1, 2):
        b = 64 >> lvl
        for t in range(2 ** (lvl - 1)):
            I = slice(2 * t * b, (2 * t + 1) * b)
            J = slice((2 * t + 1) * b, (2 * t + 2) * b)
            masked[J, I] = A[J, I]
            masked[I, J] = A[I, J]
    y = H.hodlr_reconstruct_apply(partial, x)
    assert np.linalg.norm(y - masked @ x) <= 1e-12 * np.linalg.norm(masked @ x)


@pytest.mark.parametrize("sym", [True, False])
def test_monotone_residual(sym):
    f = random_form("hodlr", 256, k=2, seed=5, symmetric=sym)
    A = materialize(f)
    R = H.recover_hodlr_general(form_oracle(f), 2, p=5, seed=0, symmetric=sym)
    res = [np.linalg.norm(A)]
    for j in range(1, len(R.levels) + 1):
        part = HodlrForm(R.N, R.k, R.levels[:j] + [None] * (len(R.levels) - j), None, R.symmetric)
        res.append(np.linalg.norm(A - materialize(part)))
    res.append(np.linalg.norm(A - materialize(R)))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))
    assert res[-1] <= 1e-10 * res[0]


# --- generic rank one ------------------------------------------------------


def test_generic_rank1_example():
    N, p = 1024, 5
    f = random_form("hodlr", N, k=1, seed=17, symmetric=True)
    o = form_oracle(f)
    R = H.recover_hodlr_generic_rank1(o, p=p, seed=17)
    assert spectral_errors(f, R)[0] <= 1e-10
    assert o.ledger.n == 0
    assert o.ledger.m <= (6 + p) * 10 + 5 * p == 135


def test_generic_rank1_small():
    f = random_form("hodlr", 8, k=1, seed=2, symmetric=True)
    A = materialize(f)
    R = H.recover_hodlr_generic_rank1(dense_oracle(A), p=5)
    assert np.linalg.norm(A - materialize(R)) <= 1e-12 * np.linalg.norm(A)


@settings(max_examples=10)
@given(n=st.integers(3, 10), seed=st.integers(0, 10**4), p=st.integers(1, 6))
def test_generic_rank1_property(n, seed, p):
    N = 2**n
    f = random_form("hodlr", N, k=1, seed=seed, symmetric=True)
    o = form_oracle(f)
    R = H.recover_hodlr_generic_rank1(o, p=p, seed=seed)
    assert spectral_errors(f, R)[0] <= 1e-10
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(N, 1, p, "generic_rank1")
    assert R.meta["blacklist_size"] <= H.stop_level(N, 1, p) - 1


# --- general algorithm -----------------------------------------------------


def test_c81_fail_pattern_and_exact_recovery():
    f = c81_fixture()
    A = materialize(f)
    np.testing.assert_array_equal(A, A.T)
    o = dense_oracle(A)
    R = H.recover_hodlr_symmetric(o, 1, p=0, seed=0)
    status = R.meta["status"]
    # True means the block passed the projected-input query
    assert status["1"] == [{"lower": True, "upper": True}]
    assert status["2"] == [{"lower": False, "upper": True}, {"lower": False, "upper": False}]
    assert np.linalg.norm(A - materialize(R)) <= 1e-11 * np.linalg.norm(A)
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(8, 1, 0, "symmetric")


@pytest.mark.parametrize("seed", range(5))
def test_c81_scaled_variants(seed):
    f = c81_fixture(seed, c=0.3 + seed)
    A = materialize(f)
    R = H.recover_hodlr_symmetric(dense_oracle(A), 1, p=2, seed=seed)
    assert np.linalg.norm(A - materialize(R)) <= 1e-11 * np.linalg.norm(A)


def test_general_matches_generic_on_generic_input():
    f = random_form("hodlr", 256, k=1, seed=9, symmetric=True)
    A = materialize(f)
    R1 = H.recover_hodlr_generic_rank1(form_oracle(f), p=5, seed=9)
    R2 = H.recover_hodlr_symmetric(form_oracle(f), 1, p=5, seed=9)
    assert R2.meta["failed_blocks"] == 0 and not R2.meta["pass3"]
    assert np.linalg.norm(materialize(R1) - materialize(R2), 2) <= 1e-11 * np.linalg.norm(A, 2)


def test_symmetric_rank2_ledger_example():
    f = random_form("hodlr", 256, k=2, seed=0, symmetric=True)
    o = form_oracle(f)
    R = H.recover_hodlr_symmetric(o, 2, p=5)
    assert spectral_errors(f, R)[0] <= 1e-10
    assert sum(o.ledger.as_tuple()) <= 176 == H.ledger_cap(256, 2, 5, "symmetric")


def test_nonsymmetric_example():
    f = random_form("hodlr", 128, k=1, seed=0)
    o = form_oracle(f)
    R = H.recover_hodlr_general(o, 1, p=5)
    assert spectral_errors(f, R)[0] <= 1e-10
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(128, 1, 5, "general")


@settings(max_examples=15)
@given(n=st.integers(4, 9), k=st.integers(1, 3), p=st.integers(1, 6), sym=st.booleans(),
       seed=st.integers(0, 10**4))
def test_general_property(n, k, p, sym, seed):
    N = 2**n
    f = random_form("hodlr", N, k=k, seed=seed, symmetric=sym)
    A = materialize(f)
    o = form_oracle(f)
    R = H.recover_hodlr_general(o, k, p=p, seed=seed, symmetric=sym)
    assert spectral_rel(A, H.unpad(R)) <= 1e-10
    kind = "symmetric" if sym else "general"
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(N, k, p, kind)
    assert R.meta["blacklist_size"] <= k * (R.meta["stop_level"] - 1) <= k * (n - 1)


def correlated_form(N, k, seed, sym):
    """HODLR instance whose finer factors partly lie in the span of coarser ones.

    Such blocks vanish on inputs projected against the blacklist, so they
    go through the failed-block passes.
    """
    rng = np.random.default_rng(seed)
    f = random_form("hodlr", N, k=k, seed=seed, symmetric=sym)
    partner = {"V": "Z", "Z": "V"}
    for lvl in range(1, len(f.levels)):
        coarse, fine = f.levels[lvl - 1], f.levels[lvl]
        for name, src in (("V", "V"), ("U", "Z")):
            if rng.random() < 0.5:
                continue
            b = fine[name].shape[1]
            for t in range(fine[name].shape[0]):
                parent, child = divmod(t, 2)
                base = coarse[src if child == 0 else partner[src]][parent]
                block = base[:b] if child == 0 else base[b:]
                fine[name][t] = block @ rng.standard_normal((k, k))
        if sym:
            fine["W"], fine["Z"] = fine["V"], fine["U"]
    return f


@settings(max_examples=15)
@given(seed=st.integers(0, 10**4), k=st.integers(1, 2), sym=st.booleans(), n=st.integers(4, 7))
def test_correlated_levels(seed, k, sym, n):
    N = 2**n
    f = correlated_form(N, k, seed, sym)
    A = materialize(f)
    o = form_oracle(f)
    R = H.recover_hodlr_general(o, k, p=3, seed=seed, symmetric=sym)
    assert spectral_rel(A, materialize(R)) <= 1e-10
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(N, k, 3, "symmetric" if sym else "general")


def test_correlated_levels_exercise_failures():
    failed = 0
    for seed in range(20):
        for sym in (True, False):
            f = correlated_form(64, 1 + seed % 2, seed, sym)
            A = materialize(f)
            R = H.recover_hodlr_general(form_oracle(f), 1 + seed % 2, p=3, seed=seed, symmetric=sym)
            failed += R.meta["failed_blocks"] > 0
            assert spectral_rel(A, materialize(R)) <= 1e-10
    assert failed >= 10


def test_padding_non_power_of_two():
    f = random_form("hodlr", 100, k=1, seed=0)
    A = materialize(f)
    o = form_oracle(f)
    R = H.recover_hodlr_general(o, 1, p=5)
    assert R.N == 128 and R.meta["embedding"] == [14, 100]
    full = materialize(R)
    N1 = 14
    mask = np.ones(128, bool)
    mask[N1:N1 + 100] = False
    assert not full[mask].any() and not full[:, mask].any()
    assert np.linalg.norm(A - H.unpad(R)) <= 1e-10 * np.linalg.norm(A)
    assert sum(o.ledger.as_tuple()) <= H.ledger_cap(100, 1, 5, "general")


def test_padded_oracle_identity():
    A = np.random.default_rng(0).standard_normal((100, 100))
    padded, N1 = H.pad_oracle(dense_oracle(A))
    y = np.random.default_rng(1).standard_normal(100)
    x = np.zeros(128)
    x[N1:N1 + 100] = y
    out = query(padded, x)
    expect = np.zeros(128)
    expect[N1:N1 + 100] = A @ y
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_ledger_caps_formula():
    assert H.ledger_cap(1024, 1, 5, "generic_rank1") == 135
    assert H.ledger_cap(256, 2, 5, "symmetric") == 176
    assert H.ledger_cap(256, 2, 5, "general") == (20 + 20) * 8
    assert H.ledger_cap(100, 1, 5, "general") == 30 * 7


def test_decay_inputs():
    f = random_form("hodlr", 512, k=10, seed=0, decay=0.05)
    A = materialize(f)
    R = H.recover_hodlr_general(form_oracle(f), 10, p=5)
    assert spectral_rel(A, materialize(R)) <= 1e-11
