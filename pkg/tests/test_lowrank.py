import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matvec_recovery.errors import ConfigurationError
from matvec_recovery.lowrank import (
    SketchConfig,
    nystrom_recover_symmetric,
    rsvd_recover,
    witness_lowrank,
    witness_orthogonal,
    witness_symmetric,
)
from matvec_recovery.oracle import dense_oracle
from matvec_recovery.structured import materialize


def rel(A, B):
    return np.linalg.norm(A - B) / max(np.linalg.norm(A), 1e-300)


def onb(rng, N, k):
    return np.linalg.qr(rng.standard_normal((N, k)))[0][:, :k]


def check_lowrank_certificates(A, B, X, W, k):
    scale = max(np.linalg.norm(A), 1.0)
    assert np.linalg.norm(B @ X - A @ X) <= 1e-11 * scale
    assert np.linalg.norm(B.T @ W - A.T @ W) <= 1e-11 * scale
    s = np.linalg.svd(B, compute_uv=False)
    assert k >= len(s) or s[k] <= 1e-11 * s[0]
    assert np.linalg.norm(B - A) >= 1e-6 * scale


def test_sketch_config_validation():
    with pytest.raises(ConfigurationError):
        SketchConfig(0)
    with pytest.raises(ConfigurationError):
        SketchConfig(1, p=-1)


def test_rsvd_rank_one_example():
    rng = np.random.default_rng(0)
    A = np.outer(rng.standard_normal(40), rng.standard_normal(40))
    o = dense_oracle(A)
    f = rsvd_recover(o, SketchConfig(1, 5, 0))
    assert rel(A, materialize(f)) <= 1e-12
    assert o.ledger.as_tuple() == (6, 1)


def test_rsvd_zero_matrix():
    o = dense_oracle(np.zeros((10, 10)))
    f = rsvd_recover(o, SketchConfig(2))
    assert f.Uf.shape[1] == 0
    np.testing.assert_array_equal(materialize(f), 0)


@pytest.mark.parametrize("k", [1, 3, 8])
def test_rsvd_exact_rank_hundred_trials(k):
    N = 64
    for seed in range(100):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((N, k)) @ rng.standard_normal((k, N))
        o = dense_oracle(A)
        f = rsvd_recover(o, SketchConfig(k, 5, seed))
        assert rel(A, materialize(f)) <= 1e-11
        assert o.ledger.as_tuple() == (k + 5, k)


@settings(max_examples=20)
@given(seed=st.integers(0, 10**5), k=st.integers(1, 8), rho=st.floats(0.05, 0.5))
def test_rsvd_numerical_rank(seed, k, rho):
    N = 96
    rng = np.random.default_rng(seed)
    U = onb(rng, N, N)
    V = onb(rng, N, N)
    s = rho ** np.arange(N)
    A = (U * s) @ V.T
    f = rsvd_recover(dense_oracle(A), SketchConfig(k, 5, seed))
    err = np.linalg.norm(A - materialize(f), 2) / s[0]
    assert err <= 10 * s[k] / s[0]


def test_nystrom_examples():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(30)
    o = dense_oracle(np.outer(v, v))
    f = nystrom_recover_symmetric(o, SketchConfig(1))
    assert rel(np.outer(v, v), materialize(f)) <= 1e-11
    assert o.ledger.as_tuple() == (6, 0)
    np.testing.assert_array_equal(materialize(nystrom_recover_symmetric(dense_oracle(np.zeros((5, 5))),
                                                                        SketchConfig(1))), 0)


@pytest.mark.parametrize("k", [1, 3, 8])
def test_nystrom_symmetric_rank_k(k):
    rng = np.random.default_rng(k)
    F = rng.standard_normal((128, k))
    A = F @ np.diag(rng.standard_normal(k)) @ F.T
    o = dense_oracle(A)
    assert rel(A, materialize(nystrom_recover_symmetric(o, SketchConfig(k, 5, 1)))) <= 1e-10
    assert o.ledger.as_tuple() == (k + 5, 0)


def test_lowrank_witness_case1_zero_matrix():
    rng = np.random.default_rng(1)
    X, W = onb(rng, 6, 1), onb(rng, 6, 1)
    B = witness_lowrank(X, W, np.zeros((6, 6)), k=2)
    check_lowrank_certificates(np.zeros((6, 6)), B, X, W, 2)
    assert np.linalg.matrix_rank(B) == 1


def test_lowrank_witness_example():
    rng = np.random.default_rng(21)
    A = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
    X, W = onb(rng, 6, 1), onb(rng, 6, 1)
    check_lowrank_certificates(A, witness_lowrank(X, W, A, 2), X, W, 2)


def test_lowrank_witness_case4_c_and_2c_differ():
    import matvec_recovery.lowrank as lr

    rng = np.random.default_rng(4)
    A = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 8))
    X, W = onb(rng, 8, 2), onb(rng, 8, 2)
    seen = []
    orig = lr._farther

    def spy(A_, *cands):
        seen.extend(cands)
        return orig(A_, *cands)

    lr._farther = spy
    try:
        witness_lowrank(X, W, A, 3)
    finally:
        lr._farther = orig
    B1, B2 = seen[-2:]
    for B in (B1, B2):
        check_lowrank_certificates(A, B, X, W, 3)
    assert np.linalg.norm(B1 - B2) > 1e-6


@settings(max_examples=50)
@given(seed=st.integers(0, 10**6), N=st.integers(3, 12), data=st.data())
def test_lowrank_witness_property(seed, N, data):
    k = data.draw(st.integers(1, N - 1))
    rank_A = data.draw(st.integers(0, k))
    k1 = data.draw(st.integers(0, N - 1))
    k2 = data.draw(st.integers(0, N - 1 if k1 < k else k - 1))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, rank_A)) @ rng.standard_normal((rank_A, N))
    X, W = onb(rng, N, k1), onb(rng, N, k2)
    check_lowrank_certificates(A, witness_lowrank(X, W, A, k), X, W, k)


def test_lowrank_witness_preconditions():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 6))
    with pytest.raises(ConfigurationError):
        witness_lowrank(onb(rng, 6, 2), onb(rng, 6, 2), A, 2)
    with pytest.raises(ConfigurationError):
        witness_lowrank(onb(rng, 6, 1), onb(rng, 6, 6), A, 2)
    with pytest.raises(ConfigurationError):
        witness_lowrank(2 * onb(rng, 6, 1), onb(rng, 6, 1), A, 2)
    with pytest.raises(ConfigurationError):
        witness_lowrank(onb(rng, 6, 1), onb(rng, 6, 1), A, 1)


def test_symmetric_witness_examples():
    N = 5
    B = witness_symmetric(np.zeros((N, N)), np.eye(N)[:, :N - 1])
    np.testing.assert_allclose(B, np.outer(np.eye(N)[-1], np.eye(N)[-1]), atol=1e-15)
    rng = np.random.default_rng(2)
    M = rng.standard_normal((8, 8))
    A = M + M.T
    X = rng.standard_normal((8, 7))
    B = witness_symmetric(A, X)
    assert np.linalg.norm((B - A) @ X) <= 1e-12
    assert abs(np.linalg.norm(B - A) - 1.0) <= 1e-12
    np.testing.assert_array_equal(B, B.T)
    P = M @ M.T + np.eye(8)
    assert np.linalg.eigvalsh(witness_symmetric(P, X)).min() > 0


def test_orthogonal_witness_examples():
    N = 6
    B = witness_orthogonal(np.eye(N), np.eye(N)[:, :N - 1])
    expected = np.eye(N)
    expected[-1, -1] = -1.0
    np.testing.assert_allclose(B, expected, atol=1e-15)
    rng = np.random.default_rng(5)
    A = np.linalg.qr(rng.standard_normal((8, 8)))[0]
    X = rng.standard_normal((8, 7))
    B = witness_orthogonal(A, X)
    assert np.linalg.norm(B @ X - A @ X) <= 1e-12 * np.linalg.norm(X)
    assert np.linalg.norm(B.T @ B - np.eye(8)) <= 1e-12
    assert abs(np.linalg.norm(B - A) - 2.0) <= 1e-12


@settings(max_examples=50)
@given(seed=st.integers(0, 10**6), N=st.integers(2, 16), sym=st.booleans())
def test_full_rank_witness_property(seed, N, sym):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, N - 1))
    if sym:
        M = rng.standard_normal((N, N))
        A = M + M.T
        B = witness_symmetric(A, X)
        assert np.linalg.norm(B - B.T) <= 1e-12 * max(np.linalg.norm(A), 1)
    else:
        A = np.linalg.qr(rng.standard_normal((N, N)))[0]
        B = witness_orthogonal(A, X)
        assert np.linalg.norm(B.T @ B - np.eye(N)) <= 1e-11
    assert np.linalg.norm(B @ X - A @ X) <= 1e-11 * max(np.linalg.norm(A), 1) * max(np.linalg.norm(X), 1)
    assert np.linalg.norm(B - A) >= 1e-6 * max(np.linalg.norm(A), 1)


def test_full_rank_witness_rejects_spanning_probes():
    with pytest.raises(ConfigurationError):
        witness_symmetric(np.eye(3), np.eye(3))
    with pytest.raises(ConfigurationError):
        witness_orthogonal(np.eye(3), np.ones((4, 2)))
