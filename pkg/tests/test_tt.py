import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbtt.tt import (TTOperator, TTShapeError, TTVector, amen_apply, load_tt, mpo_apply_exact,
                     orthogonalize_left, orthogonalize_right, save_tt, tt_axpy, tt_dot,
                     tt_from_dense, tt_norm, tt_random, tt_round, tt_scale, tt_to_dense)


def element_oracle(x: TTVector, idx):
    m = np.ones((1, 1))
    for c, i in zip(x.cores, idx):
        m = m @ c[:, i, :]
    return m[0, 0]


def random_mpo(rng, sizes, rank):
    ranks = [1] + [rank] * (len(sizes) - 1) + [1]
    return TTOperator.from_cores([rng.standard_normal((ranks[k], n, n, ranks[k + 1]))
                                  for k, n in enumerate(sizes)])


def test_rank_one_from_outer_product(rng):
    u, v, w = rng.standard_normal(4), rng.standard_normal(5), rng.standard_normal(6)
    X = np.einsum("i,j,k->ijk", u, v, w)
    x = tt_from_dense(X, 0.0)
    assert x.ranks == (1, 1, 1, 1)
    np.testing.assert_allclose(tt_to_dense(x), X, atol=1e-14 * np.abs(X).max())


def test_sum_of_three_rank_one_terms(rng):
    X = sum(np.einsum("i,j,k->ijk", *(rng.standard_normal(8) for _ in range(3)))
            for _ in range(3))
    x = tt_from_dense(X, 1e-12)
    assert max(x.ranks) <= 3
    assert np.linalg.norm(tt_to_dense(x) - X) <= 1e-10 * np.linalg.norm(X)


def test_zero_tensor():
    x = tt_from_dense(np.zeros((3, 4, 5)), 1e-8)
    assert x.ranks == (1, 1, 1, 1)
    assert all(not c.any() for c in x.cores)


def test_negative_eps_rejected():
    with pytest.raises(ValueError):
        tt_from_dense(np.ones((2, 2)), -1.0)


def test_lossless_roundtrip(rng):
    X = rng.standard_normal((3, 4, 5, 2))
    np.testing.assert_allclose(tt_to_dense(tt_from_dense(X, 0.0)), X, atol=1e-13)


def test_elementwise_evaluation(rng):
    x = tt_random([3, 4, 5], [2, 3], rng)
    D = tt_to_dense(x)
    for idx in [(0, 0, 0), (2, 3, 4), (1, 2, 0)]:
        assert D[idx] == pytest.approx(element_oracle(x, idx), rel=1e-13)
        assert x.element(idx) == pytest.approx(element_oracle(x, idx), rel=1e-13)


def test_rank_mismatch_rejected():
    with pytest.raises(TTShapeError):
        TTVector([np.ones((1, 2, 2)), np.ones((3, 2, 1))])


def test_axpy(rng):
    x, y = tt_random([3, 4, 5], [2, 2], rng), tt_random([3, 4, 5], [3, 1], rng)
    np.testing.assert_array_equal(tt_to_dense(tt_axpy(0.0, x, y)), tt_to_dense(y))
    z = tt_axpy(1.0, x, -x)
    assert np.abs(tt_to_dense(z)).max() < 1e-14
    s = tt_axpy(-2.5, x, y)
    assert s.ranks == (1, 5, 3, 1)
    np.testing.assert_allclose(tt_to_dense(s), -2.5 * tt_to_dense(x) + tt_to_dense(y), atol=1e-12)


def test_axpy_shape_mismatch(rng):
    with pytest.raises(TTShapeError):
        tt_axpy(1.0, tt_random([3, 4], [2], rng), tt_random([3, 5], [2], rng))


def test_dot_and_norm(rng):
    x, y = tt_random([3, 4, 5, 2], [2, 3, 2], rng), tt_random([3, 4, 5, 2], [1, 2, 2], rng)
    assert tt_dot(x, x) == pytest.approx(tt_norm(x) ** 2, rel=1e-12)
    assert tt_dot(x, y) == pytest.approx(np.vdot(tt_to_dense(x), tt_to_dense(y)), rel=1e-12)
    u, v, p, q = (rng.standard_normal(6) for _ in range(4))
    a = TTVector([u.reshape(1, 6, 1), v.reshape(1, 6, 1)])
    b = TTVector([p.reshape(1, 6, 1), q.reshape(1, 6, 1)])
    assert tt_dot(a, b) == pytest.approx((u @ p) * (v @ q), rel=1e-12)


def test_scale(rng):
    x = tt_random([3, 4], [2], rng)
    np.testing.assert_allclose(tt_to_dense(tt_scale(-3.0, x)), -3.0 * tt_to_dense(x))


def test_round_recovers_redundant_ranks(rng):
    x = tt_random([4, 5, 6, 3], [2, 3, 2], rng)
    doubled = tt_scale(0.5, tt_axpy(1.0, x, x))
    assert doubled.ranks == (1, 4, 6, 4, 1)
    out, rep = tt_round(doubled, 1e-12)
    assert out.ranks == x.ranks
    assert rep.final_ranks == x.ranks
    assert np.linalg.norm(tt_to_dense(out) - tt_to_dense(x)) <= 1e-12 * tt_norm(x)


def test_round_eps_zero_keeps_nonzero_directions(rng):
    x = tt_random([3, 4, 5], [3, 4], rng)
    out, _ = tt_round(x, 0.0)
    assert out.ranks == x.ranks
    np.testing.assert_allclose(tt_to_dense(out), tt_to_dense(x), atol=1e-12)


def _svd_oracle_error(X, eps):
    # sequential truncated SVD of the unfoldings at eps/sqrt(d-1)
    d = X.ndim
    delta = eps / np.sqrt(d - 1) * np.linalg.norm(X)
    C, shape, err2 = X, X.shape, 0.0
    r = 1
    for k in range(d - 1):
        C = C.reshape(r * shape[k], -1)
        u, s, vt = np.linalg.svd(C, full_matrices=False)
        tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
        keep = max(1, int(np.sum(tail > delta)))
        err2 += np.sum(s[keep:] ** 2)
        C = s[:keep, None] * vt[:keep]
        r = keep
    return np.sqrt(err2) / np.linalg.norm(X)


def test_round_matches_dense_svd_oracle(rng):
    X = rng.standard_normal((5, 6, 5, 4))
    X += 10 * np.einsum("i,j,k,l->ijkl", *(rng.standard_normal(n) for n in X.shape))
    x = tt_from_dense(X, 0.0)
    for eps in (1e-1, 3e-2, 1e-2):
        out, rep = tt_round(x, eps)
        err = np.linalg.norm(tt_to_dense(out) - X) / np.linalg.norm(X)
        ref = _svd_oracle_error(X, eps)
        assert err <= eps
        f = np.sqrt(X.ndim - 1)
        assert ref / f <= err * (1 + 1e-8) and err <= f * ref * (1 + 1e-8)
        assert rep.achieved_relative_error == pytest.approx(err, rel=1e-6, abs=1e-14)


@given(st.integers(0, 10_000), st.sampled_from([1e-1, 1e-2, 1e-4, 1e-8]))
def test_round_error_bound(seed, eps):
    x = tt_random([4, 3, 5, 3], [3, 4, 3], np.random.default_rng(seed))
    out, rep = tt_round(x, eps)
    err = np.linalg.norm(tt_to_dense(out) - tt_to_dense(x))
    assert err <= eps * tt_norm(x) * (1 + 1e-10)
    assert tt_norm(out) <= tt_norm(x) * (1 + 1e-12)
    assert all(a <= b for a, b in zip(out.ranks, x.ranks))
    assert rep.achieved_relative_error <= eps * (1 + 1e-10)


@given(st.integers(0, 10_000), st.sampled_from([1e-12, 1e-8, 1e-2]))
def test_from_dense_error_bound(seed, eps):
    X = np.random.default_rng(seed).standard_normal((3, 4, 3, 2))
    assert np.linalg.norm(tt_to_dense(tt_from_dense(X, eps)) - X) <= eps * np.linalg.norm(X) * (1 + 1e-10)


def test_orthogonalization_preserves_tensor(rng):
    x = tt_random([3, 4, 5, 3], [2, 3, 2], rng)
    D = tt_to_dense(x)
    for cores in (orthogonalize_left(x.cores), orthogonalize_right(x.cores)):
        np.testing.assert_allclose(tt_to_dense(TTVector(cores)), D, atol=1e-13 * np.abs(D).max())
    left = orthogonalize_left(x.cores)
    q = left[0].reshape(-1, left[0].shape[2])
    np.testing.assert_allclose(q.T @ q, np.eye(q.shape[1]), atol=1e-13)


def test_identity_mpo(rng):
    x = tt_random([3, 4, 5], [2, 3], rng)
    y = mpo_apply_exact(TTOperator.identity([3, 4, 5]), x)
    assert y.ranks == x.ranks
    np.testing.assert_allclose(tt_to_dense(y), tt_to_dense(x), atol=1e-14)


def test_diagonal_rank_one_mpo(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(5)
    A = TTOperator([[[np.diag(a)]], [[np.diag(b)]]])
    u, v = rng.standard_normal(4), rng.standard_normal(5)
    x = TTVector([u.reshape(1, 4, 1), v.reshape(1, 5, 1)])
    np.testing.assert_allclose(tt_to_dense(mpo_apply_exact(A, x)), np.outer(a * u, b * v), atol=1e-14)


def test_mpo_matches_materialized_operator(rng):
    A = random_mpo(rng, [6] * 4, 2)
    x = tt_random([6] * 4, [2, 3, 2], rng)
    y = mpo_apply_exact(A, x)
    assert y.ranks == (1, 4, 6, 4, 1)
    ref = A.to_dense() @ tt_to_dense(x).ravel()
    np.testing.assert_allclose(tt_to_dense(y).ravel(), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_mpo_shape_mismatch(rng):
    with pytest.raises(TTShapeError):
        mpo_apply_exact(TTOperator.identity([3, 4]), tt_random([3, 5], [2], rng))


@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_mpo_distributes_over_axpy(seed, a):
    rng = np.random.default_rng(seed)
    A = random_mpo(rng, [3, 4, 3], 2)
    x, y = tt_random([3, 4, 3], [2, 2], rng), tt_random([3, 4, 3], [1, 3], rng)
    lhs = tt_to_dense(mpo_apply_exact(A, tt_axpy(a, x, y)))
    rhs = a * tt_to_dense(mpo_apply_exact(A, x)) + tt_to_dense(mpo_apply_exact(A, y))
    np.testing.assert_allclose(lhs, rhs, atol=1e-11 * max(1.0, np.abs(rhs).max()))


def test_sparse_blocks_match_dense_blocks(rng):
    import scipy.sparse as sp
    blocks = [[[sp.random(5, 5, density=0.4, random_state=1, format="csr"), None]],
              [[np.eye(4)], [rng.standard_normal((4, 4))]]]
    A = TTOperator(blocks)
    dense_blocks = [[[blocks[0][0][0].toarray(), np.zeros((5, 5))]], [[np.eye(4)], [blocks[1][1][0]]]]
    x = tt_random([5, 4], [3], rng)
    np.testing.assert_allclose(tt_to_dense(mpo_apply_exact(A, x)),
                               tt_to_dense(mpo_apply_exact(TTOperator(dense_blocks), x)), atol=1e-13)


def test_amen_identity_one_sweep(rng):
    x = tt_random([4, 5, 6], [2, 3], rng)
    y, rep = amen_apply(TTOperator.identity([4, 5, 6]), x, guess=x, eps=1e-10)
    assert rep.sweeps_used == 1 and rep.converged
    np.testing.assert_allclose(tt_to_dense(y), tt_to_dense(x), atol=1e-12)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-4, 1e-8])
def test_amen_against_exact_then_round(seed, eps):
    rng = np.random.default_rng(seed)
    A = random_mpo(rng, [6] * 4, 2)
    x = tt_random([6] * 4, [3, 4, 3], rng)
    exact = mpo_apply_exact(A, x)
    ref = tt_to_dense(exact)
    y, rep = amen_apply(A, x, guess=x, eps=eps)
    rounded, _ = tt_round(exact, eps)
    err_amen = np.linalg.norm(tt_to_dense(y) - ref) / np.linalg.norm(ref)
    err_round = np.linalg.norm(tt_to_dense(rounded) - ref) / np.linalg.norm(ref)
    assert err_amen <= eps
    assert err_amen <= 2 * err_round + 1e-13
    assert np.linalg.norm(tt_to_dense(y) - tt_to_dense(rounded)) <= 2 * eps * np.linalg.norm(ref)
    assert tt_norm(y) <= np.linalg.norm(ref) * (1 + 1e-12)


def test_amen_nonconvergence_flag(rng, caplog):
    A = random_mpo(rng, [6] * 4, 3)
    x = tt_random([6] * 4, [4, 5, 4], rng)
    y, rep = amen_apply(A, x, guess=tt_random([6] * 4, [1, 1, 1], rng), eps=1e-12,
                        max_sweeps=1, kickrank=1)
    assert not rep.converged
    assert rep.achieved_relative_error > 1e-12
    assert "did not converge" in caplog.text


def test_snapshot_roundtrip(tmp_path, rng):
    x = tt_random([3, 4, 5], [2, 3], rng)
    save_tt(x, tmp_path / "x.fbtt")
    y = load_tt(tmp_path / "x.fbtt")
    assert y.ranks == x.ranks
    for a, b in zip(x.cores, y.cores):
        np.testing.assert_array_equal(a, b)


def test_snapshot_layout(tmp_path):
    import struct
    x = TTVector([np.arange(6.0).reshape(1, 3, 2), np.arange(4.0).reshape(2, 2, 1)])
    save_tt(x, tmp_path / "x.fbtt")
    raw = (tmp_path / "x.fbtt").read_bytes()
    assert raw[:4] == b"FBTT"
    assert struct.unpack_from("<II", raw, 4) == (1, 2)
    assert struct.unpack_from("<2Q", raw, 12) == (3, 2)
    assert struct.unpack_from("<3Q", raw, 28) == (1, 2, 1)
    np.testing.assert_array_equal(np.frombuffer(raw[52:], "<f8"), np.r_[np.arange(6.0), np.arange(4.0)])


def test_snapshot_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX1234")
    with pytest.raises(ValueError):
        load_tt(tmp_path / "bad")
