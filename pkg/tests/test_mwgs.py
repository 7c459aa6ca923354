import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from udsens.errors import RankDeficientError, ShapeError
from udsens.models import example1_static
from udsens.mwgs import PreArrayPair, mwgs_derivative, mwgs_orthogonalize

from conftest import central_diff


def pre_path(seed, r, s):
    """Smooth random pre-array path with exact derivatives."""
    rng = np.random.default_rng(seed)
    a0, a1, a2 = (rng.standard_normal((r, s)) for _ in range(3))
    w0, w1 = rng.uniform(-1, 1, r), rng.uniform(-1, 1, r)

    def pre(t):
        return PreArrayPair(a0 + np.sin(t) * a1 + 0.5 * t**2 * a2, np.exp(w0 + t * w1))

    def prime(t):
        return np.cos(t) * a1 + t * a2, w1 * np.exp(w0 + t * w1)

    return pre, prime


def derivative_errors(pre, prime, t):
    post = mwgs_orthogonalize(pre(t))
    der = mwgs_derivative(pre(t), *prime(t), post)
    fd_u = central_diff(lambda x: mwgs_orthogonalize(pre(x)).u, t)
    fd_d = central_diff(lambda x: mwgs_orthogonalize(pre(x)).d_beta, t)
    eu = np.max(np.abs(der.u_prime - fd_u)) / max(1.0, np.max(np.abs(fd_u)))
    ed = np.max(np.abs(der.d_beta_prime - fd_d) / np.maximum(np.abs(fd_d), post.d_beta))
    return eu, ed, der


def reconstruction_errors(pre, post):
    a, w = pre.a, pre.d_w
    gram = (a.T * w) @ a
    e1 = np.linalg.norm(a.T - post.u @ post.b.T) / np.linalg.norm(a)
    e2 = np.linalg.norm(gram - (post.u * post.d_beta) @ post.u.T) / np.linalg.norm(gram)
    bdb = (post.b.T * w) @ post.b
    e3 = np.max(np.abs(bdb - np.diag(post.d_beta))) / np.max(post.d_beta)
    return e1, e2, e3


def test_already_orthogonal():
    a = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    post = mwgs_orthogonalize(PreArrayPair(a, np.ones(3)))
    np.testing.assert_array_equal(post.u, np.eye(2))
    np.testing.assert_array_equal(post.d_beta, [1.0, 1.0])
    np.testing.assert_array_equal(post.b, a)


def test_static_example_post_arrays():
    pre, _ = example1_static()
    post = mwgs_orthogonalize(pre(2.0))
    np.testing.assert_allclose(post.u, [[1.0, 0.7169], [0.0, 1.0]], atol=5e-5)
    np.testing.assert_allclose(post.d_beta, [0.1672, 68.4444], atol=5e-5)
    np.testing.assert_allclose(post.b, [[0.1662, 2.0], [0.0883, 2.6667], [-0.1004, 2.0]],
                               atol=5e-5)


def test_static_example_derivative():
    pre, prime = example1_static()
    p = pre(2.0)
    der = mwgs_derivative(p, *prime(2.0), mwgs_orthogonalize(p))
    np.testing.assert_allclose(der.u_prime, [[0.0, 0.3750], [0.0, 0.0]], atol=5e-5)
    np.testing.assert_allclose(der.d_beta_prime, [0.8231, 261.7778], atol=5e-5)


def test_static_example_matches_finite_differences():
    pre, prime = example1_static()
    eu, ed, _ = derivative_errors(pre, prime, 2.0)
    assert eu <= 1e-6 and ed <= 1e-6


def test_static_example_exact_values():
    # at theta = 2 the exact post-arrays follow from the 2x2 Gram matrix
    pre, _ = example1_static()
    p = pre(2.0)
    gram = p.gram()
    post = mwgs_orthogonalize(p)
    d2 = gram[1, 1]
    np.testing.assert_allclose(post.d_beta[1], d2, rtol=1e-14)
    np.testing.assert_allclose(post.u[0, 1], gram[0, 1] / d2, rtol=1e-14)
    np.testing.assert_allclose(post.d_beta[0], gram[0, 0] - gram[0, 1] ** 2 / d2, rtol=1e-13)


def test_zero_derivative():
    pre, _ = example1_static()
    p = pre(2.0)
    der = mwgs_derivative(p, np.zeros((3, 2)), np.zeros(3), mwgs_orthogonalize(p))
    assert not np.any(der.u_prime) and not np.any(der.d_beta_prime)


def test_rank_deficient():
    a = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(RankDeficientError):
        mwgs_orthogonalize(PreArrayPair(a, np.ones(3)))


def test_zero_column_rank_deficient():
    a = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(RankDeficientError):
        mwgs_orthogonalize(PreArrayPair(a, np.ones(3)))


def test_shape_checks():
    with pytest.raises(ShapeError):
        PreArrayPair(np.ones((2, 2)), np.ones(2))
    with pytest.raises(ShapeError):
        PreArrayPair(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        PreArrayPair(np.ones((3, 2)), np.array([1.0, -1.0, 1.0]))
    pre, prime = example1_static()
    p = pre(2.0)
    with pytest.raises(ShapeError):
        mwgs_derivative(p, np.ones((2, 2)), np.ones(3), mwgs_orthogonalize(p))


def test_derivative_undefined_at_zero_pivot():
    pre, prime = example1_static()
    p = pre(2.0)
    post = mwgs_orthogonalize(p)
    from udsens.mwgs import PostArrayTriple
    bad = PostArrayTriple(post.u, np.array([0.0, post.d_beta[1]]), post.b)
    with pytest.raises(RankDeficientError):
        mwgs_derivative(p, *prime(2.0), bad)


def test_reorthogonalization_on_nearly_dependent_columns():
    eps = 1e-7
    a = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0 + eps], [1.0, 1.0 + eps, 1.0],
                  [1.0 + eps, 1.0, 1.0]])
    p = PreArrayPair(a, np.ones(4))
    post = mwgs_orthogonalize(p)
    bdb = (post.b.T * p.d_w) @ post.b
    off = bdb - np.diag(np.diag(bdb))
    assert np.max(np.abs(off) / np.sqrt(np.outer(post.d_beta, post.d_beta))) < 1e-8


@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_reconstruction_invariants(r, s, seed):
    if r <= s:
        r = s + 1
    pre, _ = pre_path(seed, r, s)
    p = pre(0.2)
    post = mwgs_orthogonalize(p)
    e1, e2, e3 = reconstruction_errors(p, post)
    assert e1 <= 1e-12 and e2 <= 1e-12 and e3 <= 1e-11
    assert np.all(post.d_beta > 0)
    np.testing.assert_array_equal(np.diag(post.u), np.ones(s))
    assert not np.any(np.tril(post.u, -1))


@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(-1, 1))
def test_derivative_matches_finite_differences(r, s, seed, t):
    if r <= s:
        r = s + 1
    pre, prime = pre_path(seed, r, s)
    eu, ed, der = derivative_errors(pre, prime, t)
    assert eu <= 1e-6 and ed <= 1e-6
    assert not np.any(np.tril(der.u_prime))


@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_gram_identity_derivative(r, s, seed):
    if r <= s:
        r = s + 1
    pre, prime = pre_path(seed, r, s)
    p = pre(0.4)
    a_p, w_p = prime(0.4)
    post = mwgs_orthogonalize(p)
    der = mwgs_derivative(p, a_p, w_p, post)
    a, w = p.a, p.d_w
    lhs = a_p.T @ (w[:, None] * a) + a.T @ (w_p[:, None] * a) + a.T @ (w[:, None] * a_p)
    t = (der.u_prime * post.d_beta) @ post.u.T
    rhs = t + t.T + (post.u * der.d_beta_prime) @ post.u.T
    assert np.linalg.norm(lhs - rhs, 2) <= 1e-10 * max(1.0, np.linalg.norm(lhs, 2))


@given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_weight_scaling_equivariance(r, s, seed, c):
    if r <= s:
        r = s + 1
    pre, _ = pre_path(seed, r, s)
    p = pre(0.0)
    base = mwgs_orthogonalize(p)
    scaled = mwgs_orthogonalize(PreArrayPair(p.a, c * p.d_w))
    np.testing.assert_allclose(scaled.u, base.u, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(scaled.b, base.b, rtol=1e-10, atol=1e-12 * np.max(np.abs(base.b)))
    np.testing.assert_allclose(scaled.d_beta, c * base.d_beta, rtol=1e-12)
