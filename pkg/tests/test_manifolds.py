import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from asprom.exceptions import (
    DimensionMismatch,
    LogarithmUndefined,
    NonOrthonormalInput,
    NotOnManifold,
    ZeroMatrix,
)
from asprom.manifolds import (
    Manifold,
    expm_frechet_block,
    general_eig,
    manifold_exp,
    manifold_log,
    procrustes,
    truncate_svd,
)


def random_spd(rng, n, spread=1.0):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + spread * np.eye(n)


def random_gl_near(rng, n, scale=0.3):
    return np.eye(n) + scale * rng.standard_normal((n, n)) / np.sqrt(n)


def rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# truncate_svd ---------------------------------------------------------------
def test_truncate_single_column():
    res = truncate_svd(np.array([[2.0], [0.0], [0.0]]), 0.0)
    assert res.kept_dim == 1
    np.testing.assert_allclose(res.basis[:, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(res.singular_values, [2.0])


def test_truncate_energy_boundary_is_inclusive():
    u = ortho_group.rvs(4, random_state=0)[:, :2]
    z = ortho_group.rvs(3, random_state=1)[:, :2]
    s = u @ np.diag([3.0, 1.0]) @ z.T
    res = truncate_svd(s, 0.1)
    assert res.kept_dim == 1
    assert truncate_svd(s, 0.0999).kept_dim == 2


def test_truncate_full_reconstruction_matches_dense_svd():
    rng = np.random.default_rng(3)
    s = rng.standard_normal((10, 8))
    res = truncate_svd(s, 0.0)
    # independent route: numpy's full SVD
    uf, sf, _ = np.linalg.svd(s, full_matrices=True)
    rank = int(np.sum(sf > 1e-14 * sf[0]))
    ref_proj = uf[:, :rank] @ uf[:, :rank].T @ s
    np.testing.assert_allclose(res.basis @ res.basis.T @ s, s, atol=1e-10)
    np.testing.assert_allclose(res.basis @ res.basis.T @ s, ref_proj, atol=1e-10)
    np.testing.assert_allclose(res.singular_values, sf[:rank], rtol=1e-12)


def test_truncate_zero_matrix_raises():
    with pytest.raises(ZeroMatrix):
        truncate_svd(np.zeros((3, 2)), 0.0)


def test_truncate_sign_convention_and_orthonormality():
    rng = np.random.default_rng(5)
    res = truncate_svd(rng.standard_normal((12, 6)), 1e-3)
    b = res.basis
    np.testing.assert_allclose(b.T @ b, np.eye(res.kept_dim), atol=1e-12)
    idx = np.argmax(np.abs(b), axis=0)
    assert np.all(b[idx, np.arange(b.shape[1])] > 0)


def test_truncate_rank_deficient_columns_excluded():
    v = np.array([[1.0], [2.0], [2.0]])
    s = np.hstack([v, 2 * v, np.zeros((3, 1))])
    res = truncate_svd(s, 0.0)
    assert res.kept_dim == 1
    assert res.singular_values.size == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_truncate_dim_nonincreasing_in_tolerance(seed, tol):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((7, 5)) @ np.diag([5, 2, 1, 0.3, 0.01])
    assert truncate_svd(s, tol).kept_dim <= truncate_svd(s, tol / 2).kept_dim
    tail = np.sum(truncate_svd(s, tol).singular_values[truncate_svd(s, tol).kept_dim:] ** 2)
    assert tail / np.sum(truncate_svd(s, 0).singular_values ** 2) <= tol + 1e-15


# procrustes -----------------------------------------------------------------
def test_procrustes_identity():
    ref = ortho_group.rvs(6, random_state=2)[:, :3]
    np.testing.assert_allclose(procrustes(ref, ref), np.eye(3), atol=1e-12)


def test_procrustes_recovers_rotation():
    ref = ortho_group.rvs(8, random_state=4)[:, :4]
    r = ortho_group.rvs(4, random_state=5)
    q = procrustes(ref, ref @ r)
    np.testing.assert_allclose(q, r.T, atol=1e-12)
    assert np.linalg.norm(ref - ref @ r @ q) < 1e-12


def test_procrustes_beats_random_orthogonal_matrices():
    rng = np.random.default_rng(11)
    ref = np.linalg.qr(rng.standard_normal((20, 4)))[0]
    oth = np.linalg.qr(rng.standard_normal((20, 4)))[0]
    q = procrustes(ref, oth)
    np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-12)
    best = np.linalg.norm(ref - oth @ q)
    qs = ortho_group.rvs(4, size=10_000, random_state=12)
    resid = np.linalg.norm(ref[None] - oth[None] @ qs, axis=(1, 2))
    assert np.all(best <= resid)
    assert best <= np.linalg.norm(ref - oth)


def test_procrustes_errors():
    ref = np.eye(4)[:, :2]
    with pytest.raises(DimensionMismatch):
        procrustes(ref, np.eye(4)[:, :3])
    with pytest.raises(NonOrthonormalInput):
        procrustes(ref, 2 * ref)


# log / exp ------------------------------------------------------------------
def test_spd_log_diagonal():
    g = manifold_log(Manifold.SPD, np.eye(2), np.diag([np.e, 1.0]))
    np.testing.assert_allclose(g, np.diag([1.0, 0.0]), atol=1e-14)


def test_euclidean_log_of_base_is_zero():
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(manifold_log("euclidean", x, x), np.zeros((2, 3)))


def test_exp_of_zero_is_base():
    rng = np.random.default_rng(0)
    x = random_spd(rng, 4)
    for kind, base in ((Manifold.SPD, x), (Manifold.GENERAL_LINEAR, x + 0.1 * np.triu(x)),
                       (Manifold.EUCLIDEAN, x[:, :3])):
        out = manifold_exp(kind, base, np.zeros_like(base))
        np.testing.assert_allclose(out, base, rtol=1e-13, atol=1e-13)


def test_spd_exp_diagonal():
    out = manifold_exp(Manifold.SPD, np.eye(2), np.diag([2.0, 0.0]))
    np.testing.assert_allclose(out, np.diag([np.e**2, 1.0]), rtol=1e-14)


def test_gl_round_trip():
    rng = np.random.default_rng(8)
    x = random_gl_near(rng, 5)
    y = random_gl_near(rng, 5)
    g = manifold_log(Manifold.GENERAL_LINEAR, x, y)
    assert rel_fro(manifold_exp(Manifold.GENERAL_LINEAR, x, g), y) <= 1e-8


def test_spd_exp_stays_positive_definite():
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = random_spd(rng, 5)
        t = rng.standard_normal((5, 5)) * 2
        out = manifold_exp(Manifold.SPD, x, t)
        np.testing.assert_array_equal(out, out.T)
        assert np.linalg.eigvalsh(out).min() > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(list(Manifold)))
def test_round_trip_property(seed, kind):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    if kind is Manifold.SPD:
        x, y = random_spd(rng, n), random_spd(rng, n)
    elif kind is Manifold.GENERAL_LINEAR:
        x, y = random_gl_near(rng, n), random_gl_near(rng, n)
    else:
        x, y = rng.standard_normal((n, n + 1)), rng.standard_normal((n, n + 1))
    out = manifold_exp(kind, x, manifold_log(kind, x, y))
    assert rel_fro(out, y) <= 1e-8
    if kind is Manifold.SPD:
        np.testing.assert_array_equal(manifold_log(kind, x, y), manifold_log(kind, x, y).T)


def test_not_on_manifold():
    with pytest.raises(NotOnManifold):
        manifold_log(Manifold.SPD, np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(NotOnManifold):
        manifold_log(Manifold.SPD, np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NotOnManifold):
        manifold_log(Manifold.GENERAL_LINEAR, np.eye(2), np.zeros((2, 2)))


def test_gl_log_negative_axis_undefined():
    with pytest.raises(LogarithmUndefined):
        manifold_log(Manifold.GENERAL_LINEAR, np.eye(2), np.diag([-1.0, 1.0]))


def test_expm_frechet_matches_finite_difference():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 4)) * 0.5
    e = rng.standard_normal((4, 4))
    from scipy.linalg import expm, expm_frechet

    h = 1e-6
    fd = (expm(a + h * e) - expm(a - h * e)) / (2 * h)
    np.testing.assert_allclose(expm_frechet_block(a, e), fd, rtol=1e-7, atol=1e-8)
    np.testing.assert_allclose(expm_frechet_block(a, e), expm_frechet(a, e, compute_expm=False),
                               rtol=1e-10, atol=1e-12)


# general_eig -----------------------------------------------------------------
def test_eig_diagonal():
    w = general_eig(np.diag([1.0, 2.0, 3.0])).values
    np.testing.assert_allclose(np.sort(w.real), [1, 2, 3])
    np.testing.assert_array_equal(w.imag, 0)


def test_eig_rotation_generator():
    w = general_eig(np.array([[0.0, 1.0], [-1.0, 0.0]])).values
    np.testing.assert_allclose(sorted(w.imag), [-1, 1], atol=1e-15)
    np.testing.assert_allclose(w.real, 0, atol=1e-15)


def test_eig_trace_identity_and_pairs():
    rng = np.random.default_rng(21)
    m = rng.standard_normal((50, 50))
    res = general_eig(m)
    assert abs(res.values.sum() - np.trace(m)) <= 1e-8 * abs(np.trace(m))
    assert abs(res.values.sum().imag) < 1e-10
    cplx = res.values[np.abs(res.values.imag) > 0]
    assert np.sum(cplx.imag > 0) == np.sum(cplx.imag < 0)
    np.testing.assert_allclose(np.sort_complex(cplx), np.sort_complex(cplx.conj()), atol=0)


def test_eig_symmetric_has_real_spectrum():
    rng = np.random.default_rng(22)
    a = rng.standard_normal((30, 30))
    m = a + a.T
    w = general_eig(m).values
    assert np.max(np.abs(w.imag)) <= 1e-10 * np.linalg.norm(m)


def test_eig_left_vectors():
    rng = np.random.default_rng(23)
    m = rng.standard_normal((8, 8))
    res = general_eig(m, left=True)
    lhs = res.left.conj().T @ m
    np.testing.assert_allclose(lhs, res.values[:, None] * res.left.conj().T, atol=1e-10)
