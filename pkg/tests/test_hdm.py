import numpy as np
import pytest
import scipy.linalg as la

from asprom.exceptions import DimensionMismatch, InvalidConfig, OutOfBounds
from asprom.hdm import (
    BlockOperators,
    DesignSpace,
    FsiOperators,
    HdmConfig,
    assemble_blocks,
    generate_hdm,
    hdm_residual,
)

from conftest import make_config

OP_NAMES = ("A", "H", "R", "G", "M", "D", "K", "P")


def test_determinism():
    h1 = generate_hdm(make_config(nf=40, ns=5, seed=7))
    h2 = generate_hdm(make_config(nf=40, ns=5, seed=7))
    mu = np.linspace(-0.2, 0.2, 10)
    o1, o2 = h1.operators(mu), h2.operators(mu)
    for name in OP_NAMES:
        assert np.array_equal(getattr(o1, name), getattr(o2, name))
    assert h1.gamma0 == h2.gamma0


def test_config_validation():
    with pytest.raises(InvalidConfig):
        make_config(nf=10, ns=5)
    with pytest.raises(InvalidConfig):
        HdmConfig(nf=40, ns=5, design_space=DesignSpace.symmetric(3, 0.3),
                  parameter_roles=["fluid_shape"] * 3)
    with pytest.raises(InvalidConfig):
        DesignSpace([0.0, 1.0], [0.0, 2.0])


def test_operator_structure(hdm_mid):
    ops = hdm_mid.operators(np.zeros(10))
    assert np.all(np.diag(ops.A) > 0)
    assert np.count_nonzero(ops.A - np.diag(np.diag(ops.A))) == 0
    for name in ("M", "D", "K"):
        m = getattr(ops, name)
        assert np.max(np.abs(m - m.T)) <= 1e-12
        assert la.eigvalsh(m).min() > 0
    # nonsymmetric fluid operator with positive-real-part spectrum
    assert np.max(np.abs(ops.H - ops.H.T)) > 0
    assert la.eigvals(la.solve(ops.A, ops.H)).real.min() > 0


def test_uncoupled_spectrum_is_union(hdm_mid):
    ops = hdm_mid.operators(np.zeros(10), gamma0=0.0)
    blk = assemble_blocks(ops)
    full = np.sort_complex(la.eigvals(la.solve(blk.calA, blk.calB)))
    fluid = la.eigvals(la.solve(ops.A, ops.H))
    ns = ops.ns
    comp = np.block([[ops.D, ops.K], [-np.eye(ns), np.zeros((ns, ns))]])
    struct = la.eigvals(la.solve(la.block_diag(ops.M, ops.M), comp))
    union = np.sort_complex(np.concatenate([fluid, struct]))
    np.testing.assert_allclose(full, union, rtol=1e-9, atol=1e-9)


def test_operators_smooth_second_order(hdm_mid, rng):
    mu0 = rng.uniform(-0.1, 0.1, 10)
    for i in (0, 4, 8):
        e = np.zeros(10)
        e[i] = 1.0
        errs = []
        for step in (1e-3, 5e-4):
            ref_step = 1e-6
            d_ref = {n: (getattr(hdm_mid.operators(mu0 + ref_step * e), n)
                         - getattr(hdm_mid.operators(mu0 - ref_step * e), n)) / (2 * ref_step)
                     for n in OP_NAMES}
            d_step = {n: (getattr(hdm_mid.operators(mu0 + step * e), n)
                          - getattr(hdm_mid.operators(mu0 - step * e), n)) / (2 * step)
                      for n in OP_NAMES}
            errs.append(max(np.max(np.abs(d_step[n] - d_ref[n])) for n in OP_NAMES))
        # central differences: error shrinks ~4x when the step halves (or is already at round-off)
        assert errs[1] <= errs[0] / 3 or errs[0] < 1e-8


def test_perturbation_is_order_eps(hdm_mid):
    base = hdm_mid.operators(np.zeros(10))
    for eps in (1e-4, 1e-6):
        mu = np.zeros(10)
        mu[0] = eps
        pert = hdm_mid.operators(mu)
        diff = max(np.max(np.abs(getattr(pert, n) - getattr(base, n))) for n in OP_NAMES)
        assert 0 < diff < 100 * eps


def test_assemble_smallest_instance():
    ops = FsiOperators(A=np.eye(2), H=2 * np.eye(2), R=np.array([[3.0], [4.0]]),
                       G=np.array([[5.0], [6.0]]), M=np.array([[7.0]]), D=np.array([[8.0]]),
                       K=np.array([[9.0]]), P=np.array([[10.0, 11.0]]))
    blk = assemble_blocks(ops)
    expected_a = np.diag([1.0, 1.0, 7.0, 7.0])
    expected_b = np.array([
        [2, 0, 3, 5],
        [0, 2, 4, 6],
        [-10, -11, 8, 9],
        [0, 0, -7, 0],
    ], dtype=float)
    np.testing.assert_array_equal(blk.calA, expected_a)
    np.testing.assert_array_equal(blk.calB, expected_b)
    assert blk.nq == 4


def test_assemble_dimension_mismatch():
    ops = FsiOperators(A=np.eye(2), H=np.eye(2), R=np.ones((2, 1)), G=np.ones((2, 1)),
                       M=np.eye(1), D=np.eye(1), K=np.eye(1), P=np.ones((1, 3)))
    with pytest.raises(DimensionMismatch):
        assemble_blocks(ops)


def test_decoupled_determinant(hdm_small):
    ops = hdm_small.operators(np.zeros(10), gamma0=0.0)
    blk = assemble_blocks(ops)
    ns = ops.ns
    lower = blk.calB[ops.nf:, ops.nf:]
    assert np.allclose(blk.calB[:ops.nf, ops.nf:], 0)
    det_full = np.linalg.det(blk.calB)
    det_blocks = np.linalg.det(ops.H) * np.linalg.det(lower)
    assert det_full == pytest.approx(det_blocks, rel=1e-10)
    assert lower.shape == (2 * ns, 2 * ns)


def test_struct_blocks_positive_definite(hdm_mid):
    blk = hdm_mid.blocks(np.zeros(10))
    s = blk.calA[blk.nf:, blk.nf:]
    assert la.eigvalsh(0.5 * (s + s.T)).min() > 0


def test_baseline_is_damped(hdm_mid):
    blk = hdm_mid.blocks(np.zeros(10))
    n = la.solve(blk.calA, blk.calB)
    assert la.eigvals(n).real.min() > 0


def test_residual_eigenpair_and_phase(hdm_small, rng):
    blk = hdm_small.blocks(np.zeros(10))
    w, v = la.eig(-la.solve(blk.calA, blk.calB))
    j = int(np.argmin(np.abs(w)))
    q = v[:, j] / np.linalg.norm(v[:, j])
    r = hdm_residual(blk, w[j], q)
    assert r <= 1e-8 * np.linalg.norm(blk.calB)
    qr = rng.standard_normal(blk.nq)
    qr /= np.linalg.norm(qr)
    assert hdm_residual(blk, 0.0, qr) == pytest.approx(np.linalg.norm(blk.calB @ qr), rel=1e-14)
    lam = 0.3 + 1.1j
    vals = [hdm_residual(blk, lam, np.exp(1j * t) * qr) for t in np.linspace(0, 2 * np.pi, 8)]
    np.testing.assert_allclose(vals, vals[0], rtol=1e-12)
    with pytest.raises(DimensionMismatch):
        hdm_residual(blk, 0.0, qr[:-1] / np.linalg.norm(qr[:-1]))


def test_objective_at_origin(hdm_mid):
    f, g = hdm_mid.surrogate_objective(np.zeros(10))
    assert f == 1.0
    np.testing.assert_array_equal(g, hdm_mid._a)


def test_objective_gradient_fd(hdm_mid, rng):
    h = 1e-6
    for _ in range(20):
        mu = rng.uniform(-0.25, 0.25, 10)
        _, g = hdm_mid.surrogate_objective(mu)
        fd = np.array([
            (hdm_mid.surrogate_objective(mu + h * e)[0] - hdm_mid.surrogate_objective(mu - h * e)[0]) / (2 * h)
            for e in np.eye(10)
        ])
        assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_objective_invariant_off_planted_span(hdm_mid, rng):
    vs = hdm_mid.planted_basis
    for _ in range(10):
        mu = rng.uniform(-0.1, 0.1, 10)
        z = rng.standard_normal(10)
        z -= vs @ (vs.T @ z)
        z *= 0.05 / np.linalg.norm(z)
        assert hdm_mid.surrogate_objective(mu + z)[0] == pytest.approx(
            hdm_mid.surrogate_objective(mu)[0], rel=1e-13)
        # directional derivative along z vanishes
        assert abs(hdm_mid.surrogate_objective(mu)[1] @ z) < 1e-13


def test_constraints_feasible_at_origin_and_jacobian(hdm_mid, rng):
    g, _ = hdm_mid.surrogate_constraints(np.zeros(10))
    assert np.all(g <= -0.1)
    h = 1e-6
    for _ in range(5):
        mu = rng.uniform(-0.25, 0.25, 10)
        _, jac = hdm_mid.surrogate_constraints(mu)
        fd = np.column_stack([
            (hdm_mid.surrogate_constraints(mu + h * e)[0] - hdm_mid.surrogate_constraints(mu - h * e)[0]) / (2 * h)
            for e in np.eye(10)
        ])
        assert np.linalg.norm(fd - jac) <= 1e-6 * np.linalg.norm(jac)
        d = rng.uniform(-0.01, 0.01, 10)
        g0, j0 = hdm_mid.surrogate_constraints(mu)
        g1, _ = hdm_mid.surrogate_constraints(mu + d)
        assert g1[1] - g0[1] == pytest.approx(j0[1] @ d, abs=1e-14)


def test_surrogates_out_of_bounds(hdm_mid):
    with pytest.raises(OutOfBounds):
        hdm_mid.surrogate_objective(np.full(10, 0.5))
    with pytest.raises(OutOfBounds):
        hdm_mid.surrogate_constraints(np.full(10, -0.5))


def test_digest_changes_with_config():
    assert make_config(seed=1).digest() != make_config(seed=2).digest()
    assert make_config(seed=1).digest() == make_config(seed=1).digest()
    cfg = make_config(seed=5)
    assert HdmConfig.from_dict(cfg.to_dict()).digest() == cfg.digest()
