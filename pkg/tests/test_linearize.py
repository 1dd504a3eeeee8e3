import numpy as np
import pytest

from raybeam import flow, linearize
from raybeam.fields import BumpPotential, ConstantField, ExpPotentialField, GaussianLensField, unit_ball
from raybeam.quadrature import gauss_legendre, gauss_lobatto_on

DOM = unit_ball(3, 0.2)
CF = ConstantField(3)
LENS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.3], widths=[0.5])

P0 = flow.PhasePoint([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
Q0 = flow.cosphere_point(LENS, np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.2, 0.0]))


def test_system_matrix_blocks():
    A = linearize.system_matrix(CF, P0)
    assert np.all(A[:3, :3] == 0.0) and np.all(A[3:, 3:] == 0.0)
    np.testing.assert_allclose(A[:3, 3:], np.diag([-1.0, 1.0, 1.0]), atol=1e-15)
    np.testing.assert_allclose(A[3:, :3], 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        linearize.system_matrix(CF, flow.PhasePoint(np.zeros(3), np.zeros(3)))


def test_system_matrix_is_reduced_jacobian():
    # blocks against finite differences of the unit-speed right-hand side
    p = flow.cosphere_point(LENS, np.array([0.2, -0.1, 0.05]), np.array([0.3, 1.0, 0.1]))
    A = linearize.system_matrix(LENS, p)
    h = 1e-6
    fd = np.zeros((6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        yp = flow.PhasePoint(p.x + e[:3], p.xi + e[3:])
        ym = flow.PhasePoint(p.x - e[:3], p.xi - e[3:])
        dxp, dxip = flow.reduced_rhs(LENS, yp)
        dxm, dxim = flow.reduced_rhs(LENS, ym)
        fd[:, j] = np.concatenate([(dxp - dxm), (dxip - dxim)]) / (2 * h)
    assert np.max(np.abs(A - fd)) < 1e-5


def test_trace_free():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = flow.cosphere_point(LENS, rng.uniform(-0.6, 0.6, 3), rng.normal(size=3))
        assert abs(np.trace(linearize.system_matrix(LENS, p))) < 1e-12


def test_weight_nilpotent_closed_form():
    A = linearize.system_matrix(CF, P0)
    assert np.max(np.abs(A @ A)) == 0.0  # nilpotent
    path = linearize.integrate_weight(CF, P0, 2.0)
    for t in np.linspace(0.0, 2.0, 11):
        assert np.max(np.abs(path.weight(t) - (np.eye(6) - t * A))) < 1e-8


def test_weight_identity_at_zero():
    path = linearize.integrate_weight(CF, P0, 0.0)
    np.testing.assert_allclose(path.weight(0.0), np.eye(6), atol=1e-12)


def test_unimodularity_lens():
    path = linearize.integrate_weight(LENS, Q0, 2.0)
    assert path.det_drift() < 1e-6


def test_weight_at_closed_form_and_boundary():
    p = flow.PhasePoint([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    A = linearize.system_matrix(CF, p)
    W = linearize.weight_at(CF, DOM, p)
    assert np.max(np.abs(W - (np.eye(6) - A))) < 1e-8
    # entering boundary point is its own trace: identity weight
    W0 = linearize.weight_at(CF, DOM, flow.PhasePoint([0.0, -1.0, 0.0], [0.0, 1.0, 0.0]))
    np.testing.assert_allclose(W0, np.eye(6))


def test_weight_cocycle():
    # weight at H^s(p0) equals the transported weight at parameter s
    path = linearize.integrate_weight(LENS, Q0, 1.0)
    for s in (0.3, 0.7):
        ps = path.state(s)
        W = linearize.weight_at(LENS, DOM, ps)
        assert np.max(np.abs(W - path.weight(s))) < 1e-6


def test_weight_at_batch_matches_single():
    pts = [
        flow.cosphere_point(LENS, np.array([0.1, 0.2, 0.0]), np.array([0.5, 1.0, 0.2])),
        flow.cosphere_point(LENS, np.array([-0.3, 0.0, 0.1]), np.array([1.0, -0.4, 0.0])),
    ]
    X = np.stack([p.x for p in pts])
    XI = np.stack([p.xi for p in pts])
    batch = linearize.weight_at_batch(LENS, DOM, X, XI)
    for i, p in enumerate(pts):
        single = linearize.weight_at(LENS, DOM, p)
        assert np.max(np.abs(batch[i] - single)) < 1e-7


def test_fundamental_pair_product():
    pair = linearize.fundamental_pair(LENS, Q0, 2.0)
    assert pair.max_product_deviation() < 1e-7


def test_gauss_lobatto_rule():
    # degree 2n-3 exactness on [0, 1]
    ns, ws = gauss_lobatto_on(0.0, 1.0, 7)
    for k in range(0, 12):
        exact = 1.0 / (k + 1)
        assert abs(np.sum(ws * ns**k) - exact) < 1e-13
    assert ns[0] == 0.0 and ns[-1] == 1.0


def test_delta_flow_zero_perturbation():
    out = linearize.delta_flow(CF, P0, lambda X: np.zeros((len(np.atleast_2d(X)), 3)), 3.0)
    assert np.max(np.abs(out)) < 1e-12


def test_delta_flow_constant_field_oracle():
    psi = BumpPotential(center=[0.1, 0.0, 0.0], radius=0.3, height=0.8)
    db = lambda X: -0.5 * psi.grad(X)
    T = 4.0
    lin = linearize.delta_flow(CF, P0, db, T)
    A = linearize.system_matrix(CF, P0)
    ns, ws = gauss_legendre(200, 0.75, 1.45)
    acc = np.zeros(6)
    for s, w in zip(ns, ws):
        src = np.concatenate([np.zeros(3), db(np.array([[-1 + s, 0.0, 0.0]]))[0]])
        acc += w * ((np.eye(6) - s * A) @ src)
    oracle = np.linalg.solve(np.eye(6) - T * A, acc)
    assert np.max(np.abs(lin - oracle)) < 1e-3
    assert np.max(np.abs(lin - oracle)) / np.max(np.abs(oracle)) < 1e-3


def test_delta_flow_matches_forward_difference():
    psi = BumpPotential(center=[0.1, 0.0, 0.0], radius=0.3, height=0.8)
    db = lambda X: -0.5 * psi.grad(X)
    T = 4.0
    lin = linearize.delta_flow(LENS, Q0, db, T)
    eps = 1e-4
    pert = ExpPotentialField(LENS, psi, eps)
    e1 = flow.flow_endpoints(pert, Q0.x[None, :], Q0.xi[None, :], T)[0]
    e0 = flow.flow_endpoints(LENS, Q0.x[None, :], Q0.xi[None, :], T)[0]
    fd = (e1 - e0) / eps
    assert np.linalg.norm(fd - lin) / np.linalg.norm(lin) < 1e-2


def test_remainder_probe_slope():
    psi = BumpPotential(center=[0.1, 0.1, 0.0], radius=0.45, height=1.0)
    slope, details = linearize.remainder_probe(
        LENS, Q0, psi, T=4.0, eps_list=[1e-1, 10**-1.5, 1e-2, 10**-2.5]
    )
    assert 1.9 < slope < 2.1
    assert details["r_squared"] > 0.99


def test_remainder_probe_constant_background():
    psi = BumpPotential(center=[0.1, 0.0, 0.0], radius=0.35, height=1.0)
    slope, _ = linearize.remainder_probe(
        CF, P0, psi, T=3.0, eps_list=[1e-1, 10**-1.5, 1e-2, 10**-2.5]
    )
    assert 1.9 < slope < 2.1


def test_remainder_probe_needs_enough_eps():
    psi = BumpPotential(center=[0.1, 0.0, 0.0], radius=0.35, height=1.0)
    with pytest.raises(ValueError):
        linearize.remainder_probe(CF, P0, psi, T=3.0, eps_list=[0.1, 0.01])
