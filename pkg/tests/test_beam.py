import numpy as np
import pytest

from raybeam import beam, flow
from raybeam.errors import NonTransversalError, PositivityError
from raybeam.fields import ConstantField, GaussianLensField, unit_ball
from raybeam.util import linear_fit

DOM = unit_ball(3, 0.2)
CF = ConstantField(3)
LENS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.3], widths=[0.5])
BEAM_LENS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.12], widths=[0.18])


def straight_beam(T=2.0):
    s0 = beam.initial_beam([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    return beam.propagate_beam(CF, s0, (0.0, T))


def lens_hit():
    q0 = flow.cosphere_point(LENS, np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.25, 0.1]))
    rec = flow.scattering_relation(LENS, DOM, q0)
    s0 = beam.BeamState(x=q0.x, xi=q0.xi, M=1j * np.eye(3), a=1.0, t=0.0)
    # short overshoot so difference stencils at the hit stay on the path
    path = beam.propagate_beam(LENS, s0, (0.0, rec.l + 0.05))
    chart = beam.BoundaryChart(DOM, rec.exit.x)
    return path, chart, rec


def test_beam_rhs_constant_field_structure():
    s = beam.BeamState(x=np.zeros(3), xi=np.array([1.0, 0.0, 0.0]), M=1j * np.eye(3), a=1.0)
    dx, dxi, dM, da = beam.beam_rhs(CF, s)
    np.testing.assert_allclose(dx, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(dxi, 0.0)
    # Mdot = -M (I - xi xi^T) M for unit xi
    P = np.eye(3) - np.outer(s.xi, s.xi)
    np.testing.assert_allclose(dM, -(s.M @ P @ s.M), atol=1e-14)
    with pytest.raises(ValueError):
        beam.beam_rhs(CF, beam.BeamState(x=np.zeros(3), xi=np.zeros(3), M=1j * np.eye(3), a=1.0))


def test_riccati_closed_form():
    path = straight_beam()
    for t in np.linspace(0.0, 2.0, 21):
        st = path.state(t)
        m = (t + 1j) / (1 + t * t)
        np.testing.assert_allclose(st.M, np.diag([1j, m, m]), atol=1e-8)
        assert abs(abs(st.a) - (1 + t * t) ** -0.5) < 1e-8
        assert np.linalg.eigvalsh(st.M.imag)[0] > 0
    # zero-length span returns the initial state
    s0 = beam.initial_beam([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    p0 = beam.propagate_beam(CF, s0, (0.0, 0.0))
    np.testing.assert_allclose(p0.state(0.0).M, 1j * np.eye(3), atol=1e-12)


def test_amplitude_frequency_normalization():
    lam = 128.0
    s0 = beam.initial_beam([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], lam=lam)
    assert s0.a == pytest.approx(lam ** 0.75)
    path = beam.propagate_beam(CF, s0, (0.0, 1.0))
    g = beam.eval_beam(path, 1.0, path.state(1.0).x, lam)
    assert abs(abs(g) - lam**0.75 / np.sqrt(2.0)) < 1e-6


def test_lens_beam_positivity_floor():
    q0 = flow.cosphere_point(LENS, np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.2, 0.0]))
    s0 = beam.BeamState(x=q0.x, xi=q0.xi, M=1j * np.eye(3), a=1.0, t=0.0)
    path = beam.propagate_beam(LENS, s0, (0.0, 4.0))
    assert path.im_eig_floor() > 0.0
    assert path.max_M_norm < 10.0
    assert path.symmetry_drift < 1e-9


def test_propagate_rejects_bad_initial_hessian():
    bad = beam.BeamState(x=np.zeros(3), xi=np.array([1.0, 0, 0]), M=-1j * np.eye(3), a=1.0)
    with pytest.raises(PositivityError):
        beam.propagate_beam(CF, bad, (0.0, 1.0))


def test_eval_beam_gaussian_decay():
    path = straight_beam()
    lam = 200.0
    st = path.state(1.0)
    rs = np.linspace(0.01, 0.1, 12)
    vals = [abs(beam.eval_beam(path, 1.0, st.x + np.array([0.0, r, 0.0]), lam)) for r in rs]
    slope, _, r2 = linear_fit(rs**2, np.log(vals))
    expected = -lam * st.M.imag[1, 1] / 2.0
    assert abs(slope - expected) / abs(expected) < 0.05
    assert r2 > 0.999
    with pytest.raises(ValueError):
        beam.eval_beam(path, 5.0, st.x, lam)


def test_boundary_jet_matches_finite_differences():
    path, chart, rec = lens_hit()
    t1 = rec.l
    jet = beam.boundary_jet(LENS, path, chart, t1)
    # dense-output tau as a function of (t, y)
    def tau_hat(t, y):
        st = path.state(t)
        x = chart.F(np.asarray(y))
        z = x - st.x
        return z @ st.xi + 0.5 * z @ (st.M @ z)

    h = 2e-3
    grad_fd = np.zeros(3, dtype=complex)
    grad_fd[0] = (tau_hat(t1 + h, [0, 0]) - tau_hat(t1 - h, [0, 0])) / (2 * h)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        grad_fd[j + 1] = (tau_hat(t1, e) - tau_hat(t1, -e)) / (2 * h)
    assert np.max(np.abs(grad_fd - jet.gradient)) < 1e-5

    hess_fd = np.zeros((3, 3), dtype=complex)
    vecs = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    def tau_w(w):
        return tau_hat(t1 + w[0], w[1:])
    for i in range(3):
        for j in range(3):
            hess_fd[i, j] = (
                tau_w(h * (vecs[i] + vecs[j]))
                - tau_w(h * (vecs[i] - vecs[j]))
                - tau_w(h * (vecs[j] - vecs[i]))
                + tau_w(-h * (vecs[i] + vecs[j]))
            ) / (4 * h * h)
    assert np.max(np.abs(hess_fd - jet.Mhat)) < 1e-5


def test_jet_normal_incidence_tangential_gradient():
    s0 = beam.initial_beam([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    path = beam.propagate_beam(CF, s0, (0.0, 2.0))
    chart = beam.BoundaryChart(DOM, np.array([1.0, 0.0, 0.0]))
    jet = beam.boundary_jet(CF, path, chart, 2.0)
    np.testing.assert_allclose(jet.gradient[1:], 0.0, atol=1e-10)
    assert jet.gradient[0] == pytest.approx(-1.0, abs=1e-10)
    assert jet.min_im_eig > 0


def test_reflection_mirror_and_jets():
    path, chart, rec = lens_hit()
    t1 = rec.l
    st1 = path.state(t1)
    jet = beam.boundary_jet(LENS, path, chart, t1)
    refl = beam.reflect_beam(LENS, path, chart, t1)
    nu = chart.nu
    np.testing.assert_allclose(
        refl.xi, st1.xi - 2 * float(np.dot(st1.xi, nu)) * nu, atol=1e-12
    )
    assert abs(np.linalg.norm(refl.xi) - np.linalg.norm(st1.xi)) < 1e-12
    assert refl.a == pytest.approx(-st1.a)
    jet_r = beam.boundary_jet_from_state(LENS, refl, chart)
    assert np.max(np.abs(jet.Mhat - jet_r.Mhat)) < 1e-8
    assert np.max(np.abs(jet.gradient - jet_r.gradient)) < 1e-8
    assert np.linalg.eigvalsh(refl.M.imag)[0] > 0
    # involution
    back = beam.reflect_beam_state(LENS, refl, chart)
    assert np.max(np.abs(back.xi - st1.xi)) < 1e-8
    assert np.max(np.abs(back.M - st1.M)) < 1e-8


def test_normal_mirror_trivial():
    s0 = beam.initial_beam([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    path = beam.propagate_beam(CF, s0, (0.0, 2.0))
    chart = beam.BoundaryChart(DOM, np.array([1.0, 0.0, 0.0]))
    refl = beam.reflect_beam(CF, path, chart, 2.0)
    np.testing.assert_allclose(refl.xi, [-1.0, 0.0, 0.0], atol=1e-12)


def test_reflect_rejects_tangential():
    path, chart, rec = lens_hit()
    st = path.state(rec.l)
    grazing = beam.BeamState(
        x=st.x, xi=chart.frame[:, 0], M=1j * np.eye(3), a=1.0, t=st.t
    )
    with pytest.raises(NonTransversalError):
        beam.boundary_jet_from_state(LENS, grazing, chart)


def test_wave_residual_against_brute_force():
    q0 = flow.cosphere_point(LENS, np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.25, 0.1]))
    s0 = beam.BeamState(x=q0.x, xi=q0.xi, M=1j * np.eye(3), a=1.0, t=0.0)
    path = beam.propagate_beam(LENS, s0, (0.0, 2.4), tol=1e-12)
    lam, t = 100.0, 1.2
    st = path.state(t)
    X = st.x + np.array([0.02, -0.01, 0.015])
    mine = beam.wave_residual(LENS, path, t, X[None, :], lam, amp_scale=lam**0.75)[0]
    h = 1e-5
    g = lambda tt, xx: lam**0.75 * beam.eval_beam(path, tt, xx, lam)
    gtt = (g(t + h, X) - 2 * g(t, X) + g(t - h, X)) / h**2
    lap = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        lap += (g(t, X + e) - 2 * g(t, X) + g(t, X - e)) / h**2
    brute = gtt / LENS.c(X) ** 2 - lap
    assert abs(mine - brute) / abs(brute) < 1e-3


def test_residual_zero_amplitude():
    s0 = beam.BeamState(x=np.array([-1.0, 0, 0]), xi=np.array([1.0, 0, 0]), M=1j * np.eye(3), a=0.0)
    path = beam.propagate_beam(CF, s0, (0.0, 1.0))
    vals = beam.wave_residual(CF, path, 0.5, np.array([[-0.5, 0.01, 0.0]]), 100.0)
    assert np.all(vals == 0.0)


def test_residual_scaling_constant():
    s0 = beam.initial_beam([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    norms, slope, r2 = beam.residual_scan(CF, s0, (0.0, 2.0), [50.0, 100.0, 200.0, 400.0], n_t=12)
    assert slope <= 0.6
    assert all(v > 0 for v in norms.values())


def test_interaction_same_beam_norm():
    lam = 200.0
    lin = np.array([-1.0, 0.3, 0.1])
    A = beam.FrozenBeam(amplitude=lam**0.75, base=np.zeros(3), linear=lin, quad=1j * np.eye(3))
    v = beam.interaction(A, A, lam)
    expected = lam**1.5 * (np.pi / lam) ** 1.5
    assert v.imag == pytest.approx(0.0, abs=1e-12)
    assert v.real == pytest.approx(expected, rel=1e-12)


def test_interaction_decay_in_separation():
    lin = np.array([-1.0, 0.3, 0.1])
    Q = 1j * np.eye(3)
    lam = 400.0
    vals = []
    for dz in (0.0, 0.1, 0.2):
        A = beam.FrozenBeam(amplitude=1.0, base=np.zeros(3), linear=lin, quad=Q)
        B = beam.FrozenBeam(amplitude=1.0, base=np.array([dz, 0, 0]), linear=lin, quad=Q)
        vals.append(abs(beam.interaction(A, B, lam)))
    assert vals[0] > vals[1] > vals[2]
    # closed-form check: |<g_dz, g_0>| = (pi/lam)^{3/2} exp(-lam dz^2 / 4)
    expected = (np.pi / lam) ** 1.5 * np.exp(-lam * 0.1**2 / 4.0)
    assert vals[1] == pytest.approx(expected, rel=1e-10)


def test_frozen_beam_from_state_matches_beam_on_boundary():
    path, chart, rec = lens_hit()
    t1 = rec.l
    lam = 300.0
    st1 = path.state(t1)
    frozen = beam.frozen_beam(LENS, st1, chart)
    # at the hit point both agree exactly
    g_hit = beam.eval_beam(path, t1, chart.F(np.zeros(2)), lam)
    f_hit = frozen(np.array([[t1, 0.0, 0.0]]), lam)[0]
    assert abs(g_hit - f_hit) < 1e-12
    # nearby the frozen beam approximates the restricted beam
    w = np.array([[t1 + 0.01, 0.004, -0.003]])
    g_near = beam.eval_beam(path, w[0, 0], chart.F(w[0, 1:]), lam)
    f_near = frozen(w, lam)[0]
    assert abs(g_near - f_near) / abs(g_near) < 0.05


def test_gaussian_bound_oracle_reference():
    lhs, _ = beam.gaussian_bound_oracle(
        np.eye(3), np.eye(3), np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(3), np.zeros(3), 100.0
    )
    assert lhs == pytest.approx((np.pi / 200.0) ** 1.5, rel=1e-12)
    with pytest.raises(PositivityError):
        beam.gaussian_bound_oracle(
            -np.eye(3), np.eye(3), np.zeros((3, 3)), np.zeros((3, 3)), np.zeros(3), np.zeros(3), 10.0
        )


def test_gaussian_bound_lambda_decay():
    rng = np.random.default_rng(3)
    M1 = beam._random_spd(3, 0.5, 2.0, rng)
    M2 = beam._random_spd(3, 0.5, 2.0, rng)
    dx = np.array([0.2, -0.1, 0.05])
    dxi = np.array([0.1, 0.2, 0.0])
    lams = np.array([100.0, 200.0, 400.0, 800.0])
    vals = [
        beam.gaussian_bound_oracle(M1, M2, np.zeros((3, 3)), np.zeros((3, 3)), dx, dxi, lam)[0]
        for lam in lams
    ]
    slope, _, r2 = linear_fit(lams, np.log(vals))
    assert slope < 0.0 and r2 > 0.99


def test_boundary_window_norms_scaling():
    # frozen-beam gap shrinks relative to the beam norm as lam grows, and
    # the Neumann residual stays an order below the leading term
    path, chart, rec = lens_hit()
    t1 = rec.l
    refl = beam.reflect_beam(LENS, path, chart, t1)
    eps1 = 0.5
    t_lo, t_hi = t1 - eps1 / 2, t1 + eps1 / 2
    path_two = beam.propagate_two_sided(LENS, path.state(0.0), 0.0, t_hi + 0.05)
    refl_path = beam.propagate_two_sided(LENS, refl, t_lo - 0.05, t_hi + 0.05)
    rel_gaps = []
    ratios = []
    lams = [100.0, 400.0, 1600.0]
    for lam in lams:
        out = beam.boundary_window_norms(
            LENS, DOM, path_two, refl_path, chart, t1, lam, (t_lo, t_hi), n_t=32, n_y=24
        )
        rel_gaps.append(out["frozen_gap"] / out["g_norm"])
        ratios.append(out["neumann_residual"] / out["neumann_leading"])
    slope, _, _ = linear_fit(np.log(lams), np.log(rel_gaps))
    assert slope <= -0.4
    assert ratios[-1] < ratios[0]
    assert ratios[-1] < 0.2
