import numpy as np
import pytest

from raybeam.errors import ConfigError
from raybeam.fields import (
    BumpPotential,
    ConstantField,
    ExpPotentialField,
    GaussianLensField,
    RadialPolynomialField,
    SmoothStep,
    check_admissibility,
    make_field,
    unit_ball,
)

DOM = unit_ball(3, 0.2)
LENS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.3], widths=[0.5])
POLY = RadialPolynomialField(DOM, coeffs=[0.2, -0.1])


def fd_gradient(field, X, h=1e-4):
    d = X.shape[1]
    out = np.zeros_like(X)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[:, i] = (field.c(X + e) - field.c(X - e)) / (2 * h)
    return out


def fd_hessian_col(field, X, j, h=1e-4):
    d = X.shape[1]
    e = np.zeros(d)
    e[j] = h
    _, gp = field.c_grad(X + e)
    _, gm = field.c_grad(X - e)
    return (gp - gm) / (2 * h)


def test_constant_field_trivial():
    cf = ConstantField(3)
    c, g, h = cf.eval(np.array([0.3, 0.0, 0.0]))
    assert c == 1.0
    assert np.all(g == 0.0) and np.all(h == 0.0)


def test_lens_center_value():
    # single lens, envelope is 1 near the origin: c(0) = 1 - alpha
    assert LENS.c(np.zeros(3)) == pytest.approx(0.7, abs=1e-15)


def test_support_of_c_minus_one_exact():
    rng = np.random.default_rng(3)
    for field in (LENS, POLY):
        u = rng.normal(size=(500, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = DOM.radius - DOM.epsilon0 * rng.random(500)
        X = DOM.center + u * r[:, None]
        assert np.max(np.abs(field.c(X) - 1.0)) == 0.0


@pytest.mark.parametrize("field", [LENS, POLY], ids=["lens", "poly"])
def test_gradient_hessian_match_finite_differences(field):
    # sample away from the envelope shell, where the third derivative is
    # large enough that the step-1e-4 difference oracle itself carries more
    # than 1e-5 truncation error (the shell is covered by the h^2 test)
    rng = np.random.default_rng(7)
    X = rng.uniform(-0.68, 0.68, size=(60, 3))
    X = X[np.linalg.norm(X, axis=1) < 0.7]
    c, g, H = field.eval(X)
    gfd = fd_gradient(field, X)
    scale = np.maximum(np.abs(g), 1e-3)
    assert np.max(np.abs(g - gfd) / scale) < 1e-5
    for j in range(3):
        col = fd_hessian_col(field, X, j)
        scale = np.maximum(np.abs(H[:, :, j]), 1e-2)
        assert np.max(np.abs(H[:, :, j] - col) / scale) < 1e-5


def test_gradient_fd_convergence_in_envelope_shell():
    # inside the transition shell the analytic gradient is validated by the
    # order of convergence instead of a fixed-step tolerance
    x = np.array([[0.745, 0.05, -0.02]])
    _, g = LENS.c_grad(x)
    hs = [2e-3, 1e-3, 5e-4, 2.5e-4]
    errs = [np.max(np.abs(fd_gradient(LENS, x, h=h) - g)) for h in hs]
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.7 < slope < 2.3


def test_fd_error_scales_quadratically():
    # halving the step should quarter the gradient error (slope 2 +- 0.3)
    x = np.array([[0.31, -0.22, 0.11]])
    _, g = LENS.c_grad(x)
    hs = [4e-3, 2e-3, 1e-3, 5e-4]
    errs = []
    for h in hs:
        gfd = fd_gradient(LENS, x, h=h)
        errs.append(np.max(np.abs(gfd - g)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.7 < slope < 2.3


def test_b_identity():
    # c*b + grad(c) = 0 pointwise
    rng = np.random.default_rng(11)
    X = rng.uniform(-0.7, 0.7, size=(1000, 3))
    c, g, _ = LENS.eval(X)
    b, db = LENS.eval_b(X)
    assert np.max(np.abs(c[:, None] * b + g)) < 1e-12
    # constant field: b and db vanish
    bc, dbc = ConstantField(3).eval_b(X)
    assert np.all(bc == 0.0) and np.all(dbc == 0.0)


def test_db_matches_finite_differences():
    rng = np.random.default_rng(13)
    X = rng.uniform(-0.6, 0.6, size=(20, 3))
    X = X[np.linalg.norm(X, axis=1) < 0.7]
    _, db = LENS.eval_b(X)
    h = 1e-4
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        bp, _ = LENS.eval_b(X + e)
        bm, _ = LENS.eval_b(X - e)
        col = (bp - bm) / (2 * h)
        scale = np.maximum(np.abs(db[:, :, j]), 1e-2)
        assert np.max(np.abs(db[:, :, j] - col) / scale) < 1e-5


def test_smoothstep_partition():
    t = np.linspace(-0.5, 1.5, 101)
    s = SmoothStep.value(t)
    assert np.all(s >= 0) and np.all(s <= 1)
    assert np.max(np.abs(s + SmoothStep.value(1 - t) - 1.0)) < 1e-15


def test_bump_potential_derivatives():
    psi = BumpPotential(center=[0.1, 0.0, -0.1], radius=0.4, height=0.7)
    rng = np.random.default_rng(5)
    # stay inside 70% of the support radius: the difference oracle loses
    # accuracy in the outer shell where the bump's high derivatives blow up
    U = rng.normal(size=(30, 3))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    X = psi.center + U * (0.28 * rng.random((30, 1)))
    g = psi.grad(X)
    h = 1e-5
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        gfd = (psi.value(X + e) - psi.value(X - e)) / (2 * h)
        assert np.max(np.abs(gfd - g[:, j])) < 1e-7
    H = psi.hess(X)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1e-5
        col = (psi.grad(X + e) - psi.grad(X - e)) / (2e-5)
        assert np.max(np.abs(H[:, :, j] - col)) < 1e-6
    assert psi.value(psi.center + np.array([0.41, 0, 0])) == 0.0


def test_exp_potential_field_derivatives():
    psi = BumpPotential(center=[0.1, 0.1, 0.0], radius=0.45, height=1.0)
    pert = ExpPotentialField(LENS, psi, 0.05)
    rng = np.random.default_rng(17)
    X = rng.uniform(-0.3, 0.3, size=(25, 3))
    X = X[np.linalg.norm(X - psi.center, axis=1) < 0.3]
    c, g, H = pert.eval(X)
    gfd = fd_gradient(pert, X)
    assert np.max(np.abs(g - gfd) / np.maximum(np.abs(g), 1e-3)) < 1e-5
    for j in range(3):
        col = fd_hessian_col(pert, X, j)
        assert np.max(np.abs(H[:, :, j] - col) / np.maximum(np.abs(H[:, :, j]), 1e-2)) < 1e-5
    # the perturbation respects the support condition
    edge = np.array([[0.95, 0.0, 0.0]])
    assert pert.c(edge)[0] == 1.0


def test_bounds_check():
    assert LENS.check_bounds(DOM, n_samples=10000)
    assert ConstantField(3).check_bounds(DOM)


def test_make_field_factory_and_errors():
    f = make_field("constant", DOM)
    assert f.kind == "constant"
    f = make_field("gaussian_lens_sum", DOM, centers=[[0, 0, 0]], depths=[0.2], widths=[0.4])
    assert f.kind == "gaussian_lens_sum"
    with pytest.raises(ConfigError):
        make_field("nope", DOM)
    with pytest.raises(ConfigError):
        GaussianLensField(DOM, centers=[[0, 0, 0]], depths=[1.2], widths=[0.4])


def test_admissibility_constant_field():
    cf = ConstantField(3)
    rep = check_admissibility(cf, DOM, T=2.5, n_samples=512, seed=0)
    assert rep.nontrapping_ok
    assert rep.c_bounds_ok and rep.support_ok
    assert rep.epsilon_star > 0 and rep.epsilon1 > 0
    rep_short = check_admissibility(cf, DOM, T=1.5, n_samples=512, seed=0)
    assert not rep_short.nontrapping_ok


def test_admissibility_lens_field():
    # the deep wide lens: the sampler must produce a report with positive
    # margins; it also (correctly) detects waveguide trapping in the
    # envelope shell, so nontrapping_ok is whatever the sampler observed
    rep = check_admissibility(LENS, DOM, T=6.0, n_samples=256, seed=1)
    assert rep.epsilon_star > 0
    assert rep.epsilon1 > 0


def test_admissibility_mild_lens_nontrapping():
    mild = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.2], widths=[0.3])
    rep = check_admissibility(mild, DOM, T=6.0, n_samples=512, seed=1)
    assert rep.nontrapping_ok
    assert rep.epsilon_star > 0
