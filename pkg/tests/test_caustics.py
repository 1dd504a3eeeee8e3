import numpy as np
import pytest

from raybeam import caustics
from raybeam.fields import ConstantField, GaussianLensField, unit_ball

DOM = unit_ball(3, 0.2)
CF = ConstantField(3)
LENS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.3], widths=[0.5])
FOCUS = GaussianLensField(DOM, centers=[[0.0, 0.0, 0.0]], depths=[0.5], widths=[0.4])


def test_phi_constant_field():
    x = np.array([0.1, -0.2, 0.0])
    xi = np.array([0.3, 0.2, -0.1])
    np.testing.assert_allclose(caustics.phi(CF, x, xi), x + xi, atol=1e-10)
    np.testing.assert_allclose(caustics.phi(LENS, x, np.zeros(3)), x)


def test_phi_flow_time_rescaling():
    # phi(x, t*theta) equals the time-t flow of the unit covector
    from raybeam import flow

    x = np.array([-0.2, 0.1, 0.0])
    theta = flow.cosphere_point(LENS, x, np.array([1.0, 0.4, -0.2])).xi
    for t in (0.5, 1.5):
        direct = caustics.phi(LENS, x, t * theta)
        via_flow = flow.flow_point(LENS, flow.PhasePoint(x, theta), t).x
        assert np.max(np.abs(direct - via_flow)) < 1e-8


def test_dphi_constant_identity():
    rec = caustics.dphi(CF, np.array([0.1, 0.0, 0.2]), np.array([0.4, -0.3, 0.1]))
    np.testing.assert_allclose(rec.dphi, np.eye(3), atol=1e-12)
    assert abs(rec.det - 1.0) < 1e-12


def test_dphi_zero_covector_is_c_squared():
    # the time-1 flow moves the base point by c^2 xi to first order
    for field in (CF, LENS):
        x = np.array([0.15, 0.05, -0.1])
        rec = caustics.dphi(field, x, np.zeros(3))
        c = field.c(x)
        np.testing.assert_allclose(rec.dphi, c * c * np.eye(3), atol=1e-10)


def test_dphi_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = np.array([0.1, -0.05, 0.08])
    XIs = rng.normal(scale=0.5, size=(20, 3))
    J = caustics.dphi_batch(LENS, x, XIs, tol=1e-10)
    h = 5e-4
    for k in range(len(XIs)):
        fd = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd[:, j] = (
                caustics.phi(LENS, x, XIs[k] + e, tol=1e-10)
                - caustics.phi(LENS, x, XIs[k] - e, tol=1e-10)
            ) / (2 * h)
        assert np.max(np.abs(fd - J[k])) / np.max(np.abs(J[k])) < 1e-5


def test_det_at_zero_is_c_to_the_d():
    x = np.array([0.2, 0.1, 0.0])
    rec = caustics.dphi(LENS, x, np.zeros(3))
    c = LENS.c(x)
    assert abs(rec.det - c ** (2 * 3)) < 1e-8  # det(c^2 I) = c^(2d)


def test_census_constant_field_empty():
    x = np.array([0.1, -0.2, 0.05])
    theta = np.array([1.0, 0.3, 0.0])
    theta /= np.linalg.norm(theta)
    roots = caustics.ray_census(CF, x, theta, t_max=2.0)
    assert roots == []


def test_census_focusing_lens_roots():
    x0 = np.array([-0.7, 0.18, 0.05])
    d0 = np.array([1.0, -0.12, 0.0])
    d0 /= np.linalg.norm(d0)
    theta = d0 / FOCUS.c(x0)
    roots = caustics.ray_census(FOCUS, x0, theta, t_max=2.4)
    assert len(roots) >= 1
    for r in roots:
        assert r.det_residual < 1e-9
        assert r.sign_change
    # below the first caustic the census is empty
    early = caustics.ray_census(FOCUS, x0, theta, t_max=0.8 * roots[0].t)
    assert early == []


def test_classify_synthetic_fold_and_cusp():
    def dphi_fold(XIs):
        XIs = np.atleast_2d(XIs)
        out = np.zeros((len(XIs), 3, 3))
        out[:, 0, 0] = 2 * XIs[:, 0]
        out[:, 1, 1] = 1.0
        out[:, 2, 2] = 1.0
        return out

    rec = caustics.classify_map_point(dphi_fold, np.array([0.0, 0.3, 0.2]), sign_change=True)
    assert rec.is_fold
    assert rec.transversality == pytest.approx(1.0, abs=1e-9)

    def dphi_cusp(XIs):
        XIs = np.atleast_2d(XIs)
        out = np.zeros((len(XIs), 3, 3))
        out[:, 0, 0] = 3 * XIs[:, 0] ** 2 + XIs[:, 1]
        out[:, 0, 1] = XIs[:, 0]
        out[:, 1, 1] = 1.0
        out[:, 2, 2] = 1.0
        return out

    rec = caustics.classify_map_point(dphi_cusp, np.zeros(3), sign_change=True)
    assert not rec.is_fold
    assert rec.classification == "tangential_kernel"


def test_classify_lens_roots():
    # generic off-axis ray through a radially symmetric lens: the meridional
    # root is a fold; the sagittal one has its kernel tangent to the
    # singular set (rotational symmetry) and must be rejected
    x0 = np.array([-0.7, 0.18, 0.05])
    d0 = np.array([1.0, -0.12, 0.0])
    d0 /= np.linalg.norm(d0)
    theta = d0 / FOCUS.c(x0)
    roots = caustics.ray_census(FOCUS, x0, theta, t_max=2.4)
    records = [caustics.classify_fold(FOCUS, x0, r.xi_star, sign_change=True) for r in roots]
    kinds = sorted(r.classification for r in records)
    assert "fold" in kinds
    folds = [r for r in records if r.is_fold]
    for fr in folds:
        assert fr.transversality > 0.1
        assert fr.rank_gap > 1e3
        assert fr.graph_condition_rank == 2


def test_complete_set_constant_field():
    cert = caustics.complete_set_search(
        CF, np.array([0.1, -0.2, 0.05]), n_theta=512, t_max=2.0, n_steps=80, seed=0,
        grid_tol=2e-2,
    )
    assert cert.passed
    assert cert.coverage_gap < 2e-2
    assert cert.n_kept == 1024  # all kept, symmetrized


def test_coverage_monotone():
    # adding directions never increases the coverage gap
    from raybeam.util import unit_sphere_points

    grid = unit_sphere_points(2048, 3)
    dirs = unit_sphere_points(128, 3)
    gap_small = np.max(np.min(np.abs(grid @ dirs[:64].T), axis=1))
    gap_full = np.max(np.min(np.abs(grid @ dirs.T), axis=1))
    assert gap_full <= gap_small


def test_complete_set_lens_point():
    cert = caustics.complete_set_search(
        FOCUS, np.array([0.15, 0.1, 0.0]), n_theta=48, t_max=2.2, n_steps=160, seed=7
    )
    # certificate is produced with per-direction censuses recorded
    assert len(cert.Z_samples) == 48
    assert any(s["n_roots"] > 0 for s in cert.Z_samples)
    assert cert.n_kept <= 2 * 48
