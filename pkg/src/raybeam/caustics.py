"""Time-1 ray map over a cotangent fiber, its Jacobian, and fold detection.

phi(x, .) sends a covector xi to the base point of the time-1 ray flow from
(x, xi); it plays the role of the exponential map. Its xi-Jacobian comes
from the variational equations of the ray system, never from differencing
trajectories. A covector where det(dphi) = 0 is a caustic vector; the
classifier below applies the two fold conditions (corank 1, first-order
vanishing of the determinant with kernel transversal to the singular set)
plus the full-rank graph condition used as the regularity proxy.

Scaling identity used throughout: for a unit-speed direction theta,
dphi(x, s*theta) = J_x(s)/s where J solves the variational system along the
ray from (x, theta). One integration therefore yields the determinant along
an entire ray of covectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError
from .flow import DEFAULT_TOL, PhasePoint
from .util import unit, unit_sphere_points, orthonormal_complement


# ----------------------------------------------------------------------------
# variational system along the quadratic-Hamiltonian flow


def _var_rhs(field, n, d):
    eye = np.eye(d)

    def rhs(t, y):
        w = 2 * d + 2 * d * d
        s = y.reshape(n, w)
        x = s[:, :d]
        xi = s[:, d : 2 * d]
        J = s[:, 2 * d :].reshape(n, 2 * d, d)
        c, grad, hess = field.eval(x)
        c2 = c * c
        nrm2 = np.sum(xi * xi, axis=1)
        dx = c2[:, None] * xi
        dxi = -(c * nrm2)[:, None] * grad
        DF = np.empty((n, 2 * d, 2 * d))
        DF[:, :d, :d] = 2.0 * c[:, None, None] * xi[:, :, None] * grad[:, None, :]
        DF[:, :d, d:] = c2[:, None, None] * eye[None]
        DF[:, d:, :d] = -nrm2[:, None, None] * (
            grad[:, :, None] * grad[:, None, :] + c[:, None, None] * hess
        )
        DF[:, d:, d:] = -2.0 * c[:, None, None] * grad[:, :, None] * xi[:, None, :]
        dJ = np.matmul(DF, J)
        return np.concatenate([dx, dxi, dJ.reshape(n, 2 * d * d)], axis=1).ravel()

    return rhs


def _solve_variational(field, X, XI, t_end, rtol=DEFAULT_TOL, dense=False, t_eval=None):
    X = np.atleast_2d(X)
    XI = np.atleast_2d(XI)
    n, d = X.shape
    J0 = np.zeros((n, 2 * d, d))
    J0[:, d:, :] = np.eye(d)
    z0 = np.concatenate([X, XI, J0.reshape(n, 2 * d * d)], axis=1).ravel()
    # compensate the batch RMS error norm (see flow.solve_flow)
    scale = np.sqrt(n)
    sol = solve_ivp(
        _var_rhs(field, n, d),
        (0.0, t_end),
        z0,
        method="DOP853",
        dense_output=dense,
        t_eval=t_eval,
        rtol=max(rtol / scale, 1e-13),
        atol=rtol / (10.0 * scale),
    )
    if not sol.success:
        raise IntegrationError(f"variational integration failed: {sol.message}")
    return sol


def phi(field, x, xi, tol=DEFAULT_TOL):
    """Base point of the time-1 ray flow from (x, xi)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    d = x.shape[0]
    if np.all(xi == 0.0):
        return x.copy()
    sol = _solve_variational(field, x[None], xi[None], 1.0, rtol=tol)
    return sol.y[:d, -1].copy()


@dataclass
class JacobianRecord:
    xi: np.ndarray
    dphi: np.ndarray
    det: float
    sigma_min: float


def dphi_batch(field, x, XIs, tol=DEFAULT_TOL):
    """xi-Jacobians of phi(x, .) at a batch of covectors; returns (n, d, d)."""
    x = np.asarray(x, dtype=float)
    XIs = np.atleast_2d(np.asarray(XIs, dtype=float))
    n, d = XIs.shape
    X = np.broadcast_to(x, (n, d))
    sol = _solve_variational(field, X, XIs, 1.0, rtol=tol)
    w = 2 * d + 2 * d * d
    out = sol.y[:, -1].reshape(n, w)
    J = out[:, 2 * d :].reshape(n, 2 * d, d)
    return J[:, :d, :]


def dphi(field, x, xi, tol=DEFAULT_TOL):
    """JacobianRecord at a single covector."""
    Jx = dphi_batch(field, x, np.asarray(xi, dtype=float)[None], tol=tol)[0]
    svals = np.linalg.svd(Jx, compute_uv=False)
    return JacobianRecord(
        xi=np.asarray(xi, dtype=float),
        dphi=Jx,
        det=float(np.linalg.det(Jx)),
        sigma_min=float(svals[-1]),
    )


# ----------------------------------------------------------------------------
# determinant census along rays


@dataclass
class RayRoot:
    t: float
    xi_star: np.ndarray
    det_residual: float
    sign_change: bool


def ray_census(field, x, theta, t_max, n_steps=400, tol=DEFAULT_TOL, det_floor=1e-8):
    """Roots of t -> det dphi(x, t*theta) on (0, t_max].

    Scans a uniform grid of the (rescaled) variational determinant along the
    unit-speed ray, brackets sign changes, and polishes each bracket by
    bisection plus secant steps. Grid points where |det| dips below
    det_floor without a sign change are reported as non-fold candidates
    (double roots) with sign_change=False.
    """
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = x.shape[0]
    sol = _solve_variational(field, x[None], theta[None], t_max, rtol=tol, dense=True)

    def Jx_at(ts):
        ts = np.atleast_1d(ts)
        ys = sol.sol(ts)
        w = 2 * d + 2 * d * d
        J = ys.reshape(w, -1)[2 * d :, :].T.reshape(len(ts), 2 * d, d)
        return J[:, :d, :]

    ts = np.linspace(t_max / n_steps, t_max, n_steps)
    dets = np.linalg.det(Jx_at(ts))
    roots = []
    for k in range(1, n_steps):
        a, b = ts[k - 1], ts[k]
        fa, fb = dets[k - 1], dets[k]
        if fa == 0.0:
            continue
        if fa * fb < 0.0:
            t_root, res = _polish_root(lambda t: float(np.linalg.det(Jx_at(t)[0])), a, b, fa, fb)
            xi_star = t_root * theta
            roots.append(RayRoot(t=t_root, xi_star=xi_star, det_residual=res, sign_change=True))
        elif abs(fb) < det_floor and (k == n_steps - 1 or abs(dets[k]) <= abs(dets[k - 1])):
            # near-zero without crossing: flag as a double-root candidate
            if k + 1 < n_steps and dets[k + 1] * fb > 0.0 and abs(dets[k + 1]) > abs(fb):
                roots.append(
                    RayRoot(t=float(b), xi_star=b * theta, det_residual=float(abs(fb)), sign_change=False)
                )
    return roots


def _polish_root(f, a, b, fa, fb, target=1e-9, max_iter=200):
    """Bisection with secant acceleration on a bracketed simple root."""
    t, ft = a, fa
    for _ in range(max_iter):
        # secant proposal, guarded by the bracket
        t_sec = b - fb * (b - a) / (fb - fa)
        if not (a < t_sec < b):
            t_sec = 0.5 * (a + b)
        ft = f(t_sec)
        if abs(ft) < target:
            return float(t_sec), float(abs(ft))
        if fa * ft < 0.0:
            b, fb = t_sec, ft
        else:
            a, fa = t_sec, ft
        t = t_sec
    return float(t), float(abs(ft))


# ----------------------------------------------------------------------------
# fold classification


@dataclass
class FoldRecord:
    xi_star: np.ndarray
    kernel: np.ndarray
    det_gradient: np.ndarray
    transversality: float
    rank_gap: float
    graph_condition_rank: int
    sigma: np.ndarray
    classification: str
    is_fold: bool
    details: dict = dc_field(default_factory=dict)


def classify_map_point(
    dphi_fn,
    xi_star,
    sign_change=None,
    grad_step=5e-4,
    graph_step=1e-3,
    sigma_floor=1e-3,
    sigma_null=1e-6,
    transversality_min=0.05,
    rank_tol=1e-6,
):
    """Apply the fold conditions to a map given by its Jacobian handle.

    dphi_fn maps a (k, d) batch of covectors to (k, d, d) Jacobians. The
    conditions checked at xi_star:

      1. corank one: sigma_{d-1} > sigma_floor and sigma_d < sigma_null;
      2. the determinant vanishes to first order with the kernel of dphi
         transversal to {det = 0} (one scalar: the normalized inner product
         of grad(det) with the kernel direction);
      3. (reported, not gating) the second differential contracted with the
         kernel and restricted to the tangent space of the singular set has
         full rank d-1: the graph condition used as the regularity proxy.
    """
    xi_star = np.asarray(xi_star, dtype=float)
    d = xi_star.shape[0]
    J = dphi_fn(xi_star[None])[0]
    U, S, Vt = np.linalg.svd(J)
    kernel = Vt[-1]
    rank_gap = float(S[-2] / max(S[-1], 1e-300)) if d >= 2 else np.inf

    # determinant gradient by central differences of the analytic Jacobian
    probes = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = grad_step
        probes.extend([xi_star + e, xi_star - e])
    dets = np.linalg.det(dphi_fn(np.array(probes)))
    det_grad = (dets[0::2] - dets[1::2]) / (2.0 * grad_step)
    grad_norm = float(np.linalg.norm(det_grad))
    transversality = (
        float(abs(np.dot(det_grad, kernel)) / grad_norm) if grad_norm > 0 else 0.0
    )

    # graph condition: columns d2phi[kernel, w_j] for w_j spanning the
    # tangent of the singular set (the orthogonal complement of grad det)
    graph_rank = 0
    if grad_norm > 0:
        tangent = orthonormal_complement(det_grad)
        cols = []
        for j in range(d - 1):
            w = tangent[:, j]
            Jp = dphi_fn((xi_star + graph_step * w)[None])[0]
            Jm = dphi_fn((xi_star - graph_step * w)[None])[0]
            cols.append(((Jp - Jm) / (2.0 * graph_step)) @ kernel)
        Mg = np.stack(cols, axis=1)
        sg = np.linalg.svd(Mg, compute_uv=False)
        graph_rank = int(np.sum(sg > rank_tol * max(1.0, sg[0])))

    rank_ok = S[-1] < sigma_null and S[-2] > sigma_floor
    if not rank_ok:
        classification = "rank_deficient"
    elif sign_change is False:
        classification = "no_sign_change"
    elif transversality <= transversality_min:
        classification = "tangential_kernel"
    else:
        classification = "fold"

    return FoldRecord(
        xi_star=xi_star,
        kernel=kernel,
        det_gradient=det_grad,
        transversality=transversality,
        rank_gap=rank_gap,
        graph_condition_rank=graph_rank,
        sigma=S,
        classification=classification,
        is_fold=classification == "fold",
        details={"grad_norm": grad_norm},
    )


def classify_fold(field, x, xi_star, sign_change=None, tol=DEFAULT_TOL, **kwargs):
    """Fold classification of a caustic vector of phi(x, .)."""
    x = np.asarray(x, dtype=float)

    def dphi_fn(XIs):
        return dphi_batch(field, x, XIs, tol=tol)

    return classify_map_point(dphi_fn, xi_star, sign_change=sign_change, **kwargs)


# ----------------------------------------------------------------------------
# complete-set search


@dataclass
class CompletenessCertificate:
    base: np.ndarray
    Z_samples: list
    coverage_gap: float
    passed: bool
    n_theta: int
    n_kept: int
    symmetrized: bool
    grid_tol: float
    details: dict = dc_field(default_factory=dict)


def census_batch(field, x, thetas, t_max, n_steps=400, tol=DEFAULT_TOL, chunk=128):
    """ray_census for many unit directions; one batched variational solve
    per chunk, per-direction scans on the shared dense output."""
    x = np.asarray(x, dtype=float)
    thetas = np.atleast_2d(thetas)
    n, d = thetas.shape
    w = 2 * d + 2 * d * d
    all_roots = []
    for k0 in range(0, n, chunk):
        block = thetas[k0 : k0 + chunk]
        nb = len(block)
        X = np.broadcast_to(x, (nb, d))
        sol = _solve_variational(field, X, block, t_max, rtol=tol, dense=True)
        ts = np.linspace(t_max / n_steps, t_max, n_steps)
        ys = sol.sol(ts)  # (nb*w, n_steps)
        ys = ys.reshape(nb, w, n_steps)
        Jx = ys[:, 2 * d : 2 * d + d * d, :].reshape(nb, d, d, n_steps)
        dets = np.linalg.det(np.moveaxis(Jx, -1, 1))  # (nb, n_steps)
        for i in range(nb):
            roots = []
            di = dets[i]

            def det_at(t, i=i):
                y = sol.sol(t).reshape(nb, w)
                return float(np.linalg.det(y[i, 2 * d : 2 * d + d * d].reshape(d, d)))

            for k in range(1, n_steps):
                fa, fb = di[k - 1], di[k]
                if fa * fb < 0.0:
                    t_root, res = _polish_root(det_at, ts[k - 1], ts[k], fa, fb)
                    roots.append(
                        RayRoot(t=t_root, xi_star=t_root * block[i], det_residual=res, sign_change=True)
                    )
            all_roots.append(roots)
    return all_roots


def complete_set_search(
    field,
    x,
    n_theta,
    t_max,
    n_steps=300,
    seed=0,
    symmetrize=True,
    coverage_grid=4096,
    grid_tol=1e-2,
    tol=DEFAULT_TOL,
    classify_kwargs=None,
):
    """Search for a complete set of directions with clean ray censuses.

    Samples n_theta candidate unit covector directions at x, keeps those
    whose full-line determinant census is empty or consists solely of folds
    passing the graph condition, then measures how well the kept set covers
    orthogonality: coverage_gap = max over a fine direction grid of the
    minimum |<xi, theta>| over kept theta (Euclidean unit vectors).

    The kept set is symmetrized (theta and -theta) by default; censuses are
    run over both half-lines either way, so the decision is symmetric.
    """
    if n_theta < 2 * field.dim:
        raise ValueError("need at least 2*d candidate directions")
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    rng = np.random.default_rng(seed)
    dirs = unit_sphere_points(n_theta, d, rng=rng)
    c_here = field.c(x)
    classify_kwargs = classify_kwargs or {}

    censuses_pos = census_batch(field, x, dirs / c_here, t_max, n_steps=n_steps, tol=tol)
    censuses_neg = census_batch(field, x, -dirs / c_here, t_max, n_steps=n_steps, tol=tol)

    kept = []
    samples = []
    for i in range(n_theta):
        roots = censuses_pos[i] + censuses_neg[i]
        ok = True
        root_records = []
        for sgn, roots_half in ((1.0, censuses_pos[i]), (-1.0, censuses_neg[i])):
            for r in roots_half:
                rec = classify_fold(
                    field, x, r.xi_star, sign_change=r.sign_change, tol=tol, **classify_kwargs
                )
                root_records.append(
                    {
                        "t": sgn * r.t,
                        "classification": rec.classification,
                        "transversality": rec.transversality,
                        "graph_rank": rec.graph_condition_rank,
                        "det_residual": r.det_residual,
                    }
                )
                if not (rec.is_fold and rec.graph_condition_rank == d - 1):
                    ok = False
        samples.append(
            {
                "theta": dirs[i].tolist(),
                "n_roots": len(roots),
                "kept": ok,
                "roots": root_records,
            }
        )
        if ok:
            kept.append(dirs[i])
            if symmetrize:
                kept.append(-dirs[i])

    if kept:
        K = np.stack(kept)
        grid = unit_sphere_points(coverage_grid, d)
        dots = np.abs(grid @ K.T)
        gap = float(np.max(np.min(dots, axis=1)))
    else:
        gap = 1.0
    return CompletenessCertificate(
        base=x,
        Z_samples=samples,
        coverage_gap=gap,
        passed=bool(kept) and gap < grid_tol,
        n_theta=n_theta,
        n_kept=len(kept),
        symmetrized=symmetrize,
        grid_tol=grid_tol,
        details={"seed": seed, "t_max": t_max, "coverage_grid": coverage_grid},
    )
