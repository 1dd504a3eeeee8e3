"""Linearization of the ray flow in the drift b = -grad(c)/c.

Along a unit-speed ray the first variation of the flow with respect to b is
governed by the 2d x 2d system matrix

    A(x, xi) = [[0,        d/dxi (xi/|xi|^2)],
                [db/dx,    0               ]],

the Jacobian of the unit-speed right-hand side. The weight transport matrix
solves Upsilon' = -Upsilon A along the ray with Upsilon(0) = Id; it is the
matrix weight of the ray transform and, because trace A = 0, stays
unimodular. The first variation of the time-T flow under a drift
perturbation db is

    Upsilon(T)^{-1} * integral_0^T Upsilon(s) (0, db(x(s))) ds,

with a remainder quadratic in the C^1 size of the perturbation; the probe
here measures that quadratic order directly.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError
from .fields import ExpPotentialField
from .flow import DEFAULT_TOL, PhasePoint, backtrace, flow_endpoints, on_cosphere
from .quadrature import gauss_lobatto_on
from .util import loglog_slope


def system_matrix(field, p):
    """A(x, xi): zero diagonal blocks, upper-right d(xi/|xi|^2)/dxi,
    lower-left the Jacobian of b."""
    d = p.dim
    nrm2 = float(np.dot(p.xi, p.xi))
    if nrm2 == 0.0:
        raise ValueError("system matrix undefined at xi = 0")
    B = (np.eye(d) * nrm2 - 2.0 * np.outer(p.xi, p.xi)) / nrm2**2
    _, db = field.eval_b(p.x)
    A = np.zeros((2 * d, 2 * d))
    A[:d, d:] = B
    A[d:, :d] = db
    return A


# ----------------------------------------------------------------------------
# batched augmented system: ray + weight matrix


def _aug_rhs(field, n, d):
    m = 2 * d
    eye = np.eye(d)

    def rhs(t, y):
        s = y.reshape(n, m + m * m)
        x = s[:, :d]
        xi = s[:, d : 2 * d]
        U = s[:, m:].reshape(n, m, m)
        c, grad, hess = field.eval(x)
        c2 = c * c
        dx = c2[:, None] * xi
        dxi = -(c * np.sum(xi * xi, axis=1))[:, None] * grad
        nrm2 = np.sum(xi * xi, axis=1)
        B = (eye[None] * nrm2[:, None, None] - 2.0 * xi[:, :, None] * xi[:, None, :]) / (
            nrm2**2
        )[:, None, None]
        db = (grad[:, :, None] * grad[:, None, :] - c[:, None, None] * hess) / c2[:, None, None]
        A = np.zeros((n, m, m))
        A[:, :d, d:] = B
        A[:, d:, :d] = db
        dU = -np.matmul(U, A)
        return np.concatenate([dx, dxi, dU.reshape(n, m * m)], axis=1).ravel()

    return rhs


def solve_weight(field, Y0, t_span, rtol=DEFAULT_TOL, atol=None, U0=None, max_step=np.inf):
    """Co-integrate rays and their weight matrices; Y0 is (n, 2d)."""
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    n, m = Y0.shape
    d = m // 2
    if atol is None:
        atol = rtol / 10.0
    if U0 is None:
        U0 = np.broadcast_to(np.eye(m), (n, m, m))
    z0 = np.concatenate([Y0, np.reshape(U0, (n, m * m))], axis=1).ravel()
    # compensate the batch RMS error norm (see flow.solve_flow)
    scale = np.sqrt(n)
    sol = solve_ivp(
        _aug_rhs(field, n, d),
        t_span,
        z0,
        method="DOP853",
        dense_output=True,
        rtol=max(rtol / scale, 1e-13),
        atol=atol / scale,
        max_step=max_step,
    )
    if not sol.success:
        raise IntegrationError(f"weight integration failed: {sol.message}")
    return sol


class WeightPath:
    """Dense (ray, Upsilon) path for a single start point."""

    def __init__(self, field, sol, d, t_end):
        self.field = field
        self._sol = sol
        self.d = d
        self.t_end = float(t_end)
        self.times = sol.t

    def state(self, t):
        y = self._sol.sol(t)
        d = self.d
        return PhasePoint(y[:d], y[d : 2 * d])

    def weight(self, t):
        d = self.d
        y = self._sol.sol(t)
        return y[2 * d :].reshape(2 * d, 2 * d)

    def det_drift(self, n_check=100):
        ts = np.linspace(0.0, self.t_end, n_check)
        dets = [np.linalg.det(self.weight(t)) for t in ts]
        return float(np.max(np.abs(np.array(dets) - 1.0)))


def integrate_weight(field, p0, t_end, tol=DEFAULT_TOL):
    """Upsilon path along the ray from p0 over [0, t_end]; Upsilon(0) = Id.

    The cosphere precondition is checked at the dense-interpolation accuracy
    (1e-7), since callers legitimately feed states read off dense output.
    """
    if not on_cosphere(field, p0, tol=1e-7):
        raise ValueError("weight integration starts on the cosphere")
    if t_end == 0.0:
        sol = solve_weight(field, p0.as_vector()[None, :], (0.0, 1e-12), rtol=tol)
        return WeightPath(field, sol, p0.dim, 0.0)
    sol = solve_weight(field, p0.as_vector()[None, :], (0.0, t_end), rtol=tol)
    return WeightPath(field, sol, p0.dim, t_end)


def weight_at(field, domain, p, tol=DEFAULT_TOL):
    """Weight matrix at an interior cosphere point: backtrace to the entering
    boundary covector, then transport Upsilon forward along the ray."""
    l_minus, tau = backtrace(field, domain, p, tol=tol)
    if l_minus == 0.0:
        return np.eye(2 * p.dim)
    path = integrate_weight(field, tau, -l_minus, tol=tol)
    return path.weight(-l_minus)


def weight_at_batch(field, domain, X, XI, tol=DEFAULT_TOL, t_max=None):
    """Batched weight_at for (n, d) positions/covectors on the cosphere."""
    from .flow import _crossing_on_dense, solve_flow, _default_horizon

    X = np.atleast_2d(X)
    XI = np.atleast_2d(XI)
    n, d = X.shape
    t_max = t_max or _default_horizon(field, domain)
    rev = np.concatenate([X, -XI], axis=1)
    sol_back = solve_flow(field, rev, (0.0, t_max), rtol=tol)
    entries = np.empty((n, 2 * d))
    lengths = np.empty(n)
    for i in range(n):
        off = float(np.linalg.norm(X[i] - domain.center) - domain.radius)
        if abs(off) <= 1e-10 and float(np.dot(XI[i], (X[i] - domain.center))) < 0.0:
            lengths[i] = 0.0
            entries[i] = np.concatenate([X[i], XI[i]])
            continue
        t_hit = _crossing_on_dense(sol_back.sol, domain, d, 0.0, t_max, idx=i)
        if t_hit is None:
            raise IntegrationError("backtrace found no boundary crossing in batch")
        y = sol_back.sol(t_hit)
        entries[i] = np.concatenate([y[i * 2 * d : i * 2 * d + d], -y[i * 2 * d + d : (i + 1) * 2 * d]])
        lengths[i] = t_hit
    out = np.empty((n, 2 * d, 2 * d))
    todo = lengths > 0.0
    if np.any(todo):
        idx = np.where(todo)[0]
        span = float(np.max(lengths[idx]))
        sol_fwd = solve_weight(field, entries[idx], (0.0, span * (1.0 + 1e-12)), rtol=tol)
        m = 2 * d
        for k, i in enumerate(idx):
            y = sol_fwd.sol(lengths[i])
            out[i] = y[k * (m + m * m) + m : (k + 1) * (m + m * m)].reshape(m, m)
    out[~todo] = np.eye(2 * d)
    return out


# ----------------------------------------------------------------------------
# fundamental pair


class FundamentalPair:
    """Phi' = -Phi A and Psi' = A Psi co-integrated along one ray; their
    product stays the identity."""

    def __init__(self, times, Phi, Psi):
        self.times = times
        self.Phi = Phi
        self.Psi = Psi

    def max_product_deviation(self):
        devs = [
            np.linalg.norm(P @ Q - np.eye(P.shape[0]))
            for P, Q in zip(self.Phi, self.Psi)
        ]
        return float(np.max(devs))


def fundamental_pair(field, p0, t_end, tol=DEFAULT_TOL, n_out=50):
    d = p0.dim
    m = 2 * d
    eye = np.eye(d)

    def rhs(t, y):
        x = y[:d]
        xi = y[d:m]
        P = y[m : m + m * m].reshape(m, m)
        Q = y[m + m * m :].reshape(m, m)
        c, grad, hess = field.eval(x)
        dx = c * c * xi
        dxi = -(c * float(np.dot(xi, xi))) * grad
        nrm2 = float(np.dot(xi, xi))
        B = (eye * nrm2 - 2.0 * np.outer(xi, xi)) / nrm2**2
        db = (np.outer(grad, grad) - c * hess) / (c * c)
        A = np.zeros((m, m))
        A[:d, d:] = B
        A[d:, :d] = db
        return np.concatenate([dx, dxi, (-P @ A).ravel(), (A @ Q).ravel()])

    z0 = np.concatenate([p0.as_vector(), np.eye(m).ravel(), np.eye(m).ravel()])
    ts = np.linspace(0.0, t_end, n_out)
    sol = solve_ivp(rhs, (0.0, t_end), z0, method="DOP853", t_eval=ts, rtol=tol, atol=tol / 10.0)
    if not sol.success:
        raise IntegrationError(f"fundamental pair integration failed: {sol.message}")
    Phi = [sol.y[m : m + m * m, k].reshape(m, m) for k in range(sol.y.shape[1])]
    Psi = [sol.y[m + m * m :, k].reshape(m, m) for k in range(sol.y.shape[1])]
    return FundamentalPair(sol.t, Phi, Psi)


# ----------------------------------------------------------------------------
# first variation and quadratic remainder


def delta_flow(field, p0, delta_b, T, tol=DEFAULT_TOL, lobatto_n=7, max_step=None):
    """First variation of the time-T flow from p0 under the drift
    perturbation delta_b (a callable x -> (n, d) vector field).

    The weighted source is integrated on the solver's accepted steps with a
    composite Gauss-Lobatto rule, then mapped back through a dense solve
    with Upsilon(T). The step cap keeps enough quadrature panels across the
    support of delta_b even when the background dynamics are trivial.
    """
    d = p0.dim
    m = 2 * d
    if max_step is None:
        max_step = T / 40.0
    sol = solve_weight(field, p0.as_vector()[None, :], (0.0, T), rtol=tol, max_step=max_step)
    steps = sol.t
    nodes_all = []
    weights_all = []
    for a, b in zip(steps[:-1], steps[1:]):
        ns, ws = gauss_lobatto_on(a, b, lobatto_n)
        nodes_all.append(ns)
        weights_all.append(ws)
    nodes = np.concatenate(nodes_all)
    weights = np.concatenate(weights_all)
    ys = sol.sol(nodes)  # (m + m*m, k)
    xs = ys[:d, :].T
    Us = ys[m:, :].T.reshape(len(nodes), m, m)
    src = np.zeros((len(nodes), m))
    src[:, d:] = np.atleast_2d(delta_b(xs))
    integrand = np.einsum("kij,kj->ki", Us, src)
    integral = np.einsum("k,ki->i", weights, integrand)
    U_T = sol.sol(T)[m:].reshape(m, m)
    return np.linalg.solve(U_T, integral)


def remainder_probe(field, p0, potential, T, eps_list, tol=DEFAULT_TOL):
    """Quadratic-remainder slope of the flow linearization.

    The probe perturbs the log-squared speed by eps * psi (psi the given
    potential), so the drift perturbation is exactly -eps/2 * grad(psi).
    Returns (slope, details) where details holds per-eps remainder norms and
    the fitted prefactor.
    """
    eps_list = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if len(eps_list) < 4:
        raise ValueError("need at least 4 epsilon values")
    d = p0.dim

    def unit_delta_b(xs):
        return -0.5 * potential.grad(xs)

    base_end = flow_endpoints(field, p0.x[None, :], p0.xi[None, :], T, rtol=tol)[0]
    lin = delta_flow(field, p0, unit_delta_b, T, tol=tol)
    norms = []
    for eps in eps_list:
        pert = ExpPotentialField(field, potential, eps)
        end = flow_endpoints(pert, p0.x[None, :], p0.xi[None, :], T, rtol=tol)[0]
        r = end - base_end - eps * lin
        norms.append(float(np.linalg.norm(r)))
    slope, intercept, r2 = loglog_slope(eps_list, norms)
    details = {
        "eps": eps_list.tolist(),
        "remainder_norms": norms,
        "slope": slope,
        "prefactor": float(np.exp(intercept)),
        "r_squared": r2,
    }
    return slope, details
