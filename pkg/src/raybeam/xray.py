"""Matrix-weighted ray transform, its normal operator, and the symbol.

The transform integrates a compactly supported R^{2d}-valued function along
boundary-to-boundary rays against the weight transport matrix:

    If(x0, xi0) = integral_0^l Upsilon(s) f(x(s)) ds,

co-integrated with the ray and the weight as one augmented system. The
normal operator is evaluated directly from its fiber representation

    Nf(x) = integral_{T*x} W(x, xi) f(phi(x, xi)) c(x)^d dxi,

never by composing a discretized transform with a discretized adjoint; the
self-adjointness certificate then acts as an independent check. In polar
form the fiber integral collapses exactly: writing xi = u * theta with
theta of unit c-norm and u the c-norm radius, the |xi|^{1-d} prefactor of W,
the Euclidean r^{d-1} polar factor, and the fiber density c^d cancel, and u
becomes arclength (flow time) along the unit-speed geodesic through x. The
quadrature below therefore runs one angular rule over unit directions and a
radial Gauss-Legendre rule in flow time, with two weight transports (one
per orientation) shared by all radial nodes of a direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, IntegrationError
from .fields import RadialBump, SmoothStep
from .flow import (
    DEFAULT_TOL,
    PhasePoint,
    _crossing_on_dense,
    _default_horizon,
    cosphere_point,
    on_cosphere,
    solve_flow,
)
from .linearize import solve_weight, weight_at_batch
from .quadrature import antipodal_pairs, gauss_legendre, sphere_rule
from .util import orthonormal_complement, unit

TRANSFORM_TOL = 1e-10


# ----------------------------------------------------------------------------
# test functions


class TestFunction:
    """R^{2d}-valued bump supported strictly inside the inner region."""

    def __init__(self, domain, handle, support_center, support_radius, paper_form=False):
        self.domain = domain
        self._handle = handle
        self.support_center = np.asarray(support_center, dtype=float)
        self.support_radius = float(support_radius)
        self.paper_form = paper_form
        reach = np.linalg.norm(self.support_center - domain.center) + self.support_radius
        if reach >= domain.inner_radius:
            raise ConfigError("test function support must lie inside the inner region")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        out = self._handle(X)
        return out[0] if single else out

    def distance_filter(self, X):
        """Boolean mask of points possibly inside the support ball."""
        X = np.atleast_2d(X)
        return np.linalg.norm(X - self.support_center, axis=1) < self.support_radius


def vector_bump(domain, value, center, radius):
    """f(x) = value * w(|x-center|^2/radius^2) with the C-infinity profile w."""
    value = np.asarray(value, dtype=float)
    center = np.asarray(center, dtype=float)

    def handle(X):
        s = np.sum((X - center) ** 2, axis=1) / radius**2
        return RadialBump.value(s)[:, None] * value[None, :]

    return TestFunction(domain, handle, center, radius, paper_form=bool(np.all(value[: domain.dim] == 0.0)))


def log_speed_pair_source(domain, potential, eps):
    """The source produced by the pair (c, c * exp(eps*psi/2)): zero upper
    block, lower block -eps/2 * grad(psi)."""
    d = domain.dim

    def handle(X):
        out = np.zeros((len(X), 2 * d))
        out[:, d:] = -(0.5 * eps) * potential.grad(X)
        return out

    return TestFunction(domain, handle, potential.center, potential.radius, paper_form=True)


def combine(domain, parts, coeffs):
    """Linear combination of test functions (shared enclosing support ball)."""
    coeffs = np.asarray(coeffs, dtype=float)
    centers = np.stack([p.support_center for p in parts])
    mid = centers.mean(axis=0)
    radius = max(
        float(np.linalg.norm(p.support_center - mid)) + p.support_radius for p in parts
    )

    def handle(X):
        return sum(c * p(X) for c, p in zip(coeffs, parts))

    return TestFunction(domain, handle, mid, radius)


# ----------------------------------------------------------------------------
# fans and cutoffs


@dataclass
class FanGrid:
    """Product grid over the entering boundary covectors with node weights."""

    nodes: list
    weights: np.ndarray


def boundary_fan(field, domain, n_boundary, n_dir, margin=0.1):
    """Boundary sphere rule x inward-hemisphere rule; every node enters."""
    d = domain.dim
    bdirs, bwts = sphere_rule(n_boundary, d)
    nodes = []
    weights = []
    for bdir, bw in zip(bdirs, bwts):
        x0 = domain.center + domain.radius * bdir
        nu = bdir
        tang = orthonormal_complement(nu)
        if d == 2:
            angles = (np.arange(n_dir) + 0.5) / n_dir * np.pi * (1 - margin) - np.pi / 2 * (1 - margin)
            for a in angles:
                direction = -nu * np.cos(a) + tang[:, 0] * np.sin(a)
                nodes.append(PhasePoint(x0, direction))
                weights.append(bw * np.cos(a) * np.pi * (1 - margin) / n_dir)
        else:
            mu, wmu = gauss_legendre(n_dir, np.cos(np.pi / 2 * (1 - margin)), 1.0)
            n_az = max(4, n_dir)
            for m, wm in zip(mu, wmu):
                s = np.sqrt(max(0.0, 1.0 - m * m))
                for k in range(n_az):
                    ph = 2.0 * np.pi * k / n_az
                    direction = -nu * m + s * (np.cos(ph) * tang[:, 0] + np.sin(ph) * tang[:, 1])
                    nodes.append(PhasePoint(x0, direction))
                    weights.append(bw * wm * m * 2.0 * np.pi / n_az)
    return FanGrid(nodes=nodes, weights=np.asarray(weights))


class CutoffAlpha:
    """Smooth compactly supported cutoff on the entering boundary covectors.

    Product of one-dimensional C-infinity bumps in the chart coordinates
    around a base covector: orthographic boundary offsets and tangential
    covector offsets, each scaled by its half-width. Value 1 at the base,
    0 outside the chart box.
    """

    def __init__(self, domain, base_x, base_xi, pos_halfwidth, dir_halfwidth):
        self.domain = domain
        self.base_x = np.asarray(base_x, dtype=float)
        self.base_xi = np.asarray(base_xi, dtype=float)
        d = domain.dim
        self.pos_halfwidth = np.broadcast_to(np.asarray(pos_halfwidth, dtype=float), (d - 1,))
        self.dir_halfwidth = np.broadcast_to(np.asarray(dir_halfwidth, dtype=float), (d - 1,))
        nu = domain.outward_normal(self.base_x)
        self.frame = orthonormal_complement(nu)
        self.base_w = self.frame.T @ self.base_xi

    @staticmethod
    def _bump1d(s):
        return RadialBump.value(np.asarray(s) ** 2)

    def __call__(self, p):
        x, xi = (p.x, p.xi) if isinstance(p, PhasePoint) else p
        x = np.asarray(x, dtype=float)
        # the orthographic coordinates are degenerate across hemispheres
        # (antipodal points share them), so gate to the chart's hemisphere
        if float(np.dot(x - self.domain.center, self.base_x - self.domain.center)) <= 0.0:
            return 0.0
        u = self.frame.T @ (x - self.base_x) / self.pos_halfwidth
        w = (self.frame.T @ np.asarray(xi, dtype=float) - self.base_w) / self.dir_halfwidth
        val = np.prod(self._bump1d(u)) * np.prod(self._bump1d(w))
        return float(val)


def constant_alpha(value=1.0):
    """Cutoff identically equal to value (useful for alpha == 1 checks)."""

    def fn(p):
        return value

    return fn


# ----------------------------------------------------------------------------
# the transform


def _transform_rhs(field, f, n, d):
    m = 2 * d
    eye = np.eye(d)

    def rhs(t, y):
        w = m + m * m + m
        s = y.reshape(n, w)
        x = s[:, :d]
        xi = s[:, d:m]
        U = s[:, m : m + m * m].reshape(n, m, m)
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
        dI = np.einsum("nij,nj->ni", U, f(x))
        return np.concatenate([dx, dxi, dU.reshape(n, m * m), dI], axis=1).ravel()

    return rhs


class TransformPath:
    """Dense (ray, weight, running integral) solution for one fan node."""

    def __init__(self, sol, d, idx=0, n=1):
        self._sol = sol
        self.d = d
        self.idx = idx
        self.n = n

    def _block(self, t):
        w = 2 * self.d + 4 * self.d * self.d + 2 * self.d
        y = self._sol.sol(t).reshape(self.n, w)
        return y[self.idx]

    def state(self, t):
        y = self._block(t)
        return PhasePoint(y[: self.d], y[self.d : 2 * self.d])

    def weight(self, t):
        m = 2 * self.d
        return self._block(t)[m : m + m * m].reshape(m, m)

    def value(self, t):
        m = 2 * self.d
        return self._block(t)[m + m * m :]


def _solve_transform(field, f, P0, t_end, tol=TRANSFORM_TOL):
    P0 = np.atleast_2d(P0)
    n, m = P0.shape
    d = m // 2
    z0 = np.concatenate(
        [P0, np.broadcast_to(np.eye(m).ravel(), (n, m * m)), np.zeros((n, m))], axis=1
    ).ravel()
    from scipy.integrate import solve_ivp

    # The running integral is a passive state: it feeds nothing back into the
    # dynamics, and the propagation/error weights of the embedded pair vanish
    # on the early stages. On trivial backgrounds the controller would happily
    # step across the whole support of f, so cap the step at half the support
    # radius to keep the quadrature component honest.
    scale = np.sqrt(n)
    sol = solve_ivp(
        _transform_rhs(field, f, n, d),
        (0.0, t_end),
        z0,
        method="DOP853",
        dense_output=True,
        rtol=max(tol / scale, 1e-13),
        atol=tol / (100.0 * scale),
        max_step=0.5 * f.support_radius,
    )
    if not sol.success:
        raise IntegrationError(f"transform integration failed: {sol.message}")
    return sol


def transform(field, domain, f, p0, tol=TRANSFORM_TOL, t_max=None):
    """Weighted ray transform of f at the entering covector p0."""
    if not on_cosphere(field, p0):
        raise ValueError("transform needs a unit entering covector")
    t_max = t_max or _default_horizon(field, domain)
    d = p0.dim
    sol = _solve_transform(field, f, p0.as_vector()[None, :], t_max, tol=tol)
    stride = 2 * d + 4 * d * d + 2 * d
    t_exit = _crossing_on_dense(sol.sol, domain, d, 0.0, t_max, idx=0, stride=stride)
    if t_exit is None:
        raise IntegrationError("transform ray found no boundary exit")
    path = TransformPath(sol, d)
    return path.value(t_exit)


def transform_alpha(field, domain, f, p0, alpha, tol=TRANSFORM_TOL):
    """Cutoff transform: alpha(p0) times the plain transform (the lifted
    cutoff is constant along rays, so the scalar factors out exactly)."""
    a = alpha(p0)
    if a == 0.0:
        return np.zeros(2 * p0.dim)
    return a * transform(field, domain, f, p0, tol=tol)


def transform_fan(field, domain, f, fan_nodes, tol=TRANSFORM_TOL, chunk=64, alpha=None):
    """Transform over a list of fan nodes (batched); returns (n, 2d)."""
    t_max = _default_horizon(field, domain)
    nodes = list(fan_nodes)
    d = nodes[0].dim
    out = np.zeros((len(nodes), 2 * d))
    for k0 in range(0, len(nodes), chunk):
        block = nodes[k0 : k0 + chunk]
        P0 = np.stack([p.as_vector() for p in block])
        sol = _solve_transform(field, f, P0, t_max, tol=tol)
        stride = 2 * d + 4 * d * d + 2 * d
        for i, p in enumerate(block):
            t_exit = _crossing_on_dense(sol.sol, domain, d, 0.0, t_max, idx=i, stride=stride)
            if t_exit is None:
                raise IntegrationError("fan ray found no boundary exit")
            path = TransformPath(sol, d, idx=i, n=len(block))
            val = path.value(t_exit)
            if alpha is not None:
                val = alpha(p) * val
            out[k0 + i] = val
    return out


# ----------------------------------------------------------------------------
# fiber weight


def weight_W(field, domain, x, xi, alpha=None, debug=False, tol=DEFAULT_TOL):
    """Fiber weight W(x, xi) of the normal operator.

    Assembled literally from the two orientation terms: transported weights
    at (x, xi/|xi|) paired with the time-1 flow endpoint, plus the mirror
    term at -xi paired with the backward endpoint, scaled by the c-norm
    radius to the power 1-d. With a cutoff, each term carries the squared
    cutoff value at its entering boundary covector. debug=True returns the
    factors separately (prefactor convention and fiber density are recorded
    independently so the measure convention stays auditable).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    d = x.shape[0]
    c = field.c(x)
    r = c * np.linalg.norm(xi)  # c-norm radius; also the flow time to the endpoint
    if r == 0.0:
        raise ValueError("weight undefined at xi = 0")
    theta = xi / np.linalg.norm(xi) / c  # unit c-norm covector along xi

    sol = solve_flow(field, np.concatenate([x, theta])[None, :], (0.0, r), rtol=tol)
    y = sol.sol(r)
    xe, xie = y[:d], y[d:]

    X = np.stack([x, x, xe, xe])
    XI = np.stack([theta, -theta, xie, -xie])
    Phis, entries, _ = _weights_entries(field, domain, X, XI, tol=tol)
    PhiA, PhiC, PhiB, PhiD = Phis
    a1 = a2 = 1.0
    if alpha is not None:
        a1 = abs(alpha(PhasePoint(entries[0, :d], entries[0, d:]))) ** 2
        a2 = abs(alpha(PhasePoint(entries[1, :d], entries[1, d:]))) ** 2
    term1 = a1 * PhiA.T @ PhiB
    term2 = a2 * PhiC.T @ PhiD
    W = r ** (1 - d) * (term1 + term2)
    if debug:
        return W, {
            "cnorm_radius": float(r),
            "prefactor": float(r ** (1 - d)),
            "fiber_density": float(c**d),
            "term_forward": term1,
            "term_mirror": term2,
            "alpha_factors": (a1, a2),
        }
    return W


def _weights_entries(field, domain, X, XI, tol=DEFAULT_TOL):
    """weight_at_batch variant that also returns the entering covectors and
    entry times (needed for cutoff factors)."""
    from .flow import _crossing_on_dense as cross

    X = np.atleast_2d(X)
    XI = np.atleast_2d(XI)
    n, d = X.shape
    t_max = _default_horizon(field, domain)
    rev = np.concatenate([X, -XI], axis=1)
    sol_back = solve_flow(field, rev, (0.0, t_max), rtol=tol)
    entries = np.empty((n, 2 * d))
    lengths = np.empty(n)
    for i in range(n):
        off = float(np.linalg.norm(X[i] - domain.center) - domain.radius)
        if abs(off) <= 1e-10 and float(np.dot(XI[i], X[i] - domain.center)) < 0.0:
            lengths[i] = 0.0
            entries[i] = np.concatenate([X[i], XI[i]])
            continue
        t_hit = cross(sol_back.sol, domain, d, 0.0, t_max, idx=i)
        if t_hit is None:
            raise IntegrationError("weight evaluation: backward ray missed the boundary")
        y = sol_back.sol(t_hit)
        entries[i] = np.concatenate(
            [y[i * 2 * d : i * 2 * d + d], -y[i * 2 * d + d : (i + 1) * 2 * d]]
        )
        lengths[i] = t_hit
    m = 2 * d
    out = np.empty((n, m, m))
    todo = lengths > 0.0
    if np.any(todo):
        idx = np.where(todo)[0]
        span = float(np.max(lengths[idx]))
        sol_fwd = solve_weight(field, entries[idx], (0.0, span * (1 + 1e-12)), rtol=tol)
        for k, i in enumerate(idx):
            y = sol_fwd.sol(lengths[i])
            out[i] = y[k * (m + m * m) + m : (k + 1) * (m + m * m)].reshape(m, m)
    out[~todo] = np.eye(m)
    return out, entries, lengths


# ----------------------------------------------------------------------------
# normal operator


@dataclass
class NormalConfig:
    """Quadrature sizes for the fiber integral.

    epsilon2: inner radius of the smooth near/far split (1 below epsilon2,
    0 above 2*epsilon2); T: radial horizon in flow time; n_angular: polar
    node count of the angular rule (azimuth doubles it in d=3); n_radial:
    Gauss-Legendre count on [0, T].
    """

    epsilon2: float
    T: float
    n_angular: int = 8
    n_radial: int = 24
    tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.epsilon2 < self.T:
            raise ConfigError("need 0 < epsilon2 < T")


def chi_eps2(u, eps2):
    """Smooth near cutoff: 1 on [0, eps2], 0 on [2*eps2, inf)."""
    return 1.0 - SmoothStep.value((np.asarray(u, dtype=float) - eps2) / eps2)


def default_normal_config(field, domain, T=None, n_angular=8, n_radial=24, n_grad_samples=4096, seed=0):
    """epsilon2 scaled as 0.4 over the sampled max |grad c| (floored at 1)."""
    rng = np.random.default_rng(seed)
    d = domain.dim
    u = rng.normal(size=(n_grad_samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rr = domain.radius * rng.random(n_grad_samples) ** (1.0 / d)
    X = domain.center + u * rr[:, None]
    _, g = field.c_grad(X)
    gmax = max(1.0, float(np.max(np.linalg.norm(g, axis=1))))
    T = T or 2.0 * domain.radius * field.M0
    return NormalConfig(epsilon2=0.4 / gmax, T=T, n_angular=n_angular, n_radial=n_radial)


def diffeomorphism_scan(field, x, eps2, n_dirs=32, n_radial=8, tol=1e-8):
    """det dphi(x, .) positivity scan on the ball of c-norm radius 2*eps2;
    validates the near-region diffeomorphism assumption behind the split."""
    from .caustics import dphi_batch
    from .util import unit_sphere_points

    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    dirs = unit_sphere_points(n_dirs, d)
    c = field.c(x)
    radii = np.linspace(2.0 * eps2 / n_radial, 2.0 * eps2, n_radial)
    XIs = np.concatenate([(r / c) * dirs for r in radii])
    dets = np.linalg.det(dphi_batch(field, x, XIs, tol=tol))
    return bool(np.all(dets > 0.0)), float(np.min(dets))


def _normal_node_data(field, domain, f, x, cfg, alpha=None):
    """Per-node contributions of the fiber quadrature at x.

    Returns (radii, contribs) where contribs already carry the angular and
    radial quadrature weights; the radius array drives the near/far split.
    Directions whose geodesic misses the support of f are gated out before
    any weight transport is integrated; the two transports per surviving
    geodesic (one per orientation) are batched across geodesics.
    """
    from .flow import first_crossings_batch

    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    m = 2 * d
    tol = cfg.tol
    dirs, ang_w = sphere_rule(cfg.n_angular, d)
    pairs = antipodal_pairs(dirs)
    c_here = field.c(x)
    thetas = dirs / c_here
    n_dirs = len(dirs)

    t_cap = _default_horizon(field, domain)
    Y0 = np.concatenate([np.broadcast_to(x, (n_dirs, d)), thetas], axis=1)
    sol = solve_flow(field, Y0, (0.0, t_cap), rtol=tol)
    exit_times = first_crossings_batch(sol, domain, d, n_dirs, 0.0, t_cap)
    if np.any(np.isnan(exit_times)):
        raise IntegrationError("normal operator ray found no boundary exit")

    u_nodes, u_w = gauss_legendre(cfg.n_radial, 0.0, cfg.T)
    # all geodesic sample points at all radial nodes in one dense pass
    ys = sol.sol(u_nodes).reshape(n_dirs, m, cfg.n_radial)
    pts = np.transpose(ys[:, :d, :], (0, 2, 1))  # (n_dirs, n_radial, d)
    in_support = np.linalg.norm(pts - f.support_center, axis=2) < f.support_radius
    in_domain = u_nodes[None, :] <= exit_times[:, None]
    active_nodes = in_support & in_domain

    # collect the geodesics (antipodal pairs) that matter
    tasks = []
    for j_fwd, j_rev in pairs:
        if not (np.any(active_nodes[j_fwd]) or np.any(active_nodes[j_rev])):
            continue
        a = float(exit_times[j_rev])  # backward reach of the fwd direction
        b = float(exit_times[j_fwd])
        back_state = sol.sol(a)[j_rev * m : (j_rev + 1) * m]
        exit_state = sol.sol(b)[j_fwd * m : (j_fwd + 1) * m]
        entry_fwd = np.concatenate([back_state[:d], -back_state[d:]])
        entry_rev = np.concatenate([exit_state[:d], -exit_state[d:]])
        a_fwd = a_rev = 1.0
        if alpha is not None:
            a_fwd = abs(alpha(PhasePoint(entry_fwd[:d], entry_fwd[d:]))) ** 2
            a_rev = abs(alpha(PhasePoint(entry_rev[:d], entry_rev[d:]))) ** 2
            if a_fwd == 0.0 and a_rev == 0.0:
                continue
        tasks.append((j_fwd, j_rev, a, b, entry_fwd, entry_rev, a_fwd, a_rev))

    if not tasks:
        return np.empty(0), np.zeros((0, m))

    # two batched weight transports per surviving geodesic set
    Lmax = max(t[2] + t[3] for t in tasks) * (1 + 1e-12)
    E_fwd = np.stack([t[4] for t in tasks])
    E_rev = np.stack([t[5] for t in tasks])
    sol_fw = solve_weight(field, E_fwd, (0.0, Lmax), rtol=tol)
    sol_rv = solve_weight(field, E_rev, (0.0, Lmax), rtol=tol)
    blk = m + m * m

    def U_of(sol_w, k, t):
        y = sol_w.sol(t)
        return y[k * blk + m : (k + 1) * blk].reshape(m, m)

    radii = []
    contribs = []
    for k, (j_fwd, j_rev, a, b, _, _, a_fwd, a_rev) in enumerate(tasks):
        Phi_fwd0 = U_of(sol_fw, k, a)  # weight at x, orientation +theta
        Phi_rev0 = U_of(sol_rv, k, b)  # weight at x, orientation -theta
        for sgn, j in ((1, j_fwd), (-1, j_rev)):
            for i_u in np.where(active_nodes[j])[0]:
                u = u_nodes[i_u]
                val = f(pts[j, i_u])
                if not np.any(val):
                    continue
                if sgn > 0:
                    T1 = Phi_fwd0.T @ U_of(sol_fw, k, a + u)
                    T2 = Phi_rev0.T @ U_of(sol_rv, k, b - u)
                    pair_w = a_fwd * T1 + a_rev * T2
                else:
                    # antipodal direction: orientation roles exchange
                    T1 = Phi_rev0.T @ U_of(sol_rv, k, b + u)
                    T2 = Phi_fwd0.T @ U_of(sol_fw, k, a - u)
                    pair_w = a_rev * T1 + a_fwd * T2
                radii.append(u)
                contribs.append((ang_w[j] * u_w[i_u]) * (pair_w @ val))
    if not contribs:
        return np.empty(0), np.zeros((0, m))
    return np.asarray(radii), np.stack(contribs)


def normal_apply(field, domain, f, x, cfg, alpha=None):
    """Nf(x) via the fiber quadrature."""
    radii, contribs = _normal_node_data(field, domain, f, x, cfg, alpha=alpha)
    if len(contribs) == 0:
        return np.zeros(2 * domain.dim)
    return np.sum(contribs, axis=0)


def normal_split(field, domain, f, x, cfg, alpha=None):
    """(near, far) parts of Nf(x): the same node data weighted by the smooth
    radial cutoff and its complement; the parts sum to normal_apply."""
    radii, contribs = _normal_node_data(field, domain, f, x, cfg, alpha=alpha)
    if len(contribs) == 0:
        z = np.zeros(2 * domain.dim)
        return z, z.copy()
    chi = chi_eps2(radii, cfg.epsilon2)
    near = np.sum(chi[:, None] * contribs, axis=0)
    far = np.sum((1.0 - chi)[:, None] * contribs, axis=0)
    return near, far


# ----------------------------------------------------------------------------
# principal symbol of the near part


@dataclass
class SymbolResult:
    matrix: np.ndarray
    min_eig: float
    alpha_mass: float
    elliptic: bool


def symbol_n1(field, domain, x, xi, alpha=None, n_nodes=64, tol=DEFAULT_TOL):
    """Principal symbol of the near part at a unit covector.

    The delta factor restricting to directions orthogonal to xi is resolved
    analytically: the great subsphere theta perp xi is parameterized by an
    explicit orthonormal frame and the integrand |alpha_lift|^2 Phi^T Phi
    is integrated over it (trapezoid in the subsphere angle for d=3, the
    two-point sum for d=2). Returns the symmetric matrix together with an
    ellipticity flag; zero cutoff mass on the subsphere marks the covector
    as non-elliptic.
    """
    x = np.asarray(x, dtype=float)
    xi = unit(np.asarray(xi, dtype=float))
    d = x.shape[0]
    c = field.c(x)
    frame = orthonormal_complement(xi)
    if d == 3:
        ang = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
        dirs = np.outer(np.cos(ang), frame[:, 0]) + np.outer(np.sin(ang), frame[:, 1])
        dpsi = 2.0 * np.pi / n_nodes
    elif d == 2:
        dirs = np.stack([frame[:, 0], -frame[:, 0]])
        dpsi = 1.0
    else:
        raise NotImplementedError("symbol quadrature implemented for d in {2, 3}")
    thetas = dirs / c
    X = np.broadcast_to(x, thetas.shape)
    Phis, entries, _ = _weights_entries(field, domain, X, thetas, tol=tol)
    if alpha is not None:
        amps = np.array(
            [abs(alpha(PhasePoint(e[:d], e[d:]))) ** 2 for e in entries]
        )
    else:
        amps = np.ones(len(thetas))
    mats = np.einsum("kji,k,kjl->kil", Phis, amps, Phis)
    factor = 2.0 * np.pi * c**d / (c ** (d - 2))  # subsphere radius powers of 1/c
    S = factor * dpsi * np.sum(mats, axis=0)
    S = 0.5 * (S + S.T)
    mass = float(np.sum(amps))
    eigs = np.linalg.eigvalsh(S)
    return SymbolResult(
        matrix=S,
        min_eig=float(eigs[0]),
        alpha_mass=mass,
        elliptic=bool(mass > 0.0 and eigs[0] > 0.0),
    )


# ----------------------------------------------------------------------------
# sensitivity pipeline


@dataclass
class SensitivityResult:
    eps: list
    raw_max: list
    residual_max: list
    raw_slope: float
    residual_slope: float
    residual_r2: float
    details: dict = dc_field(default_factory=dict)


def sensitivity_chain(field, domain, potential, eps_list, fan_nodes, T, tol=1e-10):
    """Quadratic sensitivity of the transform under speed pairs.

    For each eps, the pair (c, c*exp(eps*psi/2)) induces the source f_eps
    with lower block -eps/2 grad(psi). The transform of f_eps equals the
    weight matrix at time T times the first variation of the time-T flow,
    so subtracting the measured nonlinear flow difference isolates the
    quadratic remainder:

        If_eps(p0) - Upsilon(T, p0) (H_tilde^T - H^T)(p0) = -Upsilon(T) r,

    whose fan maximum must scale like eps^2. The raw fan maximum of
    |If_eps| itself is linear in eps and is recorded alongside.
    """
    from .fields import ExpPotentialField

    eps_list = sorted([float(e) for e in eps_list], reverse=True)
    nodes = list(fan_nodes)
    d = domain.dim
    m = 2 * d
    f_unit = log_speed_pair_source(domain, potential, 1.0)

    # one augmented solve per node gives I(T) and Upsilon(T) for the unit source
    P0 = np.stack([p.as_vector() for p in nodes])
    sol = _solve_transform(field, f_unit, P0, T, tol=tol)
    yT = sol.sol(T).reshape(len(nodes), m + m * m + m)
    I_unit = yT[:, m + m * m :]
    U_T = yT[:, m : m + m * m].reshape(len(nodes), m, m)

    from .flow import flow_endpoints

    X0 = P0[:, :d]
    XI0 = P0[:, d:]
    base_end = flow_endpoints(field, X0, XI0, T, rtol=tol)

    raw_max = []
    residual_max = []
    for eps in eps_list:
        pert = ExpPotentialField(field, potential, eps)
        pert_end = flow_endpoints(pert, X0, XI0, T, rtol=tol)
        dflow = pert_end - base_end
        I_eps = eps * I_unit
        resid = I_eps - np.einsum("nij,nj->ni", U_T, dflow)
        residual_max.append(float(np.max(np.linalg.norm(resid, axis=1))))
        raw_max.append(float(np.max(np.linalg.norm(I_eps, axis=1))))
    from .util import loglog_slope

    raw_slope, _, _ = loglog_slope(eps_list, raw_max)
    res_slope, _, res_r2 = loglog_slope(eps_list, residual_max)
    return SensitivityResult(
        eps=eps_list,
        raw_max=raw_max,
        residual_max=residual_max,
        raw_slope=raw_slope,
        residual_slope=res_slope,
        residual_r2=res_r2,
        details={"T": T, "n_fan": len(nodes)},
    )
