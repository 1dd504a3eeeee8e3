"""Hamiltonian ray flow, boundary events, and the scattering relation.

The canonical integration form is the quadratic-Hamiltonian system

    xdot  = c^2(x) xi,        xidot = -1/2 grad(c^2) |xi|^2,

which is smooth at xi = 0 and preserves H = 1/2 c^2 |xi|^2. On the unit
level set (the cosphere, c(x)|xi| = 1) the equivalent unit-speed form

    xdot = xi / |xi|^2,       xidot = b(x),     b = -grad(c)/c,

generates the same curves; it exists here for cross-validation and as the
system whose linearization defines the transform weight.

Boundary exits are located on the dense output of the adaptive solver by
bracketing the sign change of |x(t) - center| - R and polishing with Newton
iterations on the interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationError, NonTransversalError, TrappedRayError

DEFAULT_TOL = 1e-9  # relative; absolute tolerance is tol/10
BOUNDARY_RESIDUAL = 1e-10
TRANSVERSALITY_FLOOR = 1e-6
COSPHERE_TOL = 1e-9


@dataclass(frozen=True)
class PhasePoint:
    """Position/covector pair (x, xi) in T*R^d."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    @property
    def dim(self):
        return self.x.shape[0]

    def as_vector(self):
        return np.concatenate([self.x, self.xi])

    @staticmethod
    def from_vector(y):
        y = np.asarray(y, dtype=float)
        d = y.shape[0] // 2
        return PhasePoint(y[:d], y[d:])


def on_cosphere(field, p, tol=COSPHERE_TOL):
    """True iff c(x) * |xi|_euclid is within tol of 1."""
    return abs(field.c(p.x) * np.linalg.norm(p.xi) - 1.0) < tol


def cosphere_point(field, x, direction):
    """Unit-c-norm covector at x along a Euclidean direction."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return PhasePoint(x, d / field.c(x))


def hamiltonian_rhs(field, p):
    """Right-hand side of the quadratic-Hamiltonian ray system."""
    c, grad = field.c_grad(p.x)
    dx = c * c * p.xi
    dxi = -c * grad * float(np.dot(p.xi, p.xi))
    return dx, dxi


def reduced_rhs(field, p):
    """Unit-speed form; valid on the cosphere, rejects xi = 0."""
    nrm2 = float(np.dot(p.xi, p.xi))
    if nrm2 == 0.0:
        raise ValueError("reduced form undefined at xi = 0")
    b, _ = field.eval_b(p.x)
    return p.xi / nrm2, b


def hamiltonian(field, p):
    c = field.c(p.x)
    return 0.5 * c * c * float(np.dot(p.xi, p.xi))


# ----------------------------------------------------------------------------
# batched solves


def _flow_rhs(field, n, d):
    def rhs(t, y):
        s = y.reshape(n, 2 * d)
        x = s[:, :d]
        xi = s[:, d:]
        c, grad = field.c_grad(x)
        c2 = c * c
        dx = c2[:, None] * xi
        dxi = -(c * np.sum(xi * xi, axis=1))[:, None] * grad
        return np.concatenate([dx, dxi], axis=1).ravel()

    return rhs


def solve_flow(field, Y0, t_span, rtol=DEFAULT_TOL, atol=None, dense=True):
    """Integrate a batch of rays; Y0 has shape (n, 2d). Returns the scipy
    solution object (dense output enabled by default).

    The solver controls the RMS error over the whole batch, which would let
    the worst ray drift by roughly sqrt(n) times the tolerance; the
    requested tolerances are tightened by that factor so per-ray accuracy
    is independent of the batch size.
    """
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    n = Y0.shape[0]
    d = Y0.shape[1] // 2
    if atol is None:
        atol = rtol / 10.0
    scale = np.sqrt(n)
    sol = solve_ivp(
        _flow_rhs(field, n, d),
        t_span,
        Y0.ravel(),
        method="DOP853",
        dense_output=dense,
        rtol=max(rtol / scale, 1e-13),
        atol=atol / scale,
    )
    if not sol.success:
        raise IntegrationError(f"flow integration failed: {sol.message}")
    return sol


def flow_endpoints(field, X, XI, T, rtol=DEFAULT_TOL, atol=None, chunk=512):
    """States at time T for a batch of initial conditions; shape (n, 2d)."""
    X = np.atleast_2d(X)
    XI = np.atleast_2d(XI)
    Y0 = np.concatenate([X, XI], axis=1)
    out = np.empty_like(Y0)
    for k in range(0, len(Y0), chunk):
        block = Y0[k : k + chunk]
        sol = solve_flow(field, block, (0.0, T), rtol=rtol, atol=atol, dense=False)
        out[k : k + chunk] = sol.y[:, -1].reshape(block.shape)
    return out


# ----------------------------------------------------------------------------
# trajectories


class Trajectory:
    """Dense solution of the ray system for one initial condition."""

    def __init__(self, field, sol, t0, t1):
        self.field = field
        self._sol = sol
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.times = sol.t
        self.states = [PhasePoint.from_vector(sol.y[:, k]) for k in range(sol.y.shape[1])]

    @property
    def dense(self):
        return self._sol.sol

    def state(self, t):
        lo, hi = min(self.t0, self.t1), max(self.t0, self.t1)
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise ValueError(f"time {t} outside trajectory range [{lo}, {hi}]")
        return PhasePoint.from_vector(self._sol.sol(t))

    def hamiltonian_drift(self, n_check=200):
        ts = np.linspace(self.t0, self.t1, n_check)
        h0 = hamiltonian(self.field, self.state(self.t0))
        hs = np.array([hamiltonian(self.field, self.state(t)) for t in ts])
        return float(np.max(np.abs(hs - h0)) / abs(h0))

    def cosphere_drift(self, n_check=200):
        ts = np.linspace(self.t0, self.t1, n_check)
        vals = []
        for t in ts:
            p = self.state(t)
            vals.append(abs(self.field.c(p.x) * np.linalg.norm(p.xi) - 1.0))
        return float(np.max(vals))


def integrate(field, p0, t_span, tol=DEFAULT_TOL):
    """Adaptive integration of the ray system with dense output."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sol = solve_flow(field, p0.as_vector()[None, :], t_span, rtol=tol, atol=tol / 10.0)
    return Trajectory(field, sol, t_span[0], t_span[1])


def flow_point(field, p, t, tol=DEFAULT_TOL):
    """H^t(p) for a single phase point (t may be negative)."""
    if t == 0.0:
        return p
    traj = integrate(field, p, (0.0, t), tol=tol)
    return traj.state(t)


# ----------------------------------------------------------------------------
# boundary events


def _crossing_on_dense(dense, domain, d, t_start, t_end, idx=0, n_scan=None, stride=None):
    """First time in (t_start, t_end] where |x(t) - center| reaches R from
    inside, on the dense output of a (possibly batched) solution.

    idx selects the trajectory inside a batch; stride is the per-trajectory
    state size (2d for plain flow, larger for augmented systems whose first
    2d components are the phase point). Returns None if no crossing.
    """
    R = domain.radius
    stride = stride or 2 * d
    n_scan = n_scan or max(64, int(48 * abs(t_end - t_start)) + 16)
    ts = np.linspace(t_start, t_end, n_scan)
    ys = dense(ts)
    x = ys[idx * stride : idx * stride + d, :]
    g = np.linalg.norm(x - domain.center[:, None], axis=0) - R

    # skip any initial on-boundary samples; require being strictly inside first
    inside = np.where(g < -1e-9)[0]
    if len(inside) == 0:
        return None
    k0 = inside[0]
    after = np.where(g[k0:] >= 0.0)[0]
    if len(after) == 0:
        return None
    k1 = k0 + after[0]
    return _polish_crossing(dense, domain, d, idx, ts[k1 - 1], ts[k1], stride=stride)


def _polish_crossing(dense, domain, d, idx, lo, hi, stride=None):
    """Bisection then Newton on the dense interpolant inside a bracket with
    the crossing of |x(t) - center| = R."""
    R = domain.radius
    stride = stride or 2 * d

    def gfun(t):
        y = dense(t)
        xx = y[idx * stride : idx * stride + d]
        return float(np.linalg.norm(xx - domain.center) - R)

    def gprime(t):
        # c = 1 in the boundary collar, so xdot = xi there and the radial
        # rate is exactly <v/r, xi>; bisection guards convergence anyway.
        y = dense(t)
        xx = y[idx * stride : idx * stride + d]
        xixi = y[idx * stride + d : idx * stride + 2 * d]
        v = xx - domain.center
        return float(np.dot(v, xixi) / np.linalg.norm(v))

    if gfun(lo) >= 0.0:
        return lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gfun(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, abs(hi)):
            break
    t_star = hi
    for _ in range(8):
        gv = gfun(t_star)
        if abs(gv) < BOUNDARY_RESIDUAL:
            break
        gp = gprime(t_star)
        if gp == 0.0:
            break
        t_new = t_star - gv / gp
        if not (lo - (hi - lo) <= t_new <= hi + (hi - lo)):
            break
        t_star = t_new
    if abs(gfun(t_star)) > 1e3 * BOUNDARY_RESIDUAL:
        t_star = hi
    return t_star


def first_crossings_batch(sol, domain, d, n, t_lo, t_hi, n_scan=None):
    """First boundary crossings for every trajectory of a batched solution.

    One dense evaluation covers the scan grid for the whole batch; each
    trajectory is then bracketed and polished individually. Returns an
    array of crossing times (nan where no crossing exists).
    """
    n_scan = n_scan or max(64, int(48 * abs(t_hi - t_lo)) + 16)
    ts = np.linspace(t_lo, t_hi, n_scan)
    ys = sol.sol(ts).reshape(n, 2 * d, n_scan)
    g = np.linalg.norm(ys[:, :d, :] - domain.center[None, :, None], axis=1) - domain.radius
    out = np.full(n, np.nan)
    for i in range(n):
        gi = g[i]
        inside = np.where(gi < -1e-9)[0]
        if len(inside) == 0:
            continue
        k0 = inside[0]
        after = np.where(gi[k0:] >= 0.0)[0]
        if len(after) == 0:
            continue
        k1 = k0 + after[0]
        out[i] = _polish_crossing(sol.sol, domain, d, i, ts[max(k1 - 1, 0)], ts[k1])
    return out


@dataclass
class ScatteringRecord:
    """Exit data of an entering boundary covector."""

    l: float
    exit: PhasePoint
    entered_inner: bool
    entry: PhasePoint


def _check_entering(field, domain, p0):
    if abs(domain.boundary_offset(p0.x)) > 1e-8:
        raise ValueError("scattering relation needs a boundary start point")
    nu = domain.outward_normal(p0.x)
    if float(np.dot(p0.xi, nu)) >= 0.0:
        raise ValueError("covector does not point into the domain")
    if not on_cosphere(field, p0):
        raise ValueError("start covector is not on the unit cosphere")


def _default_horizon(field, domain):
    return 4.0 * domain.radius * max(1.0, field.M0)


def scattering_relation(field, domain, p0, tol=DEFAULT_TOL, t_max=None):
    """Flow an entering boundary covector to its first boundary exit.

    Returns travel time l and the exit phase point; raises TrappedRayError
    if no crossing happens before the horizon.
    """
    _check_entering(field, domain, p0)
    t_max = t_max or _default_horizon(field, domain)
    d = p0.dim
    sol = solve_flow(field, p0.as_vector()[None, :], (0.0, t_max), rtol=tol)
    t_exit = _crossing_on_dense(sol.sol, domain, d, 0.0, t_max)
    if t_exit is None:
        raise TrappedRayError(f"no boundary exit before t = {t_max}", state=p0)
    exit_p = PhasePoint.from_vector(sol.sol(t_exit))
    _require_transversal(field, domain, exit_p)
    entered = _met_inner_region(sol.sol, domain, d, 0.0, t_exit)
    return ScatteringRecord(l=float(t_exit), exit=exit_p, entered_inner=entered, entry=p0)


def _require_transversal(field, domain, p):
    v = p.x - domain.center
    r = np.linalg.norm(v)
    c = field.c(p.x)
    radial_rate = float(np.dot(v / r, c * c * p.xi))
    if abs(radial_rate) < TRANSVERSALITY_FLOOR:
        raise NonTransversalError("boundary crossing is numerically tangential")


def _met_inner_region(dense, domain, d, t0, t1, idx=0, n_scan=None):
    n_scan = n_scan or max(64, int(64 * abs(t1 - t0)) + 16)
    ts = np.linspace(t0, t1, n_scan)
    ys = dense(ts)
    x = ys[idx * 2 * d : idx * 2 * d + d, :]
    r = np.linalg.norm(x - domain.center[:, None], axis=0)
    return bool(np.min(r) < domain.inner_radius)


def backtrace(field, domain, p, tol=DEFAULT_TOL, t_max=None):
    """First negative time l_minus at which the ray through p entered the
    domain, and the entering boundary covector tau(p) = H^{l_minus}(p).

    A point already on the entering part of the boundary sphere is its own
    trace (l_minus = 0).
    """
    if not on_cosphere(field, p, tol=1e-7):
        raise ValueError("backtrace needs a cosphere point")
    off = domain.boundary_offset(p.x)
    if off > 1e-8:
        raise ValueError("backtrace start must lie in the closed domain")
    nu_dot = float(np.dot(p.xi, domain.outward_normal(p.x))) if abs(off) <= 1e-10 else None
    if nu_dot is not None and nu_dot < 0.0:
        return 0.0, p

    t_max = t_max or _default_horizon(field, domain)
    d = p.dim
    # integrate backward by flowing the time-reversed covector forward
    q0 = np.concatenate([p.x, -p.xi])
    sol = solve_flow(field, q0[None, :], (0.0, t_max), rtol=tol)
    t_hit = _crossing_on_dense(sol.sol, domain, d, 0.0, t_max)
    if t_hit is None:
        raise TrappedRayError("backward ray found no boundary crossing", state=p)
    y = sol.sol(t_hit)
    tau = PhasePoint(y[:d], -y[d:])
    _require_transversal(field, domain, PhasePoint(y[:d], y[d:]))
    return -float(t_hit), tau


def scattering_fan(field, domain, X0, DIR0, t_max=None, tol=DEFAULT_TOL, chunk=256):
    """Batched scattering relation over boundary points X0 with entering
    Euclidean directions DIR0. Entries that fail (trapped / tangential)
    come back as None."""
    X0 = np.atleast_2d(X0)
    DIR0 = np.atleast_2d(DIR0)
    d = X0.shape[1]
    t_max = t_max or _default_horizon(field, domain)
    XI0 = DIR0 / np.linalg.norm(DIR0, axis=1, keepdims=True)
    # boundary speed is 1 by the support condition, so unit direction = unit covector
    Y0 = np.concatenate([X0, XI0], axis=1)
    records = []
    for k in range(0, len(Y0), chunk):
        block = Y0[k : k + chunk]
        sol = solve_flow(field, block, (0.0, t_max), rtol=tol)
        exits = first_crossings_batch(sol, domain, d, len(block), 0.0, t_max)
        # one dense pass for the inner-region flags of the whole chunk
        n_scan = max(64, int(64 * t_max) + 16)
        ts = np.linspace(0.0, t_max, n_scan)
        ys = sol.sol(ts).reshape(len(block), 2 * d, n_scan)
        rr = np.linalg.norm(ys[:, :d, :] - domain.center[None, :, None], axis=1)
        for i in range(len(block)):
            t_exit = exits[i]
            if np.isnan(t_exit):
                records.append(None)
                continue
            y = sol.sol(t_exit)
            exit_p = PhasePoint(y[i * 2 * d : i * 2 * d + d], y[i * 2 * d + d : (i + 1) * 2 * d])
            entered = bool(np.min(rr[i, ts <= t_exit]) < domain.inner_radius)
            entry = PhasePoint(block[i, :d], block[i, d:])
            records.append(ScatteringRecord(float(t_exit), exit_p, entered, entry))
    return records
