"""Velocity fields on a ball domain and the admissibility checks.

A velocity field c(x) is smooth, positive, and equal to one outside the
inner region of the domain (so c - 1 has compact support strictly inside).
Built-in fields are analytic with hand-coded gradient and Hessian; every
evaluation method is vectorized over a leading batch axis.

The compact support is enforced exactly: lens/polynomial perturbations are
multiplied by a C-infinity radial envelope that is identically 1 on the core
and identically 0 for dist(x, boundary) <= epsilon0.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError

_ENVELOPE_MARGIN = 0.1  # relative width of the envelope's transition shell


# ----------------------------------------------------------------------------
# smooth one-dimensional building blocks


def _expinv(t):
    """exp(-1/t) for t > 0, exactly 0 for t <= 0 (vectorized, underflow-safe)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 1e-6
    out[pos] = np.exp(-1.0 / t[pos])
    return out


class SmoothStep:
    """C-infinity monotone step: 0 for t <= 0, 1 for t >= 1.

    sigma(t) = f(t) / (f(t) + f(1-t)) with f(t) = exp(-1/t). Value and the
    first two derivatives are available in closed form.
    """

    @staticmethod
    def value(t):
        t = np.asarray(t, dtype=float)
        g = _expinv(t)
        h = _expinv(1.0 - t)
        denom = g + h
        denom = np.where(denom == 0.0, 1.0, denom)
        out = g / denom
        return np.where(t >= 1.0, 1.0, np.where(t <= 0.0, 0.0, out))

    @staticmethod
    def d12(t):
        """(sigma', sigma'') on the open transition interval, 0 outside."""
        t = np.asarray(t, dtype=float)
        inside = (t > 1e-6) & (t < 1.0 - 1e-6)
        d1 = np.zeros_like(t)
        d2 = np.zeros_like(t)
        if np.any(inside):
            ti = t[inside]
            u = 1.0 - ti
            g = np.exp(-1.0 / ti)
            h = np.exp(-1.0 / u)
            gp = g / ti**2
            hp = -h / u**2
            gpp = g * (1.0 / ti**4 - 2.0 / ti**3)
            hpp = h * (1.0 / u**4 - 2.0 / u**3)
            D = g + h
            num1 = gp * h - g * hp
            d1[inside] = num1 / D**2
            d2[inside] = ((gpp * h - g * hpp) * D - 2.0 * num1 * (gp + hp)) / D**3
        return d1, d2


class RadialBump:
    """C-infinity bump profile in the squared-radius variable s = |x-z|^2/r^2.

    w(s) = exp(1 - 1/(1-s)) for s < 1, 0 otherwise; w(0) = 1.
    """

    @staticmethod
    def value(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = s < 1.0 - 1e-6
        u = 1.0 - s[inside]
        out[inside] = np.exp(1.0 - 1.0 / u)
        return out

    @staticmethod
    def d12(s):
        s = np.asarray(s, dtype=float)
        d1 = np.zeros_like(s)
        d2 = np.zeros_like(s)
        inside = s < 1.0 - 1e-6
        u = 1.0 - s[inside]
        w = np.exp(1.0 - 1.0 / u)
        d1[inside] = -w / u**2
        d2[inside] = w * (1.0 / u**4 - 2.0 / u**3)
        return d1, d2


# ----------------------------------------------------------------------------
# domain


@dataclass(frozen=True)
class Domain:
    """Ball domain: strictly convex with closed-form normals and chords."""

    center: np.ndarray
    radius: float
    epsilon0: float
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.dim < 2:
            raise ConfigError("domain dimension must be >= 2")
        if self.center.shape != (self.dim,):
            raise ConfigError("domain center has wrong dimension")
        if not 0 < self.epsilon0 < self.radius:
            raise ConfigError("need 0 < epsilon0 < radius")

    @property
    def inner_radius(self):
        """Radius of the inner region where c may differ from 1."""
        return self.radius - self.epsilon0

    def outward_normal(self, x):
        x = np.asarray(x, dtype=float)
        v = x - self.center
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def boundary_offset(self, x):
        """|x - center| - radius; negative inside, zero on the boundary."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def contains(self, x, tol=0.0):
        return self.boundary_offset(x) < tol

    def in_inner_region(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) < self.inner_radius


def unit_ball(dim=3, epsilon0=0.2):
    return Domain(center=np.zeros(dim), radius=1.0, epsilon0=epsilon0, dim=dim)


# ----------------------------------------------------------------------------
# velocity fields


class VelocityField:
    """Base class. Subclasses implement _cgh on (n, d) batches.

    Conventions: c(x) scalar wave speed, grad = nabla c, hess = nabla^2 c,
    b(x) = -nabla c / c (the drift of the unit-speed ray system), and
    db = Jacobian of b = (grad grad^T - c hess) / c^2.
    """

    kind = "abstract"
    dim: int
    M0: float

    # -- core batched evaluation -------------------------------------------

    def _cgh(self, X):
        raise NotImplementedError

    def _batched(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        return X, single

    def eval(self, x):
        """Return (c, grad, hess) at x; x may be (d,) or (n, d)."""
        X, single = self._batched(x)
        c, g, h = self._cgh(X)
        if single:
            return float(c[0]), g[0], h[0]
        return c, g, h

    def c(self, x):
        X, single = self._batched(x)
        c, _, _ = self._cgh(X)
        return float(c[0]) if single else c

    def c_grad(self, x):
        X, single = self._batched(x)
        c, g, _ = self._cgh(X)
        if single:
            return float(c[0]), g[0]
        return c, g

    def eval_b(self, x):
        """Return (b, db) with b = -grad/c and db its Jacobian."""
        X, single = self._batched(x)
        c, g, h = self._cgh(X)
        b = -g / c[:, None]
        db = (g[:, :, None] * g[:, None, :] - c[:, None, None] * h) / (c**2)[:, None, None]
        if single:
            return b[0], db[0]
        return b, db

    # -- declared bound check -----------------------------------------------

    def check_bounds(self, domain, n_samples=10000, seed=0):
        """Sample c on >= n_samples points of the domain; True iff within [1/M0, M0]."""
        rng = np.random.default_rng(seed)
        d = domain.dim
        u = rng.normal(size=(n_samples, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = domain.radius * rng.random(n_samples) ** (1.0 / d)
        X = domain.center + u * r[:, None]
        c = self.c(X)
        return bool(np.all(c >= 1.0 / self.M0) and np.all(c <= self.M0))


class ConstantField(VelocityField):
    """c identically 1."""

    kind = "constant"

    def __init__(self, dim=3):
        self.dim = dim
        self.M0 = 1.0

    def _cgh(self, X):
        n, d = X.shape
        return np.ones(n), np.zeros((n, d)), np.zeros((n, d, d))


class _Envelope:
    """Radial C-infinity cutoff tied to a domain: 1 on the core of the inner
    region, 0 for |x - center| >= inner_radius."""

    def __init__(self, domain):
        self.center = domain.center
        self.L = domain.inner_radius
        self.s0 = 1.0 - _ENVELOPE_MARGIN

    def value_d12(self, X):
        """Envelope value, gradient, Hessian on an (n, d) batch."""
        n, d = X.shape
        v = X - self.center
        r = np.linalg.norm(v, axis=1)
        s = r / self.L
        val = np.ones(n)
        grad = np.zeros((n, d))
        hess = np.zeros((n, d, d))
        out = s >= 1.0
        val[out] = 0.0
        trans = (~out) & (s > self.s0)
        if np.any(trans):
            idx = np.where(trans)[0]
            u = (s[idx] - self.s0) / _ENVELOPE_MARGIN
            sig = SmoothStep.value(u)
            d1, d2 = SmoothStep.d12(u)
            val[idx] = 1.0 - sig
            # chain rule through s(x) = |x - center| / L
            ri = r[idx]
            nhat = v[idx] / ri[:, None]
            ds = nhat / self.L
            d2s = (np.eye(d)[None] - nhat[:, :, None] * nhat[:, None, :]) / (self.L * ri)[:, None, None]
            e1 = -d1 / _ENVELOPE_MARGIN
            e2 = -d2 / _ENVELOPE_MARGIN**2
            grad[idx] = e1[:, None] * ds
            hess[idx] = (
                e2[:, None, None] * ds[:, :, None] * ds[:, None, :]
                + e1[:, None, None] * d2s
            )
        return val, grad, hess


class _PerturbationField(VelocityField):
    """c = 1 + envelope(x) * p(x) for a smooth perturbation p."""

    def __init__(self, domain, M0=None):
        self.dim = domain.dim
        self.domain = domain
        self._env = _Envelope(domain)

    def _p(self, X):
        raise NotImplementedError

    def _cgh(self, X):
        p, gp, hp = self._p(X)
        e, ge, he = self._env.value_d12(X)
        c = 1.0 + e * p
        grad = e[:, None] * gp + p[:, None] * ge
        hess = (
            e[:, None, None] * hp
            + ge[:, :, None] * gp[:, None, :]
            + gp[:, :, None] * ge[:, None, :]
            + p[:, None, None] * he
        )
        return c, grad, hess


class GaussianLensField(_PerturbationField):
    """Sum of Gaussian low-velocity lenses: p = -sum_k alpha_k exp(-|x-z_k|^2 / 2 sigma_k^2).

    Depths alpha_k in (0, 1) keep c positive; widths sigma_k set the focusing
    strength. A single deep narrow lens focuses rays and creates caustics.
    """

    kind = "gaussian_lens_sum"

    def __init__(self, domain, centers, depths, widths, M0=None):
        super().__init__(domain)
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.depths = np.atleast_1d(np.asarray(depths, dtype=float))
        self.widths = np.atleast_1d(np.asarray(widths, dtype=float))
        if not (len(self.centers) == len(self.depths) == len(self.widths)):
            raise ConfigError("lens parameter lists must have equal length")
        if np.any(self.depths <= 0) or np.any(self.depths >= 1):
            raise ConfigError("lens depths must lie in (0, 1)")
        total = float(np.sum(self.depths))
        if total >= 1:
            raise ConfigError("total lens depth must stay below 1")
        self.M0 = M0 if M0 is not None else 1.05 / (1.0 - total)

    def _p(self, X):
        n, d = X.shape
        p = np.zeros(n)
        gp = np.zeros((n, d))
        hp = np.zeros((n, d, d))
        for z, a, s in zip(self.centers, self.depths, self.widths):
            v = X - z
            q = np.sum(v * v, axis=1)
            pk = -a * np.exp(-q / (2.0 * s * s))
            p += pk
            gk = pk[:, None] * (-v / s**2)
            gp += gk
            hp += pk[:, None, None] * (
                v[:, :, None] * v[:, None, :] / s**4 - np.eye(d)[None] / s**2
            )
        return p, gp, hp


class RadialPolynomialField(_PerturbationField):
    """p = sum_k a_k (|x-center|^2 / L^2)^k with L the inner radius (k >= 1)."""

    kind = "radial_polynomial"

    def __init__(self, domain, coeffs, M0=None):
        super().__init__(domain)
        self.coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        amax = float(np.sum(np.abs(self.coeffs)))
        if amax >= 1:
            raise ConfigError("polynomial coefficients too large; c could vanish")
        self.M0 = M0 if M0 is not None else 1.05 / (1.0 - amax)

    def _p(self, X):
        n, d = X.shape
        L2 = self._env.L**2
        v = X - self.domain.center
        q = np.sum(v * v, axis=1) / L2
        p = np.zeros(n)
        dP = np.zeros(n)
        d2P = np.zeros(n)
        for k, a in enumerate(self.coeffs, start=1):
            p += a * q**k
            dP += a * k * q ** (k - 1)
            if k >= 2:
                d2P += a * k * (k - 1) * q ** (k - 2)
        gq = 2.0 * v / L2
        hq = 2.0 * np.eye(d)[None] / L2
        gp = dP[:, None] * gq
        hp = d2P[:, None, None] * gq[:, :, None] * gq[:, None, :] + dP[:, None, None] * hq
        return p, gp, hp


class BumpPotential:
    """C-infinity compactly supported scalar psi with analytic grad/Hessian.

    psi(x) = height * w(|x - center|^2 / radius^2); support is the open ball.
    Used both as the log-speed perturbation in linearization probes and as
    the profile of vector-valued test functions.
    """

    def __init__(self, center, radius, height=1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.height = float(height)

    def value(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.sum((X - self.center) ** 2, axis=1) / self.radius**2
        out = self.height * RadialBump.value(s)
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def grad(self, x):
        single = np.asarray(x).ndim == 1
        X = np.atleast_2d(np.asarray(x, dtype=float))
        v = X - self.center
        s = np.sum(v * v, axis=1) / self.radius**2
        d1, _ = RadialBump.d12(s)
        g = self.height * d1[:, None] * (2.0 * v / self.radius**2)
        return g[0] if single else g

    def hess(self, x):
        single = np.asarray(x).ndim == 1
        X = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = X.shape
        v = X - self.center
        s = np.sum(v * v, axis=1) / self.radius**2
        d1, d2 = RadialBump.d12(s)
        gs = 2.0 * v / self.radius**2
        h = self.height * (
            d2[:, None, None] * gs[:, :, None] * gs[:, None, :]
            + d1[:, None, None] * (2.0 * np.eye(d)[None] / self.radius**2)
        )
        return h[0] if single else h


class ExpPotentialField(VelocityField):
    """c_eps = c * exp(eps * psi / 2): the base field with its log-squared
    speed shifted by eps * psi. Keeps perturbations inside the conformal
    class; the induced drift perturbation is exactly -eps/2 * grad(psi).
    """

    kind = "exp_potential"

    def __init__(self, base, potential, eps):
        self.base = base
        self.potential = potential
        self.eps = float(eps)
        self.dim = base.dim
        self.M0 = base.M0 * float(np.exp(abs(eps) * abs(potential.height) / 2.0))

    def _cgh(self, X):
        c, g, h = self.base._cgh(X)
        psi = np.atleast_1d(self.potential.value(X))
        gpsi = self.potential.grad(X)
        hpsi = self.potential.hess(X)
        f = np.exp(0.5 * self.eps * psi)
        half = 0.5 * self.eps
        ce = c * f
        ge = f[:, None] * (g + half * c[:, None] * gpsi)
        he = f[:, None, None] * (
            h
            + half * (g[:, :, None] * gpsi[:, None, :] + gpsi[:, :, None] * g[:, None, :])
            + half * c[:, None, None] * hpsi
            + half**2 * c[:, None, None] * gpsi[:, :, None] * gpsi[:, None, :]
        )
        return ce, ge, he


def make_field(kind, domain, **params):
    """Factory matching the config-file field block."""
    if kind == "constant":
        return ConstantField(dim=domain.dim)
    if kind == "gaussian_lens_sum":
        return GaussianLensField(
            domain,
            centers=params["centers"],
            depths=params["depths"],
            widths=params["widths"],
            M0=params.get("M0"),
        )
    if kind == "radial_polynomial":
        return RadialPolynomialField(domain, coeffs=params["coeffs"], M0=params.get("M0"))
    raise ConfigError(f"unknown field kind: {kind!r}")


# ----------------------------------------------------------------------------
# admissibility


@dataclass
class AdmissibilityReport:
    """Observed (not certified) admissibility constants for a field.

    epsilon_star / epsilon1 are minima measured over sampled boundary rays
    that meet the inner region: entry and exit normal components are at
    least epsilon_star in absolute value, and travel times at least epsilon1.
    """

    c_bounds_ok: bool
    support_ok: bool
    nontrapping_ok: bool
    epsilon_star: float
    epsilon1: float
    T: float
    failures: dict = dc_field(default_factory=dict)


def check_admissibility(field, domain, T, n_samples=2048, seed=0, tol=1e-8):
    """Sample-based admissibility check.

    Draws n_samples unit covectors over the domain, flows each for time T and
    requires all to have left the domain (non-trapping). Entry/exit margins
    are measured on a fan of boundary rays restricted to those meeting the
    inner region. Integrator blow-ups surface as IntegrationError.
    """
    from . import flow  # deferred: flow depends on fields

    rng = np.random.default_rng(seed)
    d = domain.dim
    failures = {}

    c_bounds_ok = field.check_bounds(domain, n_samples=max(10000, n_samples), seed=seed)
    if not c_bounds_ok:
        failures["c_bounds"] = "sampled c left [1/M0, M0]"

    # support of c - 1 inside the inner region: sample the collar
    u = rng.normal(size=(4096, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = domain.radius - domain.epsilon0 * rng.random(4096)
    collar = domain.center + u * r[:, None]
    support_ok = bool(np.max(np.abs(field.c(collar) - 1.0)) == 0.0)
    if not support_ok:
        failures["support"] = "c != 1 in the boundary collar"

    # non-trapping: flow sampled cosphere points for time T, all must exit
    u = rng.normal(size=(n_samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = domain.radius * rng.random(n_samples) ** (1.0 / d)
    X = domain.center + u * r[:, None]
    dirs = rng.normal(size=(n_samples, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    XI = dirs / field.c(X)[:, None]
    end = flow.flow_endpoints(field, X, XI, T, rtol=1e-8, atol=1e-9)
    still_inside = domain.contains(end[:, :d])
    nontrapping_ok = not bool(np.any(still_inside))
    if not nontrapping_ok:
        failures["nontrapping"] = f"{int(np.sum(still_inside))}/{n_samples} samples still inside at T"

    # entry/exit margins over a boundary fan
    n_fan = max(256, n_samples // 8)
    bpts = rng.normal(size=(n_fan, d))
    bpts /= np.linalg.norm(bpts, axis=1, keepdims=True)
    bx = domain.center + domain.radius * bpts
    vin = rng.normal(size=(n_fan, d))
    vin /= np.linalg.norm(vin, axis=1, keepdims=True)
    inward = np.sum(vin * bpts, axis=1) < -1e-3
    bx, bpts, vin = bx[inward], bpts[inward], vin[inward]
    eps_star = np.inf
    eps1 = np.inf
    records = flow.scattering_fan(field, domain, bx, vin, t_max=1.5 * T)
    for rec in records:
        if rec is None or not rec.entered_inner:
            continue
        nu0 = domain.outward_normal(rec.entry.x)
        nu1 = domain.outward_normal(rec.exit.x)
        eps_star = min(eps_star, -float(np.dot(rec.entry.xi, nu0)), float(np.dot(rec.exit.xi, nu1)))
        eps1 = min(eps1, rec.l)
    if not np.isfinite(eps_star):
        eps_star, eps1 = 0.0, 0.0
        failures["margins"] = "no sampled ray met the inner region"

    return AdmissibilityReport(
        c_bounds_ok=c_bounds_ok,
        support_ok=support_ok,
        nontrapping_ok=nontrapping_ok,
        epsilon_star=float(eps_star),
        epsilon1=float(eps1),
        T=float(T),
        failures=failures,
    )
