"""Quadrature rules used by the transforms and the normal operator.

All rules return plain (nodes, weights) numpy arrays so callers can keep
their reductions in a fixed, deterministic order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import eval_legendre, roots_jacobi


def gauss_legendre(n, a=0.0, b=1.0):
    """n-point Gauss-Legendre rule on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def gauss_lobatto(n):
    """n-point Gauss-Lobatto rule on [-1, 1] (endpoints included, degree 2n-3).

    Interior nodes are the roots of P'_{n-1}; weights follow the classical
    closed form 2 / (n(n-1) P_{n-1}(x)^2).
    """
    if n < 2:
        raise ValueError("Lobatto rule needs n >= 2")
    if n == 2:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    interior, _ = roots_jacobi(n - 2, 1.0, 1.0)
    nodes = np.concatenate(([-1.0], np.sort(interior), [1.0]))
    pn = eval_legendre(n - 1, nodes)
    weights = 2.0 / (n * (n - 1) * pn * pn)
    return nodes, weights


def gauss_lobatto_on(a, b, n):
    x, w = gauss_lobatto(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def sphere_rule(n_polar, dim):
    """Quadrature for the Euclidean unit sphere S^{dim-1}.

    dim == 2: trapezoid on the circle with 2*n_polar nodes (total weight 2*pi).
    dim == 3: Gauss-Legendre in cos(theta) x trapezoid in azimuth with
              n_polar x 2*n_polar nodes (total weight 4*pi).
    Both node sets are antipodally symmetric for even azimuth counts.
    Returns (directions (m, dim), weights (m,)).
    """
    if dim == 2:
        m = 2 * n_polar
        ang = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        wts = np.full(m, 2.0 * np.pi / m)
        return dirs, wts
    if dim == 3:
        mu, wmu = np.polynomial.legendre.leggauss(n_polar)
        n_az = 2 * n_polar
        phi = 2.0 * np.pi * np.arange(n_az) / n_az
        wphi = 2.0 * np.pi / n_az
        st = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
        dirs = np.empty((n_polar * n_az, 3))
        wts = np.empty(n_polar * n_az)
        k = 0
        for i in range(n_polar):
            for j in range(n_az):
                dirs[k] = (st[i] * np.cos(phi[j]), st[i] * np.sin(phi[j]), mu[i])
                wts[k] = wmu[i] * wphi
                k += 1
        return dirs, wts
    raise NotImplementedError(f"sphere rule not implemented for dim={dim}")


def antipodal_pairs(dirs, tol=1e-12):
    """Index pairs (i, j) with dirs[j] == -dirs[i]; each pair listed once.

    Requires an antipodally symmetric node set (as produced by sphere_rule).
    """
    n = len(dirs)
    used = np.zeros(n, dtype=bool)
    pairs = []
    for i in range(n):
        if used[i]:
            continue
        target = -dirs[i]
        d2 = np.sum((dirs - target) ** 2, axis=1)
        j = int(np.argmin(d2))
        if d2[j] > tol or used[j] or j == i:
            raise ValueError("direction set is not antipodally symmetric")
        used[i] = used[j] = True
        pairs.append((i, j))
    return pairs
