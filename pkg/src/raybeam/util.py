"""Small shared helpers: fits, deterministic reductions, parallel mapping."""

from __future__ import annotations

import numpy as np


def loglog_slope(xs, ys):
    """Least-squares slope of log(ys) vs log(xs).

    Returns (slope, intercept, r_squared). Inputs must be positive.
    """
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return linear_fit(lx, ly)


def linear_fit(xs, ys):
    """Ordinary least squares y = a*x + b; returns (a, b, r_squared)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    a, b = np.polyfit(xs, ys, 1)
    resid = ys - (a * xs + b)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(ys - ys.mean(), ys - ys.mean()))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(a), float(b), r2


def pairwise_sum(values, axis=0):
    """Deterministic pairwise-tree reduction (numpy's sum is already pairwise
    for contiguous arrays; this wrapper fixes the axis convention in one place)."""
    return np.sum(np.asarray(values), axis=axis)


def parallel_map(fn, items, workers=1):
    """Map preserving input order. With workers > 1, uses joblib processes;
    results are combined in input order so reductions stay deterministic."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=workers)(delayed(fn)(it) for it in items)


def unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def orthonormal_complement(v):
    """Columns form an orthonormal basis of the hyperplane orthogonal to v."""
    v = unit(v)
    d = v.shape[0]
    # Householder reflection mapping e_1 -> v; remaining columns span v-perp.
    w = v.copy()
    w[0] += np.sign(v[0]) if v[0] != 0 else 1.0
    w /= np.linalg.norm(w)
    H = np.eye(d) - 2.0 * np.outer(w, w)
    return H[:, 1:]


def fibonacci_sphere(n, rng=None):
    """n quasi-uniform points on the unit 2-sphere (golden-angle lattice).

    Deterministic for rng=None; a seeded rng adds a fixed random rotation.
    """
    i = np.arange(n, dtype=float)
    ga = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = ga * i
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if rng is not None:
        q = rng.normal(size=(3, 3))
        Q, _ = np.linalg.qr(q)
        pts = pts @ Q.T
    return pts


def circle_points(n, dim=2):
    """n uniform directions on the unit circle in R^2."""
    ang = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def unit_sphere_points(n, dim, rng=None):
    if dim == 2:
        return circle_points(n)
    if dim == 3:
        return fibonacci_sphere(n, rng=rng)
    raise NotImplementedError(f"no sphere sampler for dimension {dim}")
