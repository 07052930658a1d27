"""Quadrature rules for the singular kernel |x - y|^{-n-sigma}.

Everything here works in lattice units (cell side 1); callers apply the
``h`` scaling.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special


@lru_cache(maxsize=None)
def gauss_legendre01(m):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_jacobi01(m, beta):
    """Nodes/weights for ``int_0^1 xi^beta f(xi) d xi``."""
    x, w = special.roots_jacobi(m, 0.0, beta)
    return 0.5 * (x + 1.0), w * 2.0 ** (-1.0 - beta)


@lru_cache(maxsize=None)
def tanh_sinh01(step=1.0 / 12.0, tmax=3.6):
    """Fixed tanh-sinh rule on [0, 1]; tolerates integrable endpoint kinks."""
    t = np.arange(-tmax, tmax + 0.5 * step, step)
    u = 0.5 * np.pi * np.sinh(t)
    x = 0.5 * (1.0 + np.tanh(u))
    w = 0.25 * np.pi * step * np.cosh(t) / np.cosh(u) ** 2
    keep = (x > 0.0) & (x < 1.0)
    return x[keep], w[keep]


def interval_interaction(a, b, c, d, sigma):
    """Exact ``int_a^b int_c^d |x-y|^{-1-sigma} dy dx`` for ``a < b <= c < d``.

    ``d`` may be ``inf``.  Overlapping intervals make the integral diverge.
    """
    if not (a < b <= c < d):
        raise ValueError("intervals must satisfy a < b <= c < d (disjoint, ordered)")
    e = 1.0 - sigma
    val = (c - a) ** e - (c - b) ** e
    if np.isfinite(d):
        val += (d - b) ** e - (d - a) ** e
    return val / (sigma * e)


def interval_interaction_array(a, b, c, d, sigma):
    """Vectorised :func:`interval_interaction` without argument checks."""
    e = 1.0 - sigma
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    val = (c - a) ** e - (c - b) ** e
    fin = np.isfinite(d)
    with np.errstate(invalid="ignore"):
        far = np.where(fin, (d - b) ** e - (d - a) ** e, 0.0)
    return (val + far) / (sigma * e)


def point_interval(t0, t1, sigma):
    """``int_{t0}^{t1} t^{-1-sigma} dt`` for ``0 < t0 < t1 <= inf``."""
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    return (t0 ** -sigma - np.where(np.isfinite(t1), t1, np.inf) ** -sigma) / sigma


def _rect_gl(x0, x1, y0, y1, func, m, splits):
    """Tensor Gauss-Legendre with ``splits`` panels per axis."""
    gx, gw = gauss_legendre01(m)
    ex = np.linspace(x0, x1, splits + 1)
    ey = np.linspace(y0, y1, splits + 1)
    px = (ex[:-1, None] + np.diff(ex)[:, None] * gx[None, :]).ravel()
    wx = (np.diff(ex)[:, None] * gw[None, :]).ravel()
    py = (ey[:-1, None] + np.diff(ey)[:, None] * gx[None, :]).ravel()
    wy = (np.diff(ey)[:, None] * gw[None, :]).ravel()
    X, Y = np.meshgrid(px, py, indexing="ij")
    return float(np.sum(func(X, Y) * wx[:, None] * wy[None, :]))


def _duffy_corner(gfun, q, m_radial=8, m_angle=24):
    """``int_{[0,1]^2} g(x,y) |(x,y)|^{-q} dx dy`` with ``g(0,0) = 0``.

    Assumes ``g`` vanishes linearly at the origin so that the Duffy-mapped
    integrand is ``xi^{2-q}`` times a smooth function.
    """
    xi, wxi = gauss_jacobi01(m_radial, 2.0 - q)
    t, wt = gauss_legendre01(m_angle)
    XI, T = np.meshgrid(xi, t, indexing="ij")
    W = wxi[:, None] * wt[None, :]
    ang = (1.0 + T * T) ** (-0.5 * q)
    lower = gfun(XI, XI * T) / XI
    upper = gfun(XI * T, XI) / XI
    return float(np.sum(W * ang * (lower + upper)))


def tent_weight_unit(delta, sigma, depth=4):
    """Cell-pair interaction in lattice units for ``n = 2``.

    ``int_{cell 0} int_{cell delta} |x-y|^{-2-sigma} dy dx`` written as
    ``int |w|^{-2-sigma} Lambda(w - delta) dw`` with the tent ``Lambda`` of
    the unit square.  Each of the four bilinear pieces is integrated by
    Duffy/Gauss-Jacobi when it touches the origin and panelled
    Gauss-Legendre otherwise.
    """
    q = 2.0 + sigma
    d1, d2 = float(delta[0]), float(delta[1])
    if d1 == 0 and d2 == 0:
        raise ValueError("the same-cell interaction diverges")
    total = 0.0
    cheb = max(abs(d1), abs(d2))
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            # piece: w1 in d1 + s1*[0,1], w2 in d2 + s2*[0,1]; Lambda = (1-a)(1-b)
            xs = sorted((d1, d1 + s1))
            ys = sorted((d2, d2 + s2))

            def lam(w1, w2, s1=s1, s2=s2):
                return (1.0 - np.abs(w1 - d1)) * (1.0 - np.abs(w2 - d2))

            touches = xs[0] <= 0.0 <= xs[1] and ys[0] <= 0.0 <= ys[1]
            if touches:
                # origin must be a corner of the piece; reflect it to (0,0)
                fx = 1.0 if xs[0] == 0.0 else -1.0
                fy = 1.0 if ys[0] == 0.0 else -1.0

                def g(x, y, fx=fx, fy=fy, lam=lam):
                    return lam(fx * x, fy * y)

                total += _duffy_corner(g, q)
            else:

                def f(x, y, lam=lam):
                    return lam(x, y) * (x * x + y * y) ** (-0.5 * q)

                splits = 2 ** depth if cheb <= 4 else 1
                m = 8 if cheb <= 16 else 4
                total += _rect_gl(xs[0], xs[1], ys[0], ys[1], f, m, splits)
    return total


def point_square_unit(center, sigma, depth=4):
    """``int_{square} |w|^{-2-sigma} dw`` for a unit square not containing 0."""
    q = 2.0 + sigma
    cx, cy = float(center[0]), float(center[1])
    dist = np.hypot(max(abs(cx) - 0.5, 0.0), max(abs(cy) - 0.5, 0.0))
    if dist <= 0.0:
        raise ValueError("square touches the evaluation point")

    def f(x, y):
        return (x * x + y * y) ** (-0.5 * q)

    splits = 2 ** depth if dist < 4 else 1
    m = 8 if dist < 16 else 4
    return _rect_gl(cx - 0.5, cx + 0.5, cy - 0.5, cy + 0.5, f, m, splits)


def strip_coefficient(sigma):
    """``int_R (1 + u^2)^{-(2+sigma)/2} du``: 2D kernel integrated along a line."""
    return special.beta(0.5, 0.5 * (1.0 + sigma))
