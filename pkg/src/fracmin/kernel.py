"""Singular-kernel interaction energies on the lattice.

``L(A, B) = int_{A x B} |x - y|^{-n-sigma} dx dy`` is assembled from exact
cell-pair weights (closed form in 1D, tent-reduced quadrature in 2D) plus
analytic integrals over the region beyond the lattice box, where the set is
given by the :class:`~fracmin.grid.Exterior` descriptor.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .grid import (
    ALL_INSIDE,
    ALL_OUTSIDE,
    COMPLEMENT_OF_BALL,
    HALF_SPACE,
    Exterior,
    IndicatorSet,
)
from .quadrature import (
    gauss_legendre01,
    interval_interaction,
    interval_interaction_array,
    point_square_unit,
    tanh_sinh01,
    tent_weight_unit,
)


# -- weight tables --------------------------------------------------------------

def _second_difference_power(D, e):
    """``(D+1)^e - 2 D^e + (D-1)^e`` without cancellation for large ``D``."""
    D = np.asarray(D, dtype=float)
    direct = (D + 1) ** e - 2 * D ** e + np.abs(D - 1) ** e
    big = D > 40
    if np.any(big):
        Db = D[big]
        series = np.zeros_like(Db)
        coef = 1.0
        for m in range(1, 13):
            coef *= e - m + 1
            if m % 2 == 0:
                fact = float(np.prod(np.arange(1, m + 1)))
                series += 2.0 * coef / fact * Db ** (e - m)
        direct = direct.copy()
        direct[big] = series
    return direct


@lru_cache(maxsize=32)
def _unit_weights_1d(sigma, L):
    D = np.arange(1, L, dtype=float)
    e = 1.0 - sigma
    # interval_interaction(0, 1, D, D + 1) = -(second difference of t^e) / (sigma e)
    w = -_second_difference_power(D, e) / (sigma * e)
    out = np.zeros(2 * L - 1)
    out[L:] = w
    out[: L - 1] = w[::-1]
    out.setflags(write=False)
    return out


def _far_weights_2d(D1, D2, sigma, m=6):
    """Vectorised tent-reduced weights for offsets well away from the origin."""
    q = 2.0 + sigma
    g, gw = gauss_legendre01(m)
    total = np.zeros(D1.shape)
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            x = D1[:, None, None] + s1 * g[None, :, None]
            y = D2[:, None, None] + s2 * g[None, None, :]
            lam = (1.0 - g[None, :, None]) * (1.0 - g[None, None, :])
            f = lam * (x * x + y * y) ** (-0.5 * q)
            total += np.einsum("kab,a,b->k", f, gw, gw)
    return total


@lru_cache(maxsize=16)
def _unit_weights_2d(sigma, L, depth):
    out = np.zeros((2 * L - 1, 2 * L - 1))
    a = np.arange(0, L)
    A, B = np.meshgrid(a, a, indexing="ij")
    sel = (A >= B) & ((A > 0) | (B > 0))
    A = A[sel].astype(float)
    B = B[sel].astype(float)
    vals = np.empty(A.shape)
    near = A <= 4
    for k in np.flatnonzero(near):
        vals[k] = tent_weight_unit((A[k], B[k]), sigma, depth)
    far = ~near
    if np.any(far):
        vals[far] = _far_weights_2d(A[far], B[far], sigma)
    c = L - 1
    ia = A.astype(int)
    ib = B.astype(int)
    for sa in (1, -1):
        for sb in (1, -1):
            out[c + sa * ia, c + sb * ib] = vals
            out[c + sb * ib, c + sa * ia] = vals
    out[c, c] = 0.0
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _unit_point_1d(sigma, L):
    """Face-point-to-cell weights, indexed by cell offset from the cell below the face."""
    D = np.arange(-(L - 1), L, dtype=float)
    # face at +1/2; cell D spans [D - 1/2, D + 1/2]; distances from the face
    lo = np.abs(D - 0.5) - 0.5
    hi = lo + 1.0
    out = np.zeros(D.shape)
    ok = lo > 0
    out[ok] = (lo[ok] ** -sigma - hi[ok] ** -sigma) / sigma
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def _unit_point_2d(sigma, L, depth):
    """Point weights for a face at ``+1/2`` along axis 0 of the reference cell."""
    out = np.zeros((2 * L - 1, 2 * L - 1))
    c = L - 1
    # distinct values: |offset along axis0 - 1/2|, |offset along axis1|
    cache = {}
    for d0 in range(-(L - 1), L):
        a0 = abs(d0 - 0.5)
        for d1 in range(0, L):
            if a0 == 0.5 and d1 == 0:
                continue
            key = (a0, d1)
            if key not in cache:
                if a0 + d1 > 24:
                    cache[key] = (a0 * a0 + d1 * d1) ** (-0.5 * (2.0 + sigma))
                else:
                    cache[key] = point_square_unit((a0, d1), sigma, depth)
            out[c + d0, c + d1] = cache[key]
            out[c + d0, c - d1] = cache[key]
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Cell-pair weights ``W(delta)`` for every lattice offset (``W(0) = 0``)."""

    n: int
    h: float
    sigma: float
    depth: int
    M: int
    weights: np.ndarray = field(repr=False)

    @property
    def L(self):
        return 2 * self.M

    def __call__(self, delta):
        delta = np.atleast_1d(np.asarray(delta, dtype=int))
        if np.all(delta == 0):
            raise ValueError("W is undefined at zero offset (the same-cell integral diverges)")
        return float(self.weights[tuple(delta + self.L - 1)])

    def as_2d(self):
        return self.weights.reshape(1, -1) if self.n == 1 else self.weights

    def cache_key(self):
        text = f"n={self.n} h={self.h!r} M={self.M} sigma={self.sigma!r} depth={self.depth}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_weight_table(domain, sigma, quadrature_depth=4):
    if quadrature_depth < 2:
        raise ValueError("quadrature_depth must be >= 2")
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    L = 2 * domain.M
    scale = domain.h ** (domain.n - sigma)
    if domain.n == 1:
        unit = _unit_weights_1d(float(sigma), L)
    else:
        unit = _unit_weights_2d(float(sigma), L, int(quadrature_depth))
    w = unit * scale
    w.setflags(write=False)
    return WeightTable(domain.n, domain.h, float(sigma), int(quadrature_depth), domain.M, w)


def save_weight_table(table, path, R):
    """Text cache: a parameter header with hash, then ``delta W`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"FRACMIN-WEIGHTS v1 n={table.n} h={table.h!r} R={R!r} sigma={table.sigma!r} "
            f"depth={table.depth} M={table.M} hash={table.cache_key()}\n"
        )
        c = table.L - 1
        for idx in np.ndindex(table.weights.shape):
            delta = " ".join(str(i - c) for i in idx)
            fh.write(f"{delta} {float(table.weights[idx])!r}\n")


def load_weight_table(path, n, h, R, sigma, depth):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["FRACMIN-WEIGHTS", "v1"]:
            raise ValueError("not a v1 weight-table cache")
        meta = dict(tok.split("=", 1) for tok in header[2:])
        M = int(meta["M"])
        probe = WeightTable(n, float(h), float(sigma), int(depth), M, np.zeros(0))
        if meta.get("hash") != probe.cache_key() or float(meta["R"]) != float(R):
            raise ValueError("weight-table cache was built for different parameters")
        L = 2 * M
        w = np.zeros((2 * L - 1,) * n)
        c = L - 1
        for line in fh:
            tok = line.split()
            idx = tuple(int(t) + c for t in tok[:n])
            w[idx] = float(tok[n])
    w.setflags(write=False)
    return WeightTable(n, float(h), float(sigma), int(depth), M, w)


# -- tails beyond the lattice box -------------------------------------------------

def _exterior_intervals_1d(exterior, B):
    """Pieces of ``E0`` beyond ``[-B, B]`` as ``(lo, hi)`` intervals."""
    left = (-np.inf, -B)
    right = (B, np.inf)
    kind = exterior.kind
    if kind in (ALL_INSIDE, COMPLEMENT_OF_BALL):
        return [left, right]
    if kind == ALL_OUTSIDE:
        return []
    nu = exterior.normal[0]
    c = exterior.offset / nu
    out = []
    for lo, hi in (left, right):
        a, b = (max(lo, c), hi) if nu > 0 else (lo, min(hi, c))
        if a < b:
            out.append((a, b))
    return out


def _beyond_intervals_1d(B):
    return [(-np.inf, -B), (B, np.inf)]


def _cell_to_intervals_1d(a, b, intervals, sigma):
    total = 0.0
    for lo, hi in intervals:
        if lo >= b:
            total += interval_interaction(a, b, lo, hi, sigma)
        elif hi <= a:
            total += interval_interaction(-b, -a, -hi, -lo, sigma)
        else:
            raise ValueError("exterior interval overlaps the cell")
    return total


def _point_to_intervals_1d(x, intervals, sigma):
    total = 0.0
    for lo, hi in intervals:
        if lo > x:
            total += (lo - x) ** -sigma / sigma - (0.0 if not np.isfinite(hi) else (hi - x) ** -sigma / sigma)
        else:
            total += (x - hi) ** -sigma / sigma - (0.0 if not np.isfinite(lo) else (x - lo) ** -sigma / sigma)
    return total


def _box_exit(x, y, c, s, B):
    """Distance from ``(x, y)`` to the boundary of ``[-B, B]^2`` along ``(c, s)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(c > 0, (B - x) / c, np.where(c < 0, (-B - x) / c, np.inf))
        ty = np.where(s > 0, (B - y) / s, np.where(s < 0, (-B - y) / s, np.inf))
    return np.minimum(tx, ty)


def _angle_breaks_2d(px, py, B, exterior):
    """Angles (per point, padded to a fixed count) where the ray integrand kinks."""
    P = len(px)
    cols = []
    for cx, cy in ((B, B), (-B, B), (-B, -B), (B, -B)):
        cols.append(np.arctan2(cy - py, cx - px))
    if exterior.kind == HALF_SPACE:
        nu = np.asarray(exterior.normal)
        phi = np.arctan2(nu[1], nu[0])
        cols += [np.full(P, phi + 0.5 * np.pi), np.full(P, phi - 0.5 * np.pi)]
        c = exterior.offset
        for axis in (0, 1):
            other = 1 - axis
            for side in (-B, B):
                if abs(nu[other]) < 1e-15:
                    continue
                t = (c - nu[axis] * side) / nu[other]
                if -B <= t <= B:
                    q = [0.0, 0.0]
                    q[axis] = side
                    q[other] = t
                    cols.append(np.arctan2(q[1] - py, q[0] - px))
    br = np.mod(np.stack(cols, axis=1), 2 * np.pi)
    br = np.concatenate([np.zeros((P, 1)), br, np.full((P, 1), 2 * np.pi)], axis=1)
    return np.sort(br, axis=1)


def _ray_tail(px, py, theta, B, sigma, exterior, g=None):
    """``(in E0, all)`` parts of ``int_{rho}^inf t^{-1-sigma} dt`` along rays.

    ``g(t)`` is the antiderivative tail ``int_t^inf`` of the radial density;
    the default is the kernel's ``t^{-sigma} / sigma``.
    """
    if g is None:
        def g(t):
            return t ** -sigma / sigma
    c = np.cos(theta)
    s = np.sin(theta)
    rho = _box_exit(px, py, c, s, B)
    full = g(rho)
    kind = exterior.kind
    if kind in (ALL_INSIDE, COMPLEMENT_OF_BALL):
        return full, full
    if kind == ALL_OUTSIDE:
        return np.zeros_like(full), full
    nu = exterior.normal
    d = exterior.offset - (nu[0] * px + nu[1] * py)
    q = nu[0] * c + nu[1] * s
    with np.errstate(divide="ignore", invalid="ignore"):
        tstar = d / q
        # q > 0: the ray enters E0 at tstar (or is inside from the start)
        inside = np.where(q > 0, g(np.maximum(rho, np.where(tstar > 0, tstar, 0.0))), 0.0)
        # q < 0 with the start inside E0: the ray leaves E0 at tstar
        seg = np.where(tstar > rho, full - g(np.abs(tstar)), 0.0)
        inside = np.where((q < 0) & (d < 0), seg, inside)
        inside = np.where((q == 0) & (d < 0), full, inside)
    return inside, full


def _point_tail_2d(points, B, sigma, exterior, chunk=2048, g=None, step=1.0 / 12.0):
    xs, ws = tanh_sinh01(step)
    points = np.asarray(points, dtype=float)
    tin = np.empty(len(points))
    tall = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        px = points[lo:lo + chunk, 0]
        py = points[lo:lo + chunk, 1]
        br = _angle_breaks_2d(px, py, B, exterior)
        a = br[:, :-1, None]
        w = np.diff(br, axis=1)[:, :, None]
        theta = a + w * xs[None, None, :]
        wt = w * ws[None, None, :]
        i_part, f_part = _ray_tail(px[:, None, None], py[:, None, None], theta, B, sigma, exterior, g)
        tin[lo:lo + chunk] = np.sum(i_part * wt, axis=(1, 2))
        tall[lo:lo + chunk] = np.sum(f_part * wt, axis=(1, 2))
    return tin, tall


@dataclass(frozen=True, eq=False)
class TailModel:
    """Per-cell interactions of Omega cells with E0 and E0^c beyond the box."""

    exterior: Exterior
    sigma: float
    t_in: np.ndarray = field(repr=False)
    t_out: np.ndarray = field(repr=False)
    _domain: object = field(repr=False, default=None)

    def point_tails(self, points):
        """``(int_{beyond ∩ E0}, int_{beyond ∖ E0})`` of ``|x-y|^{-n-sigma}`` at points."""
        dom = self._domain
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        B = dom.half_width
        if dom.n == 1:
            ins = _exterior_intervals_1d(self.exterior, B)
            allv = _beyond_intervals_1d(B)
            tin = np.array([_point_to_intervals_1d(p[0], ins, self.sigma) for p in pts])
            tall = np.array([_point_to_intervals_1d(p[0], allv, self.sigma) for p in pts])
        else:
            tin, tall = _point_tail_2d(pts, B, self.sigma, self.exterior)
        return tin, tall - tin

    def bound(self, x):
        """Upper bound |S^{n-1}| (R - |x|)^{-sigma} / sigma on the total tail density."""
        dom = self._domain
        surf = 2.0 if dom.n == 1 else 2.0 * np.pi
        x = np.asarray(x, dtype=float).reshape(-1, dom.n)
        return surf * (dom.half_width - np.linalg.norm(x, axis=1)) ** -self.sigma / self.sigma


def cell_tails(domain, exterior, sigma, mask):
    """Cell-integrated tails ``(T_in, T_out)`` for the cells in ``mask``."""
    t_in = np.zeros(domain.shape)
    t_out = np.zeros(domain.shape)
    B = domain.half_width
    h = domain.h
    cells = np.argwhere(mask)
    if domain.n == 1:
        ins = _exterior_intervals_1d(exterior, B)
        allv = _beyond_intervals_1d(B)
        for (i,) in cells:
            a = (i - domain.M) * h
            b = a + h
            tin = _cell_to_intervals_1d(a, b, ins, sigma)
            tall = _cell_to_intervals_1d(a, b, allv, sigma)
            t_in[i] = tin
            t_out[i] = tall - tin
        return t_in, t_out
    g, gw = gauss_legendre01(4)
    off = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    wts = np.outer(gw, gw).ravel() * h * h
    corners = (cells - domain.M) * h
    pts = (corners[:, None, :] + h * off[None, :, :]).reshape(-1, 2)
    tin, tall = _point_tail_2d(pts, B, sigma, exterior)
    tin = (tin.reshape(len(cells), -1) * wts).sum(axis=1)
    tall = (tall.reshape(len(cells), -1) * wts).sum(axis=1)
    t_in[tuple(cells.T)] = tin
    t_out[tuple(cells.T)] = tall - tin
    return t_in, t_out


_TAIL_CACHE = {}


def build_tail_model(domain, exterior, sigma):
    key = (domain.key(), exterior, float(sigma))
    hit = _TAIL_CACHE.get(key)
    if hit is not None:
        return hit
    t_in, t_out = cell_tails(domain, exterior, sigma, domain.omega_mask)
    for arr in (t_in, t_out):
        arr.setflags(write=False)
    model = TailModel(exterior, float(sigma), t_in, t_out, domain)
    if len(_TAIL_CACHE) > 64:
        _TAIL_CACHE.clear()
    _TAIL_CACHE[key] = model
    return model


# -- interaction energies ---------------------------------------------------------

def _as_mask(domain, cells):
    cells = np.asarray(cells)
    if cells.dtype == bool and cells.shape == domain.shape:
        return cells
    mask = np.zeros(domain.shape, dtype=bool)
    if cells.size:
        cells = cells.reshape(-1, domain.n)
        mask[tuple(cells.T)] = True
    return mask


def interaction(A, B, table, domain, B_exterior=None):
    """``L(A, B)`` for lattice cell sets; optionally ``B`` also contains the
    part of the exterior set ``B_exterior`` lying beyond the lattice box."""
    ma = _as_mask(domain, A)
    mb = _as_mask(domain, B)
    if np.any(ma & mb):
        raise ValueError("interaction requires disjoint cell sets")
    W2 = table.as_2d()
    shape2 = (1, -1) if domain.n == 1 else domain.shape
    ma2 = ma.reshape(shape2)
    mb2 = mb.reshape(shape2)
    L0, L1 = ma2.shape
    total = 0.0
    for i, j in np.argwhere(ma2):
        total += _kernels._window(W2, i, j, L0, L1)[mb2].sum()
    if B_exterior is not None:
        t_in, _ = cell_tails(domain, B_exterior, table.sigma, ma)
        total += t_in[ma].sum()
    return float(total)


@dataclass(frozen=True)
class PerSigma:
    interior: float  # L(E ∩ Ω, E^c)
    exterior: float  # L(E ∖ Ω, Ω ∖ E)

    @property
    def total(self):
        return self.interior + self.exterior


def _shape2(domain, arr):
    return arr.reshape(1, -1) if domain.n == 1 else arr


def per_sigma_terms(E, table, tails=None):
    dom = E.domain
    tails = tails or build_tail_model(dom, E.exterior, table.sigma)
    a, b = _kernels.per_terms(
        _shape2(dom, E.phase),
        _shape2(dom, dom.omega_mask),
        table.as_2d(),
        _shape2(dom, tails.t_in),
        _shape2(dom, tails.t_out),
    )
    return PerSigma(float(a), float(b))


def per_sigma(E, table, tails=None):
    """``Per_sigma(E, Omega) = L(E∩Ω, E^c) + L(E∖Ω, Ω∖E)``."""
    return per_sigma_terms(E, table, tails).total


def local_field(E, table, tails=None):
    dom = E.domain
    tails = tails or build_tail_model(dom, E.exterior, table.sigma)
    F = _kernels.local_field(
        _shape2(dom, E.phase),
        _shape2(dom, dom.omega_mask),
        table.as_2d(),
        _shape2(dom, tails.t_in),
        _shape2(dom, tails.t_out),
    )
    return F.reshape(dom.shape)


def delta_per_flip(E, cell, table, tails=None, field=None):
    """``Per_sigma(E^i) - Per_sigma(E)`` for flipping Omega cell ``cell``."""
    dom = E.domain
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if not dom.omega_mask[cell]:
        raise ValueError("only Omega cells can be flipped")
    if field is None:
        field = local_field(E, table, tails)
    return float(E.phase[cell] * field[cell])


# -- fractional curvature ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CurvatureTables:
    """Face-point-to-cell weights, one table per axis (face at +1/2)."""

    n: int
    h: float
    sigma: float
    per_axis: tuple = field(repr=False)


@lru_cache(maxsize=8)
def _curvature_unit(n, sigma, L, depth):
    if n == 1:
        return (_unit_point_1d(sigma, L).reshape(1, -1),)
    base = _unit_point_2d(sigma, L, depth)
    return (base, np.ascontiguousarray(base.T))


def build_curvature_tables(domain, sigma, depth=4):
    units = _curvature_unit(domain.n, float(sigma), 2 * domain.M, int(depth))
    scale = domain.h ** (-sigma)
    return CurvatureTables(domain.n, domain.h, float(sigma), tuple(u * scale for u in units))


def opposite_neighbors(E, cell):
    """Face neighbours of ``cell`` (in the lattice) with the opposite phase."""
    dom = E.domain
    cell = np.asarray(cell, dtype=int)
    out = []
    for ax in range(dom.n):
        for step in (1, -1):
            nb = cell.copy()
            nb[ax] += step
            if 0 <= nb[ax] < 2 * dom.M and E.phase[tuple(nb)] != E.phase[tuple(cell)]:
                out.append((ax, step, tuple(nb)))
    return out


def face_curvature(E, cell, axis, step, ctabs, tails):
    """``kappa_sigma`` at the midpoint of the face between ``cell`` and its neighbour.

    The lattice sum pairs each cell with its reflection through the face
    point, so the singular contributions cancel exactly on flat pieces.
    """
    dom = E.domain
    x = np.asarray(cell, dtype=int)
    y = x.copy()
    y[axis] += step
    V = ctabs.per_axis[axis]
    if step < 0:
        # tabulated for the face at +1/2; reverse the offsets along the axis
        V = np.ascontiguousarray(np.flip(V, axis=1 if dom.n == 1 else axis))
    phase2 = _shape2(dom, E.phase)
    if dom.n == 1:
        x2, y2 = (0, x[0]), (0, y[0])
    else:
        x2, y2 = tuple(x), tuple(y)
    lattice = _kernels.kappa_pairs(phase2, V, x2, y2)
    face = (dom.centers[tuple(x)] + dom.centers[tuple(y)]) / 2.0
    tin, tout = tails.point_tails(face[None, :])
    return float(lattice + tout[0] - tin[0])


def frac_curvature(E, cell, table=None, ctabs=None, tails=None):
    """Fractional curvature at a discrete boundary cell.

    Averages the face-point values over the cell's opposite-phase neighbours.
    Positive where ``E`` is locally convex.
    """
    sigma = table.sigma if table is not None else ctabs.sigma
    dom = E.domain
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    nbs = opposite_neighbors(E, cell)
    if not nbs:
        raise ValueError(f"cell {cell} is not on the discrete boundary of E")
    ctabs = ctabs or build_curvature_tables(dom, sigma, table.depth if table else 4)
    tails = tails or build_tail_model(dom, E.exterior, sigma)
    vals = [face_curvature(E, cell, ax, st, ctabs, tails) for ax, st, _ in nbs]
    return float(np.mean(vals))


def update_local_field(field, E_before, table, cell):
    """In-place update of :func:`local_field` after flipping ``cell`` of ``E_before``."""
    dom = E_before.domain
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    old = float(E_before.phase[cell])
    f2 = _shape2(dom, field)
    cell2 = (0, cell[0]) if dom.n == 1 else cell
    _kernels.update_field(f2, _shape2(dom, dom.omega_mask), table.as_2d(), cell2, old)
    return field
