"""Half-space extension of ``chi_E - chi_{E^c}`` and its weighted energy.

``U(., z) = (chi_E - chi_{E^c}) * P(., z)`` with the Poisson kernel
``P(x, z) = c z^sigma / (|x|^2 + z^2)^{(n+sigma)/2}``.  Fields live on the
cell centers of a (possibly refined) copy of the lattice restricted to a
window around Omega, times graded ``z`` levels with ``z_0 = 0`` holding the
trace.  The weighted Dirichlet form is a face sum: horizontal faces carry
``z^{1-sigma}`` times the dual ``z`` width; vertical faces carry the exact
harmonic average ``sigma / (z_b^sigma - z_a^sigma)`` of the weight over
the segment, which stays finite at the trace.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal, sparse, special
from scipy.sparse import linalg as spla

from .grid import Exterior, IndicatorSet, build_domain
from .kernel import _exterior_intervals_1d, _point_tail_2d, build_weight_table, per_sigma
from .quadrature import gauss_legendre01


class NormalizationError(RuntimeError):
    pass


class SpreadError(RuntimeError):
    """Calibration estimates disagree by more than the allowed spread."""


def c_tilde(n, sigma):
    """Normalising constant of ``P``: ``Gamma((n+s)/2) / (pi^{n/2} Gamma(s/2))``."""
    return math.gamma(0.5 * (n + sigma)) / (math.pi ** (0.5 * n) * math.gamma(0.5 * sigma))


def kernel_mass(n, sigma):
    """``int_{R^n} P(x, 1) dx`` by adaptive quadrature (should be 1)."""
    surf = 2.0 if n == 1 else 2.0 * math.pi
    # substitute s = tan(t) so the algebraic tail becomes a finite interval
    val, _ = integrate.quad(
        lambda t: math.tan(t) ** (n - 1) * math.cos(t) ** (n + sigma - 2), 0.0, 0.5 * math.pi, limit=200
    )
    return surf * c_tilde(n, sigma) * val


def check_normalization(n, sigma, tol=1e-4):
    mass = kernel_mass(n, sigma)
    if abs(mass - 1.0) > tol:
        raise NormalizationError(f"Poisson kernel mass {mass:.8f} differs from 1 by more than {tol:g}")
    return mass


def z_levels(h, radius, ratio=1.2, z_min=None, z_max=None):
    """Graded levels ``[0, z_min, z_min*ratio, ...]`` up to at least ``z_max``."""
    z_min = h / 4.0 if z_min is None else z_min
    z_max = 4.0 * radius if z_max is None else z_max
    count = int(math.ceil(math.log(z_max / z_min) / math.log(ratio))) + 1
    return np.concatenate([[0.0], z_min * ratio ** np.arange(count)])


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """``U`` on window nodes ``x`` (cell centers, spacing ``hx``) times levels ``z``.

    ``values[..., 0]`` is the trace; ``nodes`` are array indices into the
    refined lattice of ``E.domain``.
    """

    n: int
    sigma: float
    hx: float
    x: np.ndarray = field(repr=False)  # (*window, n) coordinates
    z: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # (*window, len(z))

    @property
    def window_shape(self):
        return self.values.shape[:-1]

    def with_values(self, values):
        return ExtensionField(self.n, self.sigma, self.hx, self.x, self.z, values)


def _refined_phase(E, refine):
    ph = E.phase.astype(float)
    for ax in range(E.domain.n):
        ph = np.repeat(ph, refine, axis=ax)
    return ph


def _window(E, refine, margin_cells=2):
    """Refined-lattice index range covering Omega plus a margin."""
    dom = E.domain
    hx = dom.h / refine
    half = dom.radius + margin_cells * dom.h
    L = 2 * dom.M * refine
    k = np.arange(L)
    c = (k - dom.M * refine + 0.5) * hx
    keep = np.flatnonzero(np.abs(c) < half)
    return keep[0], keep[-1] + 1, c, hx


def _mass_1d(t0, t1, z, sigma):
    """``int_{t0}^{t1} P(t, z) dt`` in 1D (betainc closed form)."""

    def G(u):
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(np.isinf(u), 1.0, u * u / (1.0 + u * u))
        return 0.5 * np.sign(u) * special.betainc(0.5, 0.5 * sigma, w)

    return G(np.asarray(t1) / z) - G(np.asarray(t0) / z)


def _mass_table_2d(D, hx, z, sigma, m=20):
    """Cell masses ``int_{cell(delta)} P(x0 - y, z) dy`` for ``|delta_i| <= D``.

    The inner integral is the closed form in ``y2``; the outer one is
    Gauss-Legendre in ``y1`` with the central cell split at the peak.
    Computed on one quadrant and mirrored.
    """
    a = 0.5 * (1.0 + sigma)
    g, gw = gauss_legendre01(m)
    d = np.arange(0, D + 1, dtype=float)
    lo1 = np.maximum((d - 0.5) * hx, 0.0)
    hi1 = (d + 0.5) * hx
    mult = np.where(d == 0, 2.0, 1.0)
    nodes = lo1[:, None] + (hi1 - lo1)[:, None] * g[None, :]
    wts = ((hi1 - lo1) * mult)[:, None] * gw[None, :]
    A = np.sqrt(nodes ** 2 + z * z)
    edges = (np.arange(0, D + 2) - 0.5) * hx
    s = edges[None, None, :] / A[:, :, None]
    H = 0.5 * np.sign(s) * special.betainc(0.5, a, s * s / (1.0 + s * s))
    H *= special.beta(0.5, a) * A[:, :, None] ** (-1.0 - sigma)
    Q = np.einsum("im,imj->ij", wts, np.diff(H, axis=2))
    full = np.empty((2 * D + 1, 2 * D + 1))
    full[D:, D:] = Q
    full[:D, D:] = Q[:0:-1, :]
    full[:, :D] = full[:, :D:-1]
    return c_tilde(2, sigma) * z ** sigma * full


def _tails(E, points, z, sigma):
    """``(mass of P(x - ., z) over E0 beyond the box, total mass beyond the box)``."""
    dom = E.domain
    B = dom.half_width
    ext = E.exterior
    if dom.n == 1:
        x = points[:, 0]
        allv = _mass_1d(-np.inf, -B - x, z, sigma) + _mass_1d(B - x, np.inf, z, sigma)
        tin = np.zeros_like(x)
        for lo, hi in _exterior_intervals_1d(ext, B):
            tin += _mass_1d(lo - x, hi - x, z, sigma)
        return tin, allv
    ct = c_tilde(2, sigma)

    def g(t):
        return (t * t + z * z) ** (-0.5 * sigma) / sigma

    tin, tall = _point_tail_2d(points, B, sigma, ext, g=g, step=1.0 / 6.0)
    scale = ct * z ** sigma
    return tin * scale, tall * scale


def poisson_extension(E, sigma, z=None, refine=1, ratio=1.2):
    """Extension ``U = 2 (chi_E * P) - 1`` on the window around Omega."""
    dom = E.domain
    sigma = float(sigma)
    check_normalization(dom.n, sigma)
    lo, hi, c, hx = _window(E, refine)
    if z is None:
        z = z_levels(hx, dom.radius, ratio)
    z = np.asarray(z, dtype=float)
    if z[0] != 0.0 or np.any(np.diff(z) <= 0):
        raise ValueError("z levels must start at 0 and increase")
    if z[1] > hx * (1 + 1e-12):
        raise ValueError("the first z level must not exceed the spacing")
    ph = _refined_phase(E, refine)
    L = ph.shape[0]
    n = dom.n
    if n == 1:
        xs = c[lo:hi, None]
        shape = (hi - lo,)
    else:
        X, Y = np.meshgrid(c[lo:hi], c[lo:hi], indexing="ij")
        xs = np.stack([X, Y], axis=-1)
        shape = (hi - lo, hi - lo)
    U = np.zeros(shape + (len(z),))
    U[..., 0] = ph[(slice(lo, hi),) * n]
    D = L - 1
    pts = xs.reshape(-1, n)
    for k in range(1, len(z)):
        zk = z[k]
        if n == 1:
            d = np.arange(-D, D + 1, dtype=float)
            K = _mass_1d((d - 0.5) * hx, (d + 0.5) * hx, zk, sigma)
            conv = np.convolve(ph, K[::-1], mode="full")[D: D + L]
            inner = conv[lo:hi]
        else:
            K = _mass_table_2d(D, hx, zk, sigma)
            conv = signal.fftconvolve(ph, K[::-1, ::-1], mode="full")[D: D + L, D: D + L]
            inner = conv[lo:hi, lo:hi]
        tin, tall = _tails(E, pts, zk, sigma)
        U[..., k] = inner + (2.0 * tin - tall).reshape(shape)
    if np.max(np.abs(U)) > 1.0 + 1e-9:
        raise NormalizationError("extension exceeds 1 in magnitude; kernel masses are inconsistent")
    U = np.clip(U, -1.0, 1.0)
    return ExtensionField(n, sigma, hx, xs, z, U)


# -- weighted energy and constrained solve ----------------------------------------

def _region_mask(U, r, center=None):
    n = U.n
    x0 = np.zeros(n) if center is None else np.asarray(center, float)
    dx = U.x - x0
    rad2 = np.sum(dx * dx, axis=-1)[..., None] + U.z ** 2
    inside = rad2 < r * r
    inside[..., 0] = False
    return inside


def _check_region(U, r, center=None):
    x0 = np.zeros(U.n) if center is None else np.asarray(center, float)
    span_lo = U.x.reshape(-1, U.n).min(axis=0)
    span_hi = U.x.reshape(-1, U.n).max(axis=0)
    if np.any(x0 - r < span_lo + U.hx * 0.5) or np.any(x0 + r > span_hi - U.hx * 0.5) or r >= U.z[-1]:
        raise ValueError(f"half-ball of radius {r:g} exceeds the extension mesh")


def _face_lists(U, inside):
    """Faces touching ``inside`` as flat index pairs with conductances."""
    n = U.n
    z = U.z
    hx = U.hx
    shape = U.values.shape
    flat = np.arange(np.prod(shape)).reshape(shape)
    sigma = U.sigma
    dz = np.empty_like(z)
    dz[1:-1] = 0.5 * (z[2:] - z[:-2])
    dz[-1] = 0.5 * (z[-1] - z[-2])
    dz[0] = 0.0
    hweight = z ** (1.0 - sigma) * dz * hx ** (n - 1) / hx
    vcond = hx ** n * sigma / (z[1:] ** sigma - z[:-1] ** sigma)
    A, B, C = [], [], []
    for ax in range(n + 1):
        lo = [slice(None)] * (n + 1)
        hi = [slice(None)] * (n + 1)
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        keep = inside[lo] | inside[hi]
        if ax < n:
            cond = np.broadcast_to(hweight, inside[lo].shape)
        else:
            cond = np.broadcast_to(vcond, inside[lo].shape)
        keep = keep & (cond > 0)
        A.append(flat[lo][keep])
        B.append(flat[hi][keep])
        C.append(cond[keep])
    return np.concatenate(A), np.concatenate(B), np.concatenate(C)


def weighted_energy(U, r, center=None):
    """``int_{half-ball r} z^{1-sigma} |grad U|^2`` (no ``c_{n,sigma}`` prefactor)."""
    _check_region(U, r, center)
    inside = _region_mask(U, r, center)
    a, b, cond = _face_lists(U, inside)
    v = U.values.ravel()
    return float(np.sum(cond * (v[a] - v[b]) ** 2))


def constrained_extension_solve(trace, boundary, r, center=None, refine=None, tol=1e-10):
    """Minimise the weighted form in the half-ball with trace ``trace`` on
    ``{z = 0}`` and ``boundary`` values elsewhere outside the region."""
    U = boundary
    _check_region(U, r, center)
    inside = _region_mask(U, r, center)
    refine = int(round(trace.domain.h / U.hx)) if refine is None else refine
    lo, hi, _, _ = _window(trace, refine)
    ph = _refined_phase(trace, refine)[(slice(lo, hi),) * U.n]
    vals = U.values.copy()
    vals[..., 0] = ph
    a, b, cond = _face_lists(U, inside)
    free = inside.ravel()
    N = int(free.sum())
    pos = np.full(free.size, -1)
    pos[free] = np.arange(N)
    fa, fb = free[a], free[b]
    both = fa & fb
    diag = np.bincount(pos[a[fa]], weights=cond[fa], minlength=N) + np.bincount(
        pos[b[fb]], weights=cond[fb], minlength=N
    )
    rows = np.concatenate([pos[a[both]], pos[b[both]], np.arange(N)])
    cols = np.concatenate([pos[b[both]], pos[a[both]], np.arange(N)])
    data = np.concatenate([-cond[both], -cond[both], diag])
    M = sparse.csc_matrix((data, (rows, cols)), shape=(N, N))
    v = vals.ravel()
    rhs = np.zeros(N)
    m = fa & ~fb
    np.add.at(rhs, pos[a[m]], cond[m] * v[b[m]])
    m = fb & ~fa
    np.add.at(rhs, pos[b[m]], cond[m] * v[a[m]])
    x = spla.spsolve(M, rhs)
    res = np.linalg.norm(M @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if not res <= tol:
        raise RuntimeError(f"extension solve residual {res:.3e} above {tol:g}")
    v = v.copy()
    v[free] = x
    return U.with_values(v.reshape(U.values.shape))


# -- calibration of c_{n,sigma} --------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    c_hat: float
    estimates: tuple  # (label, lhs, rhs, ratio) per perturbation and radius
    spread: float  # (max - min) / mean of the ratios

    def ok(self, limit=0.05):
        return self.c_hat > 0 and self.spread <= limit


def analytic_constant(n, sigma):
    """Closed-form ``c_{n,sigma}`` from the fractional-Laplacian constants.

    Only used as a cross-check of the calibrated value.
    """
    s = 0.5 * sigma
    d_s = 2.0 ** (1 - 2 * s) * math.gamma(1 - s) / math.gamma(s)
    C = 4.0 ** s * math.gamma(0.5 * n + s) / (math.pi ** (0.5 * n) * abs(math.gamma(-s)))
    return 1.0 / (4.0 * d_s * C)


def _perturbations(n, dom):
    """Cells (lattice indices) of the two trace perturbations of ``{x_n > 0}``."""
    M = dom.M
    if n == 1:
        # a shifted interface does not change Per in 1D, so use islands of
        # E in E^c separated from the interface by one cell
        return {"one_cell": [(M - 3,)], "two_cell": [(M - 4,), (M - 3,)]}
    return {"one_cell": [(M, M - 1)], "two_by_one": [(M, M - 1), (M - 1, M - 1)]}


def calibrate_constant(n, sigma, h=1.0 / 16, radii=(1.0, 2.0), refine=None, ratio=1.2, limit=0.05,
                       raise_on_spread=True):
    """Estimate ``c_{n,sigma}`` from ``Per(F) - Per(E) = c (min E_F - min E_E)``.

    ``E`` is the half-space ``{x_n > 0}``; ``F`` adds a one-cell and a
    two-cell perturbation.  Both sides are computed on half-balls of each
    radius in ``radii``.
    """
    if refine is None:
        # the 1D estimates only settle below 5% spread at h/16
        refine = 16 if n == 1 else 4
    rows = []
    normal = [1.0] if n == 1 else [0.0, 1.0]
    for r in radii:
        dom = build_domain(n, r, h, 2 * r)
        E = IndicatorSet.from_exterior(dom, Exterior.half_space(normal, 0.0))
        table = build_weight_table(dom, sigma)
        per_E = per_sigma(E, table)
        U = poisson_extension(E, sigma, refine=refine, ratio=ratio)
        base = weighted_energy(constrained_extension_solve(E, U, r, refine=refine), r)
        for label, cells in _perturbations(n, dom).items():
            ph = E.phase.copy()
            for c in cells:
                ph[c] = 1
            F = E.with_phase(ph)
            lhs = per_sigma(F, table) - per_E
            V = constrained_extension_solve(F, U, r, refine=refine)
            rhs = weighted_energy(V, r) - base
            rows.append((f"{label}@r={r:g}", lhs, rhs, lhs / rhs))
    ratios = np.array([row[3] for row in rows])
    c_hat = float(np.mean(ratios))
    spread = float((ratios.max() - ratios.min()) / abs(c_hat))
    result = CalibrationResult(c_hat, tuple(rows), spread)
    if raise_on_spread and not result.ok(limit):
        raise SpreadError(f"calibration spread {spread:.3%} exceeds {limit:.0%}; refine the mesh")
    return result


def write_extension_csv(U, path):
    """CSV ``x [y] z U`` for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "z", "U"] if U.n == 1 else ["x", "y", "z", "U"])
        pts = U.x.reshape(-1, U.n)
        vals = U.values.reshape(-1, len(U.z))
        for p, row in zip(pts, vals):
            for zk, v in zip(U.z, row):
                w.writerow([f"{c:.10g}" for c in p] + [f"{zk:.10g}", f"{v:.12g}"])
