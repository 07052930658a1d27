"""Regularity diagnostics on computed configurations.

Every function here is read-only: it never mutates the configuration it is
handed (checked through :meth:`Configuration.fingerprint` in the tests).
Radii are measured from a free-boundary point ``center`` (a face point of
the discrete interface, see :func:`free_boundary_point`).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import UnderResolvedError, measure, rescale
from .harmonic import faces
from .kernel import build_curvature_tables, build_tail_model, face_curvature, opposite_neighbors
from .extension import weighted_energy


class DegenerateFitError(ValueError):
    pass


# -- helpers -----------------------------------------------------------------------

def _center(domain, center):
    return np.zeros(domain.n) if center is None else np.asarray(center, dtype=float).reshape(domain.n)


def _check_radius(domain, r, center, what="radius"):
    if r < 4 * domain.h - 1e-12:
        raise UnderResolvedError(f"{what} {r:g} is below 4h = {4 * domain.h:g}")
    if r + np.linalg.norm(center) > domain.radius + 1e-12:
        raise ValueError(f"{what} {r:g} about {tuple(center)} leaves Omega")


def interface_faces(E, within_omega=True):
    """Face points between opposite-phase cells, as ``(points, cell_a, cell_b, axis)``."""
    dom = E.domain
    p = E.phase
    act = dom.omega_mask
    pts, ca, cb, axes = [], [], [], []
    for ax in range(dom.n):
        lo = [slice(None)] * dom.n
        hi = [slice(None)] * dom.n
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        diff = p[lo] != p[hi]
        if within_omega:
            diff &= act[lo] | act[hi]
        idx = np.argwhere(diff)
        if not len(idx):
            continue
        nxt = idx.copy()
        nxt[:, ax] += 1
        pts.append((dom.centers[tuple(idx.T)] + dom.centers[tuple(nxt.T)]) / 2)
        ca.append(idx)
        cb.append(nxt)
        axes.append(np.full(len(idx), ax))
    if not pts:
        empty = np.zeros((0, dom.n))
        return empty, empty.astype(int), empty.astype(int), np.zeros(0, dtype=int)
    return np.concatenate(pts), np.concatenate(ca), np.concatenate(cb), np.concatenate(axes)


def free_boundary_point(E, near=None):
    """Interface face point of ``E`` in Omega closest to ``near`` (default 0)."""
    pts = interface_faces(E)[0]
    if not len(pts):
        raise ValueError("E has no discrete boundary in Omega")
    near = _center(E.domain, near)
    return pts[np.argmin(np.linalg.norm(pts - near, axis=1))]


def on_boundary(E, center, tol=None):
    """Whether ``center`` lies within ``tol`` (default h/2) of an interface face point."""
    pts = interface_faces(E, within_omega=False)[0]
    tol = E.domain.h / 2 + 1e-12 if tol is None else tol
    return bool(len(pts)) and float(np.min(np.linalg.norm(pts - center, axis=1))) <= tol


def _require_boundary(E, center):
    if not on_boundary(E, center):
        raise ValueError(f"point {tuple(np.round(center, 12))} is not on the discrete boundary of E")


def _face_energy(v, domain):
    """Per-face ``(dv)^2 h^{n-2}`` with face midpoints."""
    a, b = faces(domain)
    vf = np.asarray(v, dtype=float).ravel()
    c = domain.centers.reshape(-1, domain.n)
    return (vf[a] - vf[b]) ** 2 * domain.h ** (domain.n - 2), (c[a] + c[b]) / 2


def ball_dirichlet(v, domain, r, center=None, weight=None):
    """``int_{B_r} w |grad v|^2`` as a face sum.

    A face counts with the fraction ``clip((r - d)/h + 1/2, 0, 1)`` of its
    radial extent inside the ball, ``d`` being the midpoint distance, so
    faces lying on the sphere are shared half and half.
    """
    x0 = _center(domain, center)
    e, mid = _face_energy(v, domain)
    d = np.linalg.norm(mid - x0, axis=1)
    frac = np.clip((r - d) / domain.h + 0.5, 0.0, 1.0)
    w = 1.0 if weight is None else weight(d)
    return float(np.sum(frac * e * w))


def shell_integral(f, domain, r, center=None):
    """``int_{dB_r} f dH^{n-1}`` with hat weights in the distance to the sphere.

    Cells within ``h`` of the sphere contribute ``f h^n max(0, 1 - |d - r|/h)/h``;
    in 1D this is linear interpolation of ``f`` at the two points ``x0 +- r``.
    """
    x0 = _center(domain, center)
    d = np.linalg.norm(domain.centers - x0, axis=-1)
    w = np.clip(1.0 - np.abs(d - r) / domain.h, 0.0, None)
    return float(np.sum(w * np.asarray(f)) * domain.h ** (domain.n - 1))


# -- monotonicity functionals --------------------------------------------------------

def weiss_phi(config, U, r, c_hat, center=None):
    """Weiss energy at radius ``r``: scaled interior plus extension energy minus the shell term."""
    dom = config.domain
    sigma = config.sigma
    n = dom.n
    x0 = _center(dom, center)
    _check_radius(dom, r, x0)
    interior = ball_dirichlet(config.u_plus, dom, r, x0) + ball_dirichlet(config.u_minus, dom, r, x0)
    ext = weighted_energy(U, r, x0) if c_hat else 0.0
    shell = shell_integral(config.u ** 2, dom, r, x0)
    return r ** (sigma - n) * (interior + c_hat * ext) - (1 - sigma / 2) * r ** (sigma - n - 1) * shell


def acf_psi(u_plus, u_minus, r, domain, center=None):
    """ACF product ``r^-4 int_{B_r} |grad u+|^2 / |x|^{n-2} * int_{B_r} |grad u-|^2 / |x|^{n-2}``.

    In 1D the weight is ``|x|``.
    """
    x0 = _center(domain, center)
    _check_radius(domain, r, x0)
    if domain.n == 2:
        weight = None
    else:
        def weight(d):
            return d

    ip = ball_dirichlet(u_plus, domain, r, x0, weight)
    im = ball_dirichlet(u_minus, domain, r, x0, weight)
    return ip * im / r ** 4


# -- Hölder / density -----------------------------------------------------------------

def density_report(E, radii, center=None):
    """``min(|B_r ∩ E|, |B_r ∩ E^c|) / |B_r|`` per radius (cell counting)."""
    dom = E.domain
    x0 = _center(dom, center)
    _require_boundary(E, x0)
    out = []
    for r in radii:
        a, b = measure(E, x0, r)
        out.append(min(a, b) / (a + b))
    return np.array(out)


@dataclass(frozen=True)
class PowerFit:
    exponent: float
    constant: float
    residual: float  # rms of the log-log fit
    flat: bool = False

    def describe(self):
        if self.flat:
            return "exactly flat"
        return f"exponent {self.exponent:.4f} (C = {self.constant:.4g}, rms {self.residual:.2e})"


def _power_fit(radii, vals):
    radii = np.asarray(radii, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if len(radii) < 2:
        raise DegenerateFitError("a power fit needs at least two radii")
    if np.any(vals <= 0):
        return PowerFit(math.inf, 0.0, 0.0, flat=True)
    lx, ly = np.log(radii), np.log(vals)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return PowerFit(float(coef[0]), float(math.exp(coef[1])), res)


def _ball_sup(f, domain, r, x0):
    """``sup`` over the closed ball of the multilinear interpolant of ``f``.

    Cell values inside the ball plus interpolated values on the sphere; a
    linear ``f`` is handled exactly.
    """
    d = np.linalg.norm(domain.centers - x0, axis=-1)
    sel = (d < r) & (domain.omega_mask | domain.layer_mask)
    best = float(np.max(f[sel])) if sel.any() else 0.0
    axis = (np.arange(-domain.M, domain.M) + 0.5) * domain.h
    interp = RegularGridInterpolator((axis,) * domain.n, f, bounds_error=False, fill_value=None)
    if domain.n == 1:
        pts = np.array([[x0[0] - r], [x0[0] + r]])
    else:
        count = max(16, int(math.ceil(4 * math.pi * r / domain.h)))
        t = 2 * math.pi * np.arange(count) / count
        pts = x0 + r * np.stack([np.cos(t), np.sin(t)], axis=1)
    return max(best, float(np.max(interp(pts))))


def dyadic_radii(h, r_max=0.5, factor=8):
    """Dyadic radii ``r_max 2^-k`` down to ``factor h``."""
    out = []
    r = r_max
    while r >= factor * h - 1e-12:
        out.append(r)
        r /= 2
    return out[::-1]


def holder_fit(u, radii, domain, center=None):
    """Fit ``sup_{B_r} |u| ~ C r^alpha``; an identically zero ``u`` is reported flat."""
    x0 = _center(domain, center)
    for r in radii:
        _check_radius(domain, r, x0)
    sups = [_ball_sup(np.abs(u), domain, r, x0) for r in radii]
    return _power_fit(radii, sups)


@dataclass(frozen=True)
class LambdaReport:
    radii: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    fit: PowerFit

    @property
    def product(self):
        return self.plus * self.minus


def lambda_product(u_plus, u_minus, radii, domain, sigma, center=None):
    """``lambda_r^+- = r^{sigma/2-1} sup_{B_r} u^+-``, their product and its decay exponent."""
    return _lambda_values(u_plus, u_minus, radii, domain, sigma, center)


def _lambda_values(u_plus, u_minus, radii, domain, sigma, center, fit=None):
    x0 = _center(domain, center)
    radii = np.asarray(radii, dtype=float)
    for r in radii:
        _check_radius(domain, r, x0)
    scale = radii ** (sigma / 2 - 1)
    lp = scale * np.array([_ball_sup(u_plus, domain, r, x0) for r in radii])
    lm = scale * np.array([_ball_sup(u_minus, domain, r, x0) for r in radii])
    return LambdaReport(radii, lp, lm, fit or _power_fit(radii, lp * lm))


# -- Euler-Lagrange residual ------------------------------------------------------------

def flat_screen(E, cell, reach=3):
    """At most one phase change along each axis within ``reach`` cells of ``cell``."""
    dom = E.domain
    cell = np.asarray(cell, dtype=int)
    for ax in range(dom.n):
        lo = max(cell[ax] - reach, 0)
        hi = min(cell[ax] + reach + 1, 2 * dom.M)
        idx = [slice(c, c + 1) for c in cell]
        idx[ax] = slice(lo, hi)
        line = E.phase[tuple(idx)].ravel()
        if np.count_nonzero(np.diff(line)) > 1:
            return False
    return True


def _one_sided_slope(f, start, axis, step, h, usable):
    """Slope of the least-squares line through three cells marching from ``start``."""
    vals = []
    for k in range(3):
        c = list(start)
        c[axis] += step * k
        c = tuple(c)
        if not (0 <= c[axis] < f.shape[axis]) or not usable[c]:
            return None
        vals.append(f[c])
    # equally spaced abscissae 0, 1, 2: slope is (f2 - f0) / 2
    return step * (vals[2] - vals[0]) / (2 * h)


def _tangential(f, c, axis, h, usable):
    c = np.asarray(c)
    total = 0.0
    for ax in range(f.ndim):
        if ax == axis:
            continue
        up, dn = c.copy(), c.copy()
        up[ax] += 1
        dn[ax] -= 1
        if not (usable[tuple(up)] and usable[tuple(dn)]):
            return None
        total += ((f[tuple(up)] - f[tuple(dn)]) / (2 * h)) ** 2
    return total


@dataclass(frozen=True)
class ELCell:
    cell: tuple
    kappa: float
    grad_plus_sq: float
    grad_minus_sq: float

    @property
    def residual(self):
        return self.kappa - (self.grad_plus_sq - self.grad_minus_sq)


@dataclass(frozen=True)
class ELReport:
    cells: list
    skipped: int

    @property
    def max_abs(self):
        return max((abs(c.residual) for c in self.cells), default=0.0)


def el_residual(config, table=None, ctabs=None, tails=None, region=None, reach=3):
    """``kappa_sigma - (|grad u+|^2 - |grad u-|^2)`` at flat discrete boundary cells.

    Each boundary cell in Omega (optionally restricted by the boolean mask
    ``region``) is paired with its opposite-phase faces.  At every face the
    normal derivatives come from three-cell one-sided fits on each phase's
    side; tangential parts are central differences at the adjacent cell.
    Cells failing the flatness screen or lacking stencil cells are skipped.
    """
    E = config.E
    dom = E.domain
    sigma = config.sigma
    ctabs = ctabs or build_curvature_tables(dom, sigma, table.depth if table is not None else 4)
    tails = tails or build_tail_model(dom, E.exterior, sigma)
    usable = dom.omega_mask | dom.layer_mask
    cand = E.boundary_mask() & dom.omega_mask
    if region is not None:
        cand &= region
    out, skipped = [], 0
    for cell in map(tuple, np.argwhere(cand)):
        if not flat_screen(E, cell, reach):
            skipped += 1
            continue
        ks, gps, gms = [], [], []
        ok = True
        for ax, step, nb in opposite_neighbors(E, cell):
            if E.phase[cell] > 0:
                pin, pout = cell, nb
            else:
                pin, pout = nb, cell
            away = 1 if pin[ax] > pout[ax] else -1
            sp = _one_sided_slope(config.u_plus, pin, ax, away, dom.h, usable)
            sm = _one_sided_slope(config.u_minus, pout, ax, -away, dom.h, usable)
            tp = _tangential(config.u_plus, pin, ax, dom.h, usable)
            tm = _tangential(config.u_minus, pout, ax, dom.h, usable)
            if None in (sp, sm, tp, tm):
                ok = False
                break
            ks.append(face_curvature(E, cell, ax, step, ctabs, tails))
            gps.append(sp * sp + tp)
            gms.append(sm * sm + tm)
        if not ok or not ks:
            skipped += 1
            continue
        out.append(ELCell(tuple(int(i) - dom.M for i in cell), float(np.mean(ks)),
                          float(np.mean(gps)), float(np.mean(gms))))
    return ELReport(out, skipped)


# -- blow-ups and flatness ------------------------------------------------------------------

def blowup_sequence(config, radii, center=None):
    """Homogeneity defects between consecutive rescalings ``u_{r_k}``.

    ``radii`` is taken in decreasing order; entry ``k`` of the result compares
    ``r_k`` with ``r_{k+1}`` on the unit-ball lattice.
    """
    dom = config.domain
    x0 = _center(dom, center)
    _require_boundary(config.E, x0)
    radii = sorted((float(r) for r in radii), reverse=True)
    scaled = [rescale(config, r, x0) for r in radii]
    out = []
    for a, b in zip(scaled, scaled[1:]):
        om = a.domain.omega_mask
        ua, ub = a.u[om], b.u[om]
        top = float(np.max(np.abs(ua)))
        out.append(0.0 if top == 0 else float(np.max(np.abs(ub - ua)) / top))
    return np.array(out)


def flatness(E, r, direction, center=None):
    """Width ``max - min`` of ``x . e`` over interface face points in ``B_r``."""
    dom = E.domain
    x0 = _center(dom, center)
    e = np.asarray(direction, dtype=float).reshape(dom.n)
    if not np.isclose(np.linalg.norm(e), 1.0):
        raise ValueError("direction must be a unit vector")
    if r < 4 * dom.h - 1e-12:
        raise UnderResolvedError(f"radius {r:g} is below 4h")
    pts = interface_faces(E, within_omega=False)[0]
    pts = pts[np.linalg.norm(pts - x0, axis=1) < r]
    if not len(pts):
        raise ValueError("no interface points in the ball")
    proj = (pts - x0) @ e
    return float(proj.max() - proj.min())


def best_flatness(E, r, center=None, count=180):
    """Minimal width over a fan of ``count`` directions; returns ``(width, direction)``."""
    dom = E.domain
    if dom.n == 1:
        return flatness(E, r, [1.0], center), np.array([1.0])
    best = (math.inf, None)
    for t in np.arange(count) * math.pi / count:
        e = np.array([math.cos(t), math.sin(t)])
        w = flatness(E, r, e, center)
        if w < best[0]:
            best = (w, e)
    return best


# -- full report --------------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    radii: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    density: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    flat_width: np.ndarray
    holder: PowerFit
    lambda_fit: PowerFit
    el: ELReport
    blowup_defect: np.ndarray
    center: np.ndarray
    c_hat: float
    notes: list = field(default_factory=list)

    @property
    def lambda_prod(self):
        return self.lambda_plus * self.lambda_minus


def diagnose(config, radii=None, c_hat=None, U=None, table=None, center=None, extension_refine=4):
    """Run every diagnostic on ``config`` over a shared list of radii.

    ``c_hat`` weights the extension energy in the Weiss functional; when it
    is ``None`` the Weiss column is left as NaN.  ``U`` is computed from
    ``config.E`` if needed.
    """
    from .extension import poisson_extension

    dom = config.domain
    x0 = free_boundary_point(config.E) if center is None else _center(dom, center)
    if radii is None:
        radii = dyadic_radii(dom.h, min(0.5, dom.radius - np.linalg.norm(x0)))
    radii = np.asarray(sorted(radii), dtype=float)
    notes = []
    if c_hat is not None and U is None:
        U = poisson_extension(config.E, config.sigma, refine=extension_refine)
    phi = np.array([weiss_phi(config, U, r, c_hat, x0) if c_hat is not None else math.nan for r in radii])
    psi = np.array([acf_psi(config.u_plus, config.u_minus, r, dom, x0) for r in radii])
    dens = density_report(config.E, radii, x0)
    try:
        hol = holder_fit(config.u, radii, dom, x0)
        lam = lambda_product(config.u_plus, config.u_minus, radii, dom, config.sigma, x0)
    except DegenerateFitError as exc:
        notes.append(f"power fits skipped: {exc}")
        nofit = PowerFit(math.nan, math.nan, math.nan)
        hol = nofit
        lam = _lambda_values(config.u_plus, config.u_minus, radii, dom, config.sigma, x0, nofit)
    widths = np.array([best_flatness(config.E, r, x0)[0] for r in radii])
    el = el_residual(config, table)
    unit = [r for r in radii[::-1] if 2 * r / dom.h >= 8 and r <= 1]
    try:
        defect = blowup_sequence(config, unit, x0) if len(unit) > 1 else np.zeros(0)
    except (ValueError, UnderResolvedError) as exc:
        defect = np.zeros(0)
        notes.append(f"blow-up skipped: {exc}")
    if hol.flat:
        notes.append("holder fit: exactly flat")
    return DiagnosticsReport(radii, phi, psi, dens, lam.plus, lam.minus, widths, hol, lam.fit, el,
                             defect, x0, math.nan if c_hat is None else float(c_hat), notes)


REPORT_COLUMNS = ("r", "phi", "psi", "density_min", "lambda_prod", "flat_width")


def _f(x):
    return repr(float(x))


def write_report_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for k, r in enumerate(report.radii):
            w.writerow([_f(r), _f(report.phi[k]), _f(report.psi[k]), _f(report.density[k]),
                        _f(report.lambda_prod[k]), _f(report.flat_width[k])])


def write_cells_csv(el, n, path):
    head = ["ix"] if n == 1 else ["ix", "iy"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head + ["kappa", "grad_plus_sq", "grad_minus_sq", "residual"])
        for c in el.cells:
            w.writerow([str(i) for i in c.cell]
                       + [_f(c.kappa), _f(c.grad_plus_sq), _f(c.grad_minus_sq), _f(c.residual)])
