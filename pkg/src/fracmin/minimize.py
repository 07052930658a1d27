"""Descent on admissible pairs ``(u, E)``.

Flips are proposed with the first-order Dirichlet estimate (the limit of
the energy change per unit area when a thin set is added to ``E``) plus the
exact fractional-perimeter delta.  After every sweep both replacements are
re-solved and the sweep is kept only if the recomputed total decreased.
An optional final pass checks flips one at a time with exact re-solves.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Configuration, EnergyBreakdown, IndicatorSet
from .harmonic import config_dirichlet, replacement, two_phase_replacement
from .kernel import (
    build_tail_model,
    build_weight_table,
    local_field,
    per_sigma_terms,
    update_local_field,
)

SCOPES = ("boundary_only", "boundary_band")


@dataclass(frozen=True)
class SearchParams:
    max_sweeps: int = 100
    flip_scope: str = "boundary_band"
    band: int = 2
    T0: float = 0.0
    decay: float = 0.9
    rng_seed: int = 0
    patience: int = 2
    resolve_every: int = 1
    polish: bool = True
    max_polish_passes: int = 200
    exact_tol: float = 1e-9

    def __post_init__(self):
        if self.flip_scope not in SCOPES:
            raise ValueError(f"flip_scope must be one of {SCOPES}")
        if self.band < 1:
            raise ValueError("band must be >= 1")
        if self.T0 < 0:
            raise ValueError("initial temperature must be >= 0")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.max_sweeps < 1 or self.patience < 1 or self.resolve_every < 1:
            raise ValueError("max_sweeps, patience and resolve_every must be positive")

    @property
    def width(self):
        return 1 if self.flip_scope == "boundary_only" else self.band


@dataclass(eq=False)
class Problem:
    """Fixed data of a minimisation: lattice, sigma, boundary values, caches."""

    domain: object
    sigma: float
    phi: np.ndarray
    exterior: object
    table: object
    tails: object
    tol: float = 1e-10

    def evaluate(self, E, x0=None):
        """Replacement-consistent configuration for ``E`` with its energy."""
        up, um, _ = two_phase_replacement(self.phi, E, self.tol, x0)
        cfg = Configuration(E, self.sigma, self.phi, up, um)
        cfg.breakdown = total_energy(cfg, self.table, self.tails)
        return cfg


def make_problem(domain, sigma, phi, exterior, quadrature_depth=4, tol=1e-10, table=None):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != domain.shape:
        raise ValueError("boundary data must be a lattice array")
    table = table or build_weight_table(domain, sigma, quadrature_depth)
    tails = build_tail_model(domain, exterior, sigma)
    return Problem(domain, float(sigma), np.where(domain.layer_mask, phi, 0.0), exterior, table, tails, tol)


def sample_boundary(domain, func):
    """Boundary data array: ``func`` evaluated at boundary-layer cell centers."""
    vals = np.zeros(domain.shape)
    pts = domain.centers[domain.layer_mask]
    vals[domain.layer_mask] = np.asarray(func(pts), dtype=float)
    return vals


def total_energy(config, table, tails=None):
    """Authoritative energy ``D(u+) + D(u-) + Per_sigma(E, Omega)`` from scratch."""
    dom = config.domain
    per = per_sigma_terms(config.E, table, tails)
    dirichlet = config_dirichlet(config.u_plus, config.u_minus, dom)
    return EnergyBreakdown(dirichlet, per.total, per.interior, per.exterior)


def flip_scope(E, width):
    """Omega cells within ``width - 1`` face steps of the discrete boundary of ``E``."""
    dom = E.domain
    mask = E.boundary_mask()
    for _ in range(width - 1):
        grown = mask.copy()
        for ax in range(dom.n):
            grown |= np.roll(mask, 1, axis=ax) | np.roll(mask, -1, axis=ax)
        mask = grown
    return mask & dom.omega_mask


def _grad_sq(f, cell, h):
    """Squared gradient at ``cell`` from the larger one-sided difference per axis."""
    total = 0.0
    for ax in range(f.ndim):
        up = list(cell)
        dn = list(cell)
        up[ax] += 1
        dn[ax] -= 1
        c = f[cell]
        g = max(abs(f[tuple(up)] - c), abs(c - f[tuple(dn)])) / h
        total += g * g
    return total


def _dirichlet_est(phase, up, um, cell, dom):
    s = int(phase[cell])
    return s * dom.cell_volume * (_grad_sq(up, cell, dom.h) - _grad_sq(um, cell, dom.h))


def dirichlet_estimate(config, cell):
    """First-order change of ``D`` when ``cell`` switches phase.

    Adding a thin set to ``E`` changes the Dirichlet energy by
    ``|A| (|grad u-|^2 - |grad u+|^2)`` to first order; removing one flips
    the sign.
    """
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    return _dirichlet_est(config.E.phase, config.u_plus, config.u_minus, cell, config.domain)


def propose_flip(config, cell, table, field=None, scope=None):
    """Estimated ``Delta J`` for flipping ``cell`` (an estimate, never authoritative)."""
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if scope is not None and not scope[cell]:
        raise ValueError(f"cell {cell} is outside the flip scope")
    if not config.domain.omega_mask[cell]:
        raise ValueError("only Omega cells can be flipped")
    if field is None:
        field = local_field(config.E, table)
    dper = float(config.E.phase[cell] * field[cell])
    return dper + dirichlet_estimate(config, cell)


def exact_delta(problem, config, cell, field=None):
    """Exact ``Delta J`` and the flipped configuration (two re-solves)."""
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    E2 = config.E.flipped(cell)
    new = problem.evaluate(E2, x0=(config.u_plus, config.u_minus))
    return new.breakdown.total - config.breakdown.total, new


@dataclass
class SweepResult:
    config: Configuration
    accepted: int
    committed: bool
    threshold: float
    delta: float


def sweep(config, params, problem, rng, threshold=1e-12, temperature=0.0):
    """One proposal pass over the flip scope followed by the authoritative gate."""
    E = config.E
    dom = E.domain
    scope = flip_scope(E, params.width)
    cells = [tuple(c) for c in np.argwhere(scope)]
    order = rng.permutation(len(cells)) if cells else []
    field = local_field(E, problem.table, problem.tails)
    phase = E.phase.copy()
    accepted = []
    for _ in range(params.resolve_every):
        for k in order:
            cell = cells[k]
            est = float(phase[cell] * field[cell]) + _dirichlet_est(
                phase, config.u_plus, config.u_minus, cell, dom
            )
            take = est < -threshold
            if not take and temperature > 0 and est > -threshold:
                take = rng.random() < math.exp(-max(est, 0.0) / temperature)
            if take:
                update_local_field(field, IndicatorSet(dom, phase, E.exterior), problem.table, cell)
                phase[cell] = -phase[cell]
                accepted.append(est)
    if not accepted:
        return SweepResult(config, 0, False, threshold, 0.0)
    newE = E.with_phase(phase)
    new = problem.evaluate(newE, x0=(config.u_plus, config.u_minus))
    delta = new.breakdown.total - config.breakdown.total
    tiny = 1e-12 * max(1.0, abs(config.breakdown.total))
    if delta < -tiny:
        return SweepResult(new, len(accepted), True, threshold, delta)
    if temperature > 0 and rng.random() < math.exp(-delta / temperature):
        return SweepResult(new, len(accepted), True, threshold, delta)
    tightened = max(2.0 * threshold, 0.5 * max(abs(a) for a in accepted))
    return SweepResult(config, len(accepted), False, tightened, delta)


def polish(config, params, problem, rng, history=None, start=0):
    """Exact single-flip descent until no flip in scope lowers ``J``."""
    sweep_no = start
    for _ in range(params.max_polish_passes):
        scope = flip_scope(config.E, params.width)
        cells = [tuple(c) for c in np.argwhere(scope)]
        improved = 0
        for k in rng.permutation(len(cells)):
            cell = cells[k]
            delta, new = exact_delta(problem, config, cell)
            if delta < -params.exact_tol:
                config = new
                improved += 1
        sweep_no += 1
        if history is not None:
            history.append(_row(sweep_no, config, improved, improved > 0))
        if not improved:
            return config, True, sweep_no
    return config, False, sweep_no


def _row(sweep_no, config, flips, committed):
    b = config.breakdown
    return {
        "sweep": sweep_no,
        "dirichlet": b.dirichlet,
        "per_sigma": b.per_sigma,
        "total": b.total,
        "flips_accepted": flips,
        "committed": int(bool(committed)),
    }


def initial_set(problem):
    """``E = {v > 0}`` for the unconstrained harmonic extension ``v`` of ``phi``."""
    dom = problem.domain
    v = replacement(dom, problem.phi, np.zeros(dom.shape, dtype=bool), problem.tol)
    ext = problem.exterior.contains(dom.centers)
    inside = np.where(v > 0, True, np.where(v < 0, False, ext))
    return IndicatorSet.from_exterior(dom, problem.exterior, inside=inside & dom.omega_mask | (~dom.omega_mask & ext))


@dataclass
class MinimizeResult:
    config: Configuration
    history: list = field(default_factory=list)
    seed: int = 0
    converged: bool = True

    @property
    def flagged(self):
        return not self.converged


def minimize(phi, E0, domain, sigma, params=None, table=None, initial=None, problem=None):
    """Minimise ``J = D + Per_sigma`` starting from the sign of the harmonic extension.

    ``E0`` is the exterior descriptor; ``initial`` optionally overrides the
    starting set (an :class:`IndicatorSet` or an Omega boolean array).
    """
    params = params or SearchParams()
    problem = problem or make_problem(domain, sigma, phi, E0, table=table)
    rng = np.random.default_rng(params.rng_seed)
    if initial is None:
        E = initial_set(problem)
    elif isinstance(initial, IndicatorSet):
        E = initial
    else:
        E = IndicatorSet.from_exterior(domain, E0, inside=np.asarray(initial, dtype=bool))
    config = problem.evaluate(E)
    history = [_row(0, config, 0, True)]
    threshold = 1e-12
    idle = 0
    converged = False
    sweep_no = 0
    for sweep_no in range(1, params.max_sweeps + 1):
        T = params.T0 * params.decay ** (sweep_no - 1)
        res = sweep(config, params, problem, rng, threshold, T)
        config = res.config
        threshold = res.threshold
        history.append(_row(sweep_no, config, res.accepted, res.committed))
        if res.committed:
            idle = 0
        else:
            idle += 1
        if res.accepted == 0 or idle >= params.patience:
            converged = True
            break
    if params.polish:
        config, ok, sweep_no = polish(config, params, problem, rng, history, sweep_no)
        converged = ok
    return MinimizeResult(config, history, params.rng_seed, converged)


HISTORY_COLUMNS = ("sweep", "dirichlet", "per_sigma", "total", "flips_accepted", "committed")


def fmt(x):
    """Deterministic text for floats in CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([fmt(row[c]) for c in HISTORY_COLUMNS])


def scan_single_interface_1d(problem, normal=1):
    """Exhaustive scan over 1D sets ``{x > a}`` (or ``{x < a}``) inside Omega.

    Returns ``(positions, totals)`` with ``a`` at the lattice faces.
    """
    dom = problem.domain
    if dom.n != 1:
        raise ValueError("the interface scan is one-dimensional")
    x = dom.centers[..., 0]
    om = dom.omega_mask
    faces = np.concatenate([[x[om].min() - dom.h / 2], x[om] + dom.h / 2])
    totals = []
    for a in faces:
        inside = (x > a) if normal > 0 else (x < a)
        E = IndicatorSet.from_exterior(dom, problem.exterior, inside=inside)
        totals.append(problem.evaluate(E).breakdown.total)
    return faces, np.array(totals)
