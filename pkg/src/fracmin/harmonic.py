"""Harmonic replacement and discrete Dirichlet energies.

The Dirichlet form is a sum over the lattice faces that touch Omega (both
endpoints in Omega or its boundary layer) of ``(v_a - v_b)^2 h^{n-2}``.
The replacement of ``phi`` vanishing on ``K`` minimises it with ``v = phi``
on the boundary layer and ``v = 0`` on the ``K`` cells, which are eliminated
from the linear system.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla


class InfeasibleError(ValueError):
    """The vanishing set clashes with nonzero boundary data."""


class NonConvergenceError(RuntimeError):
    pass


_FACES = {}


def faces(domain):
    """Flat index pairs ``(a, b)`` of faces with at least one Omega endpoint."""
    key = domain.key()
    hit = _FACES.get(key)
    if hit is not None:
        return hit
    shape = domain.shape
    flat = np.arange(np.prod(shape)).reshape(shape)
    om = domain.omega_mask
    act = om | domain.layer_mask
    pa, pb = [], []
    for ax in range(domain.n):
        lo = [slice(None)] * domain.n
        hi = [slice(None)] * domain.n
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        keep = (om[lo] | om[hi]) & act[lo] & act[hi]
        pa.append(flat[lo][keep])
        pb.append(flat[hi][keep])
    out = (np.concatenate(pa), np.concatenate(pb))
    for arr in out:
        arr.setflags(write=False)
    if len(_FACES) > 64:
        _FACES.clear()
    _FACES[key] = out
    return out


def dirichlet_form(v, w, domain):
    """Discrete ``int grad v . grad w`` over Omega."""
    a, b = faces(domain)
    vf = np.asarray(v, dtype=float).ravel()
    wf = np.asarray(w, dtype=float).ravel()
    return float(np.dot(vf[a] - vf[b], wf[a] - wf[b]) * domain.h ** (domain.n - 2))


def dirichlet_energy(v, domain):
    """Discrete ``int_Omega |grad v|^2`` (forward differences, face sum)."""
    return dirichlet_form(v, v, domain)


def discrete_laplacian(v, domain):
    """``h^{-2} sum_nb (v_nb - v)`` at Omega cells (zero elsewhere)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(domain.shape)
    for ax in range(domain.n):
        for step in (1, -1):
            out += np.roll(v, -step, axis=ax) - v
    return np.where(domain.omega_mask, out / domain.h ** 2, 0.0)


@dataclass(frozen=True, eq=False)
class ReplacementProblem:
    """Boundary data ``phi`` (read on the boundary layer) and vanishing set ``K``."""

    domain: object
    phi: np.ndarray
    K: np.ndarray
    tol: float = 1e-10
    maxiter: int = 20000
    one_signed: bool = False

    def check(self):
        dom = self.domain
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != dom.shape or not np.all(np.isfinite(phi[dom.layer_mask])):
            raise ValueError("boundary data must be a finite lattice array")
        if self.one_signed and np.any(phi[dom.layer_mask] < 0):
            raise ValueError("one-signed replacement needs phi >= 0")
        clash = np.asarray(self.K, dtype=bool) & dom.layer_mask & (phi != 0)
        if clash.any():
            cell = tuple(int(i) - dom.M for i in np.argwhere(clash)[0])
            raise InfeasibleError(
                f"vanishing set covers boundary cell {cell} where phi != 0; no admissible function"
            )


def _system(domain, K):
    om = domain.omega_mask
    free = (om & ~K).ravel()
    a, b = faces(domain)
    fa, fb = free[a], free[b]
    N = int(free.sum())
    pos = np.full(free.size, -1)
    pos[free] = np.arange(N)
    deg = np.bincount(pos[a[fa]], minlength=N) + np.bincount(pos[b[fb]], minlength=N)
    both = fa & fb
    rows = np.concatenate([pos[a[both]], pos[b[both]], np.arange(N)])
    cols = np.concatenate([pos[b[both]], pos[a[both]], np.arange(N)])
    vals = np.concatenate([-np.ones(2 * both.sum()), deg.astype(float)])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
    return A, free, pos, deg


def harmonic_replacement(prob, x0=None):
    """Discrete harmonic function on ``Omega \\ K`` with data ``phi``, zero on ``K``.

    Solved by Jacobi-preconditioned conjugate gradients; raises
    :class:`NonConvergenceError` if the relative residual stays above ``tol``.
    """
    prob.check()
    dom = prob.domain
    K = np.asarray(prob.K, dtype=bool) & dom.omega_mask
    phi = np.asarray(prob.phi, dtype=float)
    fixed = np.where(dom.layer_mask, phi, 0.0).ravel()
    A, free, pos, deg = _system(dom, K)
    a, b = faces(dom)
    N = A.shape[0]
    rhs = np.zeros(N)
    # a free endpoint picks up the fixed value across the face
    m = free[a] & ~free[b]
    np.add.at(rhs, pos[a[m]], fixed[b[m]])
    m = free[b] & ~free[a]
    np.add.at(rhs, pos[b[m]], fixed[a[m]])
    out = fixed.copy()
    if N and np.any(rhs):
        guess = None if x0 is None else np.asarray(x0, dtype=float).ravel()[free]
        Minv = sparse.diags(1.0 / deg.astype(float))
        x, _ = spla.cg(A, rhs, x0=guess, rtol=prob.tol, atol=0.0, maxiter=prob.maxiter, M=Minv)
        res = np.linalg.norm(rhs - A @ x) / np.linalg.norm(rhs)
        if not res <= prob.tol * 1.0001:
            raise NonConvergenceError(
                f"conjugate gradients stopped at relative residual {res:.3e} (tol {prob.tol:g})"
            )
        out[free] = x
    elif N:
        out[free] = 0.0
    return out.reshape(dom.shape)


def replacement(domain, phi, K, tol=1e-10, x0=None):
    return harmonic_replacement(ReplacementProblem(domain, phi, K, tol), x0=x0)


def orthogonality_residual(w, K, psi, domain):
    """``<grad w, grad psi>`` for a test field vanishing on the layer and on ``K``."""
    psi = np.asarray(psi, dtype=float)
    K = np.asarray(K, dtype=bool)
    if np.any(psi[~domain.omega_mask] != 0):
        raise ValueError("test field must vanish outside Omega (including the boundary layer)")
    if np.any(psi[K & domain.omega_mask] != 0):
        raise ValueError("test field must vanish on the vanishing set K")
    return dirichlet_form(w, psi, domain)


def two_phase_replacement(phi, E, tol=1e-10, x0=None):
    """``(u+, u-, u)``: ``u+`` replaces ``phi+`` off ``E^c``, ``u-`` replaces ``phi-`` off ``E``."""
    dom = E.domain
    phi = np.asarray(phi, dtype=float)
    om = dom.omega_mask
    g_plus = g_minus = None
    if x0 is not None:
        g_plus, g_minus = x0
    up = replacement(dom, np.maximum(phi, 0.0), om & ~E.inside, tol, g_plus)
    um = replacement(dom, np.maximum(-phi, 0.0), om & E.inside, tol, g_minus)
    return up, um, up - um


def config_dirichlet(u_plus, u_minus, domain):
    """Dirichlet part of the energy, ``D(u+) + D(u-)``.

    The two phases vanish on opposite sides of the discrete interface, so
    the cross term a plain ``D(u+ - u-)`` would pick up on interface faces is
    a lattice artefact and is left out.
    """
    return dirichlet_energy(u_plus, domain) + dirichlet_energy(u_minus, domain)


@dataclass(frozen=True)
class EnergyDifference:
    value: float  # D(v) - D(w)
    gap: float  # D(v - w), equal to value up to solver tolerance
    area: float  # |A|
    w_sup: float  # ||w||_inf on Omega
    bound: float  # |A| ||w||_inf^2, to be multiplied by the lemma's constant

    @property
    def observed_constant(self):
        return self.value / self.bound if self.bound > 0 else 0.0


def energy_difference(phi, E, A, tol=1e-11):
    """``D(v) - D(w)`` with ``w = phi_{E^c}``, ``v = phi_{E^c ∪ A}``, ``A ⊂ E ∩ Omega``."""
    dom = E.domain
    A = np.asarray(A, dtype=bool)
    if np.any(A & ~(E.inside & dom.omega_mask)):
        raise ValueError("A must be contained in E ∩ Omega")
    Kw = dom.omega_mask & ~E.inside
    w = replacement(dom, phi, Kw, tol)
    if not A.any():
        v = w
    else:
        v = replacement(dom, phi, Kw | A, tol, x0=w)
    dv = dirichlet_energy(v, dom)
    dw = dirichlet_energy(w, dom)
    area = float(A.sum()) * dom.cell_volume
    wsup = float(np.max(np.abs(w[dom.omega_mask]))) if dom.omega_mask.any() else 0.0
    return EnergyDifference(dv - dw, dirichlet_energy(v - w, dom), area, wsup, area * wsup ** 2)
