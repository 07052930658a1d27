"""Hot lattice sums, in numba and numpy flavours.

All kernels take 2D lattice arrays; 1D problems are embedded as ``(1, L)``
with a weight table of shape ``(1, 2L - 1)``.  ``W[k - i + L0 - 1,
l - j + L1 - 1]`` is the interaction between cells ``(i, j)`` and ``(k, l)``
and the zero-offset entry is 0.
"""
import numpy as np

from . import accel


# -- Per_sigma ----------------------------------------------------------------

def _per_terms_loops(phase, omega, W, t_in, t_out):
    L0, L1 = phase.shape
    interior = 0.0
    exterior = 0.0
    for i in range(L0):
        for j in range(L1):
            if not omega[i, j]:
                continue
            acc = 0.0
            if phase[i, j] > 0:
                for k in range(L0):
                    for l in range(L1):
                        if phase[k, l] < 0:
                            acc += W[k - i + L0 - 1, l - j + L1 - 1]
                interior += acc + t_out[i, j]
            else:
                for k in range(L0):
                    for l in range(L1):
                        if phase[k, l] > 0 and not omega[k, l]:
                            acc += W[k - i + L0 - 1, l - j + L1 - 1]
                exterior += acc + t_in[i, j]
    return interior, exterior


_per_terms_numba = accel.njit(_per_terms_loops)


def _window(W, i, j, L0, L1):
    return W[L0 - 1 - i: 2 * L0 - 1 - i, L1 - 1 - j: 2 * L1 - 1 - j]


def _per_terms_numpy(phase, omega, W, t_in, t_out):
    L0, L1 = phase.shape
    neg = phase < 0
    pos_out = (phase > 0) & ~omega
    interior = 0.0
    exterior = 0.0
    for i, j in np.argwhere(omega):
        win = _window(W, i, j, L0, L1)
        if phase[i, j] > 0:
            interior += win[neg].sum() + t_out[i, j]
        else:
            exterior += win[pos_out].sum() + t_in[i, j]
    return interior, exterior


def per_terms(phase, omega, W, t_in, t_out):
    """``(L(E∩Ω, E^c), L(E∖Ω, Ω∖E))`` including the analytic tails."""
    if accel.USE_NUMBA:
        return _per_terms_numba(phase, omega, W, t_in, t_out)
    return _per_terms_numpy(phase, omega, W, t_in, t_out)


# -- local field (flip deltas) -------------------------------------------------

def _local_field_loops(phase, omega, W, t_in, t_out, out):
    L0, L1 = phase.shape
    for i in range(L0):
        for j in range(L1):
            if not omega[i, j]:
                out[i, j] = 0.0
                continue
            acc = 0.0
            for k in range(L0):
                for l in range(L1):
                    acc += W[k - i + L0 - 1, l - j + L1 - 1] * phase[k, l]
            out[i, j] = acc + t_in[i, j] - t_out[i, j]
    return out


_local_field_numba = accel.njit(_local_field_loops)


def _local_field_numpy(phase, omega, W, t_in, t_out, out):
    L0, L1 = phase.shape
    s = phase.astype(np.float64)
    out[...] = 0.0
    for i, j in np.argwhere(omega):
        out[i, j] = np.sum(_window(W, i, j, L0, L1) * s) + t_in[i, j] - t_out[i, j]
    return out


def local_field(phase, omega, W, t_in, t_out):
    """``F_i = sum_j W_ij s_j + T_in(i) - T_out(i)`` on Omega; flip delta is ``s_i F_i``."""
    out = np.zeros(phase.shape)
    if accel.USE_NUMBA:
        return _local_field_numba(phase, omega, W, t_in, t_out, out)
    return _local_field_numpy(phase, omega, W, t_in, t_out, out)


def _update_field_loops(field, omega, W, i, j, old_sign):
    L0, L1 = field.shape
    for k in range(L0):
        for l in range(L1):
            if omega[k, l]:
                field[k, l] -= 2.0 * old_sign * W[i - k + L0 - 1, j - l + L1 - 1]


_update_field_numba = accel.njit(_update_field_loops)


def update_field(field, omega, W, cell, old_sign):
    """In-place field update after cell ``cell`` flipped away from ``old_sign``."""
    i, j = int(cell[0]), int(cell[1])
    if accel.USE_NUMBA:
        _update_field_numba(field, omega, W, i, j, float(old_sign))
        return field
    L0, L1 = field.shape
    # W is symmetric under delta -> -delta, so the window about (i, j) works
    field -= np.where(omega, 2.0 * old_sign * _window(W, i, j, L0, L1), 0.0)
    return field


# -- fractional curvature by reflection pairing ---------------------------------

def _kappa_pairs_loops(phase, V, xi, xj, yi, yj):
    """Sum of ``-s_c V(c)`` over the lattice, pairing ``c`` with ``x + y - c``.

    ``V`` is indexed by the offset from cell ``x``.  The two cells adjacent
    to the face are skipped: they always carry opposite phases.
    """
    L0, L1 = phase.shape
    paired = 0.0
    unpaired = 0.0
    for k in range(L0):
        for l in range(L1):
            if (k == xi and l == xj) or (k == yi and l == yj):
                continue
            v = V[k - xi + L0 - 1, l - xj + L1 - 1]
            rk = xi + yi - k
            rl = xj + yj - l
            if 0 <= rk < L0 and 0 <= rl < L1:
                ssum = phase[k, l] + phase[rk, rl]
                if ssum != 0:
                    paired -= 0.5 * ssum * v
            else:
                unpaired -= phase[k, l] * v
    return paired + unpaired


_kappa_pairs_numba = accel.njit(_kappa_pairs_loops)


def _kappa_pairs_numpy(phase, V, xi, xj, yi, yj):
    L0, L1 = phase.shape
    s = phase.astype(np.int64)
    win = _window(V, xi, xj, L0, L1)
    K, L = np.meshgrid(np.arange(L0), np.arange(L1), indexing="ij")
    rk = xi + yi - K
    rl = xj + yj - L
    inside = (rk >= 0) & (rk < L0) & (rl >= 0) & (rl < L1)
    skip = ((K == xi) & (L == xj)) | ((K == yi) & (L == yj))
    partner = np.zeros_like(s)
    partner[inside] = s[rk[inside], rl[inside]]
    ssum = s + partner
    paired = -0.5 * np.sum(np.where(inside & ~skip & (ssum != 0), ssum * win, 0.0))
    unpaired = -np.sum(np.where(~inside & ~skip, s * win, 0.0))
    return paired + unpaired


def kappa_pairs(phase, V, x, y):
    xi, xj = int(x[0]), int(x[1])
    yi, yj = int(y[0]), int(y[1])
    if accel.USE_NUMBA:
        return _kappa_pairs_numba(phase, V, xi, xj, yi, yj)
    return _kappa_pairs_numpy(phase, V, xi, xj, yi, yj)
