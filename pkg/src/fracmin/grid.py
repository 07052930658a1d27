"""Lattice domains, indicator sets with analytic exterior data, and rescaling.

Cells are axis-aligned cubes of side ``h`` with centers at ``(k + 1/2) h``
for integer ``k``.  The extended lattice is the box ``[-B, B]^n`` with
``B = M h >= R``; everything beyond the box is described analytically by an
:class:`Exterior`.  Fields are stored as arrays shaped like the lattice
(``(2M,) * n``), indexed row-major.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class UnderResolvedError(ValueError):
    """Raised when a lattice is too coarse for the requested object."""


HALF_SPACE = "half_space"
COMPLEMENT_OF_BALL = "complement_of_ball"
ALL_INSIDE = "all_inside"
ALL_OUTSIDE = "all_outside"
EXTERIOR_KINDS = (HALF_SPACE, COMPLEMENT_OF_BALL, ALL_INSIDE, ALL_OUTSIDE)


@dataclass(frozen=True)
class Exterior:
    """Analytic description of the fixed set E0 outside the lattice.

    ``HALF_SPACE`` is ``{x . normal > offset}``; ``COMPLEMENT_OF_BALL`` is
    ``{|x - center| > radius}``.
    """

    kind: str
    normal: tuple = ()
    offset: float = 0.0
    center: tuple = ()
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in EXTERIOR_KINDS:
            raise ValueError(f"unknown exterior kind {self.kind!r}")
        if self.kind == HALF_SPACE:
            nrm = np.asarray(self.normal, dtype=float)
            if nrm.size == 0 or not np.isclose(np.linalg.norm(nrm), 1.0):
                raise ValueError("half-space normal must be a unit vector")
        if self.kind == COMPLEMENT_OF_BALL and self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @classmethod
    def half_space(cls, normal, offset=0.0):
        nrm = np.asarray(normal, dtype=float)
        nrm = nrm / np.linalg.norm(nrm)
        return cls(HALF_SPACE, normal=tuple(float(v) for v in nrm), offset=float(offset))

    @classmethod
    def complement_of_ball(cls, center, radius):
        return cls(COMPLEMENT_OF_BALL, center=tuple(float(v) for v in center), radius=float(radius))

    @classmethod
    def all_inside(cls):
        return cls(ALL_INSIDE)

    @classmethod
    def all_outside(cls):
        return cls(ALL_OUTSIDE)

    def contains(self, points):
        """Membership of ``points`` (shape ``(..., n)``) in E0."""
        pts = np.asarray(points, dtype=float)
        if self.kind == ALL_INSIDE:
            return np.ones(pts.shape[:-1], dtype=bool)
        if self.kind == ALL_OUTSIDE:
            return np.zeros(pts.shape[:-1], dtype=bool)
        if self.kind == HALF_SPACE:
            return pts @ np.asarray(self.normal) > self.offset
        d = np.linalg.norm(pts - np.asarray(self.center), axis=-1)
        return d > self.radius

    def scaled(self, r, shift=None):
        """Descriptor of ``(E - shift) / r``."""
        x0 = np.zeros(len(self.normal or self.center or (0,))) if shift is None else np.asarray(shift, float)
        if self.kind == HALF_SPACE:
            off = self.offset - float(np.dot(self.normal, x0))
            return replace(self, offset=off / r)
        if self.kind == COMPLEMENT_OF_BALL:
            c = (np.asarray(self.center) - x0) / r
            return replace(self, center=tuple(float(v) for v in c), radius=self.radius / r)
        return self

    def complement(self):
        """Descriptor of the complement of E0, where it is expressible."""
        if self.kind == ALL_INSIDE:
            return Exterior.all_outside()
        if self.kind == ALL_OUTSIDE:
            return Exterior.all_inside()
        if self.kind == HALF_SPACE:
            return Exterior.half_space(tuple(-v for v in self.normal), -self.offset)
        raise ValueError("the complement of a ball complement is a ball, which has no descriptor")

    def to_text(self):
        if self.kind == HALF_SPACE:
            return f"half_space({','.join(repr(v) for v in self.normal)};{self.offset!r})"
        if self.kind == COMPLEMENT_OF_BALL:
            return f"complement_of_ball({','.join(repr(v) for v in self.center)};{self.radius!r})"
        return self.kind

    @classmethod
    def from_text(cls, text):
        text = text.strip()
        if text in (ALL_INSIDE, ALL_OUTSIDE):
            return cls(text)
        name, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValueError(f"malformed exterior descriptor {text!r}")
        vec, _, scalar = rest[:-1].partition(";")
        values = tuple(float(v) for v in vec.split(","))
        if name == HALF_SPACE:
            return cls.half_space(values, float(scalar))
        if name == COMPLEMENT_OF_BALL:
            return cls.complement_of_ball(values, float(scalar))
        raise ValueError(f"unknown exterior descriptor {text!r}")


@dataclass(frozen=True, eq=False)
class Domain:
    """Discrete ball ``Omega`` of radius ``radius`` inside the box lattice."""

    n: int
    radius: float
    h: float
    R: float
    M: int
    index: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    omega_mask: np.ndarray = field(repr=False)
    layer_mask: np.ndarray = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.omega_mask.shape

    @property
    def half_width(self):
        return self.M * self.h

    @property
    def cell_volume(self):
        return self.h ** self.n

    @property
    def boundary_cells(self):
        """Lattice indices of Omega cells face-adjacent to a non-Omega cell."""
        return np.argwhere(self.boundary_mask)

    @property
    def n_omega(self):
        return int(self.omega_mask.sum())

    def cell_of(self, points):
        """Lattice index (array coordinates) of the cell containing each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.floor(pts / self.h).astype(np.int64) + self.M

    def in_lattice(self, idx):
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < 2 * self.M), axis=-1)

    def key(self):
        return (self.n, float(self.radius), float(self.h), float(self.R))


def _face_neighbors_any(mask):
    """True where some face neighbour (inside the array) is set."""
    out = np.zeros_like(mask)
    for ax in range(mask.ndim):
        sl_hi = [slice(None)] * mask.ndim
        sl_lo = [slice(None)] * mask.ndim
        sl_hi[ax] = slice(1, None)
        sl_lo[ax] = slice(None, -1)
        out[tuple(sl_lo)] |= mask[tuple(sl_hi)]
        out[tuple(sl_hi)] |= mask[tuple(sl_lo)]
    return out


def build_domain(n, radius, h, R):
    """Discretize ``B_radius`` with spacing ``h`` and truncation radius ``R``.

    Raises :class:`UnderResolvedError` if fewer than 8 cells span the diameter.
    """
    if n not in (1, 2):
        raise ValueError("only n = 1 and n = 2 are supported")
    if h <= 0 or radius <= 0:
        raise ValueError("h and radius must be positive")
    if R < 2 * radius:
        raise ValueError("truncation radius R must satisfy R >= 2 * radius")
    if 2 * radius / h < 8 - 1e-9:
        raise UnderResolvedError(
            f"under-resolved: {2 * radius / h:g} cells across the diameter (need >= 8)"
        )
    M = int(np.ceil(R / h - 1e-9))
    k = np.arange(-M, M)
    grids = np.meshgrid(*([k] * n), indexing="ij")
    index = np.stack(grids, axis=-1)
    centers = (index + 0.5) * h
    omega = np.linalg.norm(centers, axis=-1) < radius
    if not omega.any():
        raise UnderResolvedError("Omega contains no cell centers")
    layer = _face_neighbors_any(omega) & ~omega
    boundary = _face_neighbors_any(~omega) & omega
    for arr in (index, centers, omega, layer, boundary):
        arr.setflags(write=False)
    return Domain(n, float(radius), float(h), float(R), M, index, centers, omega, layer, boundary)


@dataclass(frozen=True, eq=False)
class IndicatorSet:
    """Per-cell phase (+1 in E, -1 in E^c) plus the exterior descriptor."""

    domain: Domain
    phase: np.ndarray = field(repr=False)
    exterior: Exterior = Exterior(ALL_OUTSIDE)

    def __post_init__(self):
        if self.phase.shape != self.domain.shape:
            raise ValueError("phase array does not match the lattice")
        if not np.all(np.abs(self.phase) == 1):
            raise ValueError("phase values must be +1 or -1")

    @classmethod
    def from_exterior(cls, domain, exterior, inside=None):
        """Lattice set equal to ``exterior`` outside Omega.

        ``inside`` optionally gives the Omega phase: a boolean/±1 lattice array,
        or a callable on cell centers returning booleans.
        """
        if exterior.kind == COMPLEMENT_OF_BALL:
            c = np.asarray(exterior.center)
            if np.any(np.abs(c) + exterior.radius > domain.half_width):
                raise ValueError("the excluded ball must lie inside the lattice box")
        base = exterior.contains(domain.centers)
        if inside is not None:
            vals = inside(domain.centers) if callable(inside) else np.asarray(inside)
            vals = vals > 0 if vals.dtype != bool else vals
            base = np.where(domain.omega_mask, vals, base)
        phase = np.where(base, 1, -1).astype(np.int8)
        phase.setflags(write=False)
        return cls(domain, phase, exterior)

    def with_phase(self, phase):
        phase = np.asarray(phase, dtype=np.int8).copy()
        phase.setflags(write=False)
        return IndicatorSet(self.domain, phase, self.exterior)

    def flipped(self, cell):
        phase = self.phase.copy()
        phase[tuple(cell)] *= -1
        return self.with_phase(phase)

    def complement(self):
        return IndicatorSet(self.domain, (-self.phase).astype(np.int8), self.exterior.complement())

    @property
    def inside(self):
        return self.phase > 0

    def boundary_mask(self):
        """Cells with a face neighbour of opposite phase (the discrete boundary)."""
        out = np.zeros(self.phase.shape, dtype=bool)
        p = self.phase
        for ax in range(p.ndim):
            lo = [slice(None)] * p.ndim
            hi = [slice(None)] * p.ndim
            lo[ax] = slice(None, -1)
            hi[ax] = slice(1, None)
            diff = p[tuple(lo)] != p[tuple(hi)]
            out[tuple(lo)] |= diff
            out[tuple(hi)] |= diff
        return out

    def exterior_consistent(self):
        """Whether the phase outside Omega matches the descriptor at cell centers."""
        ext = self.exterior.contains(self.domain.centers)
        outside = ~self.domain.omega_mask
        return bool(np.all((self.phase[outside] > 0) == ext[outside]))


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    per_sigma: float
    per_interior: float = 0.0
    per_exterior: float = 0.0

    @property
    def total(self):
        return self.dirichlet + self.per_sigma


@dataclass(eq=False)
class Configuration:
    """Admissible pair: set ``E``, the two phases of ``u``, and boundary data.

    ``phi`` holds the boundary data on the lattice (only the boundary layer
    is read); ``u_plus`` and ``u_minus`` are nonnegative and vanish on the
    opposite phase inside Omega.
    """

    E: IndicatorSet
    sigma: float
    phi: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray
    breakdown: Optional[EnergyBreakdown] = None

    @property
    def domain(self):
        return self.E.domain

    @property
    def u(self):
        return self.u_plus - self.u_minus

    def sign_compatible(self, tol=0.0):
        om = self.domain.omega_mask
        u = self.u
        e = self.E.inside
        return bool(np.all(u[om & e] >= -tol) and np.all(u[om & ~e] <= tol))

    def fingerprint(self):
        """Hash of the stored arrays, used to check read-only diagnostics."""
        import hashlib

        hsh = hashlib.sha256()
        for arr in (self.E.phase, self.phi, self.u_plus, self.u_minus):
            hsh.update(np.ascontiguousarray(arr).tobytes())
        return hsh.hexdigest()


def measure(E, center, r):
    """Return ``(|E ∩ B_r(center)|, |E^c ∩ B_r(center)|)`` by cell counting."""
    dom = E.domain
    center = np.asarray(center, dtype=float).reshape(dom.n)
    if np.any(np.abs(center) + r > dom.half_width + 1e-12):
        raise ValueError("ball leaves the extended lattice")
    inball = np.linalg.norm(dom.centers - center, axis=-1) < r
    vol = dom.cell_volume
    n_in = int(np.count_nonzero(inball & E.inside))
    n_out = int(np.count_nonzero(inball & ~E.inside))
    return vol * n_in, vol * n_out


def rescale(config, r, center=None):
    """Blow-up ``u_r(x) = r^{sigma/2-1} u(x0 + r x)``, ``E_r = (E - x0)/r``.

    The result lives on a unit-ball domain with the source spacing and is
    sampled nearest-cell.  Beyond the source lattice the set is filled from
    the scaled exterior descriptor, so ``E_r`` is exact only on the lattice.
    """
    src = config.domain
    if not 0 < r <= 1:
        raise ValueError("rescaling factor must lie in (0, 1]")
    if 2 * r / src.h < 8 - 1e-9:
        raise UnderResolvedError("r B_1 covers fewer than 8 source cells across")
    x0 = np.zeros(src.n) if center is None else np.asarray(center, dtype=float)
    if r == 1 and np.allclose(x0, 0) and np.isclose(src.radius, 1.0):
        return config
    dst = build_domain(src.n, 1.0, src.h, src.R)
    pts = x0 + r * dst.centers
    idx = src.cell_of(pts.reshape(-1, src.n)).reshape(pts.shape)
    ok = src.in_lattice(idx)
    clipped = np.clip(idx, 0, 2 * src.M - 1)
    sel = tuple(clipped[..., k] for k in range(src.n))
    ext = config.E.exterior.scaled(r, x0)
    far = config.E.exterior.contains(pts)
    phase = np.where(ok, config.E.phase[sel], np.where(far, 1, -1)).astype(np.int8)
    phase.setflags(write=False)
    scale = r ** (config.sigma / 2 - 1)
    use = dst.omega_mask | dst.layer_mask
    up = np.where(use, scale * config.u_plus[sel], 0.0)
    um = np.where(use, scale * config.u_minus[sel], 0.0)
    phi = np.where(dst.layer_mask, up - um, 0.0)
    E_r = IndicatorSet(dst, phase, ext)
    return Configuration(E_r, config.sigma, phi, up, um)


SNAPSHOT_VERSION = "v1"


def write_snapshot(config, path_or_file):
    """Write the text snapshot (Omega plus boundary-layer cells)."""
    dom = config.domain
    lines = [
        f"FRACMIN {SNAPSHOT_VERSION} n={dom.n} h={dom.h!r} R={dom.R!r} "
        f"sigma={float(config.sigma)!r} radius={dom.radius!r} exterior={config.E.exterior.to_text()}"
    ]
    u = config.u
    mask = dom.omega_mask | dom.layer_mask
    for idx in np.argwhere(mask):
        t = tuple(idx)
        coords = " ".join(str(int(i) - dom.M) for i in idx)
        lines.append(f"{coords} {int(config.E.phase[t])} {float(u[t])!r}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w", encoding="utf-8") as fh:
            fh.write(text)


def parse_snapshot_header(line):
    parts = line.split()
    if len(parts) < 2 or parts[0] != "FRACMIN":
        raise ValueError("not a FRACMIN snapshot")
    if parts[1] != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {parts[1]!r}")
    fields = {}
    for tok in parts[2:]:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"malformed header token {tok!r}")
        fields[key] = val
    for key in ("n", "h", "R", "sigma"):
        if key not in fields:
            raise ValueError(f"snapshot header lacks {key}=")
    return fields


def read_snapshot(path_or_file):
    """Load a snapshot written by :func:`write_snapshot`.

    The stored ``u`` is split into its positive and negative parts; ``phi``
    is taken from the boundary-layer cells.
    """
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    hdr = parse_snapshot_header(lines[0])
    n = int(hdr["n"])
    h = float(hdr["h"])
    R = float(hdr["R"])
    sigma = float(hdr["sigma"])
    radius = float(hdr.get("radius", 1.0))
    ext = Exterior.from_text(hdr.get("exterior", ALL_OUTSIDE))
    dom = build_domain(n, radius, h, R)
    phase = np.where(ext.contains(dom.centers), 1, -1).astype(np.int8)
    u = np.zeros(dom.shape)
    for ln in lines[1:]:
        tok = ln.split()
        if len(tok) != n + 2:
            raise ValueError(f"malformed snapshot line {ln!r}")
        idx = tuple(int(t) + dom.M for t in tok[:n])
        phase[idx] = int(tok[n])
        u[idx] = float(tok[n + 1])
    E = IndicatorSet(dom, phase, ext)
    phi = np.where(dom.layer_mask, u, 0.0)
    return Configuration(E, sigma, phi, np.maximum(u, 0.0), np.maximum(-u, 0.0))
