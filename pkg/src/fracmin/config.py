"""Experiment configuration: INI-style text with line-numbered validation.

Sections are ``[problem]``, ``[search]``, ``[diagnostics]`` and ``[output]``.
Parsing collects every problem it finds and raises :class:`ConfigError`
carrying all of them.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .grid import Exterior

SIGMA_RANGE = (0.1, 0.9)
SELECTORS = ("linear", "constant", "two_phase_linear", "radial_power")
REPORTS = ("weiss", "acf", "density", "holder", "lambda", "el", "blowup", "flatness")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# -- selectors ---------------------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_call(text):
    """``name(a, b, ...)`` -> ``(name, [floats])``; bare ``name`` has no args."""
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"malformed selector {text!r}")
    name, args = m.group(1), m.group(2)
    if args is None or not args.strip():
        return name, []
    return name, [float(a) for a in args.split(",")]


@dataclass(frozen=True)
class BoundaryData:
    """Boundary-data selector.

    ``linear(d1, .., dn)``: ``x . d``; ``constant(c)``; ``two_phase_linear(a)``:
    ``x_n - a``; ``radial_power(p)``: ``|x|^p``.
    """

    kind: str = "two_phase_linear"
    params: tuple = (0.0,)

    def check(self, n):
        need = {"linear": n, "constant": 1, "two_phase_linear": 1, "radial_power": 1}
        if self.kind not in need:
            raise ValueError(f"unknown boundary selector {self.kind!r} (known: {', '.join(SELECTORS)})")
        if len(self.params) != need[self.kind]:
            raise ValueError(f"{self.kind} takes {need[self.kind]} parameter(s), got {len(self.params)}")
        if self.kind == "radial_power" and self.params[0] <= 0:
            raise ValueError("radial_power exponent must be positive")

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        p = self.params
        if self.kind == "linear":
            return pts @ np.asarray(p)
        if self.kind == "constant":
            return np.full(pts.shape[0], p[0])
        if self.kind == "two_phase_linear":
            return pts[:, -1] - p[0]
        return np.linalg.norm(pts, axis=1) ** p[0]

    def to_text(self):
        return f"{self.kind}({', '.join(repr(float(v)) for v in self.params)})"

    @classmethod
    def from_text(cls, text):
        name, args = parse_call(text)
        return cls(name, tuple(args))


def exterior_from_text(text, n, radius):
    """Exterior selector: ``half_space`` (normal ``e_n``), ``half_space(normal; offset)``,
    ``complement_of_ball`` (Omega itself), ``complement_of_ball(center; r)``,
    ``all_inside`` or ``all_outside``."""
    t = text.strip()
    if t == "half_space":
        return Exterior.half_space([0.0] * (n - 1) + [1.0])
    if t == "complement_of_ball":
        return Exterior.complement_of_ball([0.0] * n, radius)
    ext = Exterior.from_text(t)
    dim = len(ext.normal or ext.center or ())
    if dim and dim != n:
        raise ValueError(f"exterior descriptor has dimension {dim}, expected {n}")
    return ext


# -- config dataclasses -------------------------------------------------------------

@dataclass(frozen=True)
class ProblemConfig:
    n: int = 1
    radius: float = 1.0
    h: float = 1.0 / 32
    R: float = 0.0  # 0 means 2 * radius
    sigma: float = 0.5
    boundary: str = "two_phase_linear(0.0)"
    exterior: str = "half_space"
    sigmas: tuple = (0.2, 0.5, 0.8)
    quadrature_depth: int = 4

    @property
    def truncation(self):
        return self.R if self.R > 0 else 2 * self.radius


@dataclass(frozen=True)
class SearchConfig:
    max_sweeps: int = 100
    flip_scope: str = "boundary_band"
    band: int = 2
    T0: float = 0.0
    decay: float = 0.9
    seed: int = 0
    patience: int = 2
    resolve_every: int = 1
    polish: bool = True
    max_polish_passes: int = 200


@dataclass(frozen=True)
class DiagnosticsConfig:
    radii: tuple = ()  # empty means dyadic radii in [8h, 1/2]
    reports: tuple = REPORTS
    c_hat: str = "auto"  # auto | analytic | <number>
    extension_refine: int = 4
    snapshot: str = ""  # empty means <output>/snapshot.txt
    blowup_radii: tuple = (0.5, 0.25, 0.125)
    calibration_h: float = 1.0 / 16


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "fracmin_out"
    plot: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def boundary_data(self):
        return BoundaryData.from_text(self.problem.boundary)

    def exterior_set(self):
        return exterior_from_text(self.problem.exterior, self.problem.n, self.problem.radius)

    def with_seed(self, seed):
        return replace(self, search=replace(self.search, seed=int(seed)))


SECTIONS = {
    "problem": ProblemConfig,
    "search": SearchConfig,
    "diagnostics": DiagnosticsConfig,
    "output": OutputConfig,
}
REQUIRED = {("problem", "n")}


# -- value conversion ----------------------------------------------------------------

def _to_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _convert(kind, text):
    text = text.strip()
    if kind is bool:
        return _to_bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(_fraction(text))
    if kind is tuple:
        if not text:
            return ()
        return tuple(float(_fraction(v)) if _numeric(v) else v.strip() for v in text.split(","))
    return text


def _numeric(text):
    try:
        _fraction(text)
        return True
    except ValueError:
        return False


def _fraction(text):
    """Float, also accepting ``a/b``."""
    t = text.strip()
    if "/" in t:
        a, b = t.split("/", 1)
        return float(a) / float(b)
    return float(t)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# -- validation ----------------------------------------------------------------------

def _validate(cfg, where):
    """Range checks; ``where`` maps ``(section, key)`` to a line number."""
    errs = []

    def bad(sec, key, msg):
        errs.append(f"line {where.get((sec, key), where.get((sec, None), 0))}: {msg}")

    p = cfg.problem
    if p.n not in (1, 2):
        bad("problem", "n", f"n must be 1 or 2, got {p.n}")
    lo, hi = SIGMA_RANGE
    if not lo <= p.sigma <= hi:
        bad("problem", "sigma", f"sigma out of range [{lo},{hi}]")
    for s in p.sigmas:
        if not isinstance(s, float) or not lo <= s <= hi:
            bad("problem", "sigmas", f"sigmas entry {s!r} out of range [{lo},{hi}]")
    if p.radius <= 0:
        bad("problem", "radius", "radius must be positive")
    if p.h <= 0:
        bad("problem", "h", "h must be positive")
    elif p.radius > 0 and 2 * p.radius / p.h < 8 - 1e-9:
        bad("problem", "h", f"h={p.h:g} leaves fewer than 8 cells across the diameter")
    if p.R != 0 and p.R < 2 * p.radius:
        bad("problem", "R", "R must be at least 2 * radius (or 0 for the default)")
    if p.quadrature_depth < 1:
        bad("problem", "quadrature_depth", "quadrature_depth must be >= 1")
    if p.n in (1, 2):
        try:
            BoundaryData.from_text(p.boundary).check(p.n)
        except ValueError as exc:
            bad("problem", "boundary", str(exc))
        try:
            exterior_from_text(p.exterior, p.n, p.radius)
        except ValueError as exc:
            bad("problem", "exterior", str(exc))
    s = cfg.search
    if s.flip_scope not in ("boundary_only", "boundary_band"):
        bad("search", "flip_scope", "flip_scope must be boundary_only or boundary_band")
    if s.band < 1:
        bad("search", "band", "band must be >= 1")
    if s.T0 < 0:
        bad("search", "T0", "T0 must be >= 0")
    if not 0 < s.decay < 1:
        bad("search", "decay", "decay must lie in (0, 1)")
    if not 0 <= s.seed < 2 ** 64:
        bad("search", "seed", "seed must be an unsigned 64-bit integer")
    for key in ("max_sweeps", "patience", "resolve_every"):
        if getattr(s, key) < 1:
            bad("search", key, f"{key} must be >= 1")
    if s.max_polish_passes < 0:
        bad("search", "max_polish_passes", "max_polish_passes must be >= 0")
    d = cfg.diagnostics
    for r in d.radii:
        if not isinstance(r, float) or r <= 0:
            bad("diagnostics", "radii", f"radius {r!r} must be a positive number")
    for r in d.blowup_radii:
        if not isinstance(r, float) or not 0 < r <= 1:
            bad("diagnostics", "blowup_radii", f"blow-up radius {r!r} must lie in (0, 1]")
    for rep in d.reports:
        if rep not in REPORTS:
            bad("diagnostics", "reports", f"unknown report {rep!r} (known: {', '.join(REPORTS)})")
    if d.c_hat not in ("auto", "analytic"):
        try:
            if float(d.c_hat) <= 0:
                bad("diagnostics", "c_hat", "c_hat must be positive")
        except ValueError:
            bad("diagnostics", "c_hat", "c_hat must be auto, analytic or a number")
    if d.extension_refine < 1:
        bad("diagnostics", "extension_refine", "extension_refine must be >= 1")
    if d.calibration_h <= 0:
        bad("diagnostics", "calibration_h", "calibration_h must be positive")
    return errs


# -- parse / serialize -----------------------------------------------------------------

def parse_config(text):
    """Parse INI-style text into an :class:`ExperimentConfig`.

    Raises :class:`ConfigError` listing every error with its line number.
    """
    errs = []
    values = {name: {} for name in SECTIONS}
    where = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        # ';' only starts a comment at the beginning of a line: exterior
        # descriptors use it as a separator
        line = "" if raw.lstrip().startswith(";") else raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                errs.append(f"line {lineno}: unknown section [{section}]")
                section = "?"
            else:
                where.setdefault((section, None), lineno)
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            errs.append(f"line {lineno}: expected key = value")
            continue
        if section is None:
            errs.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if section == "?":
            continue
        types = {f.name: f.type for f in fields(SECTIONS[section])}
        if key not in types:
            errs.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        if key in values[section]:
            errs.append(f"line {lineno}: duplicate key {key!r} in [{section}]")
            continue
        kind = {"int": int, "float": float, "bool": bool, "tuple": tuple, "str": str}[types[key]]
        try:
            values[section][key] = _convert(kind, val)
        except ValueError as exc:
            errs.append(f"line {lineno}: bad value for {key}: {exc}")
            continue
        where[(section, key)] = lineno
    for sec, key in sorted(REQUIRED):
        if key not in values[sec]:
            errs.append(f"line {where.get((sec, None), 1)}: missing required field {key} in [{sec}]")
    if "reports" in values["diagnostics"]:
        values["diagnostics"]["reports"] = tuple(str(r) for r in values["diagnostics"]["reports"])
    # range checks run on whatever parsed, so one pass reports everything
    cfg = ExperimentConfig(**{name: SECTIONS[name](**values[name]) for name in SECTIONS})
    errs += _validate(cfg, where)
    if errs:
        raise ConfigError(sorted(errs, key=_line_of))
    return cfg


def _line_of(msg):
    return int(msg.split(":", 1)[0].split()[1])


def serialize_config(cfg):
    """Canonical text of ``cfg``; ``parse_config(serialize_config(c)) == c``."""
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        block = getattr(cfg, name)
        for f in fields(block):
            out.append(f"{f.name} = {_fmt(getattr(block, f.name))}")
        out.append("")
    return "\n".join(out)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
