"""Command line: ``fracmin <subcommand> --config <path> [--out <dir>] [--seed <u64>]``.

Every subcommand writes deterministic CSV files into the output directory,
which is held under a lock file for the duration of the run.  Failures end
with one machine-readable line on stderr::

    fracmin: error: subcommand=<name> kind=<ExceptionType> message=<text>
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import ConfigError, load_config, serialize_config
from .extension import analytic_constant, calibrate_constant
from .grid import IndicatorSet, build_domain, read_snapshot, write_snapshot
from .kernel import (
    build_curvature_tables,
    build_tail_model,
    build_weight_table,
    frac_curvature,
    per_sigma_terms,
)
from .minimize import SearchParams, make_problem, minimize, sample_boundary, write_history_csv

SUBCOMMANDS = ("minimize", "persigma", "curvature", "diagnose", "calibrate", "sweep-sigma", "blowup")
LOCK_NAME = ".fracmin.lock"


class GateError(RuntimeError):
    """A hard gate failed after the artifacts were written."""


class LockedError(RuntimeError):
    pass


def _f(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else (str(r) if isinstance(r, (int, np.integer)) else _f(r))
                        for r in row])
    return path


@contextmanager
def output_lock(directory):
    """Exclusive ownership of ``directory`` through an O_EXCL lock file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockedError(f"{directory} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def plot_csv(path, xcol, ycol):
    """Companion SVG of ``ycol`` against ``xcol`` (a convenience, never read back)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fracmin"
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    x = [float(r[xcol]) for r in rows]
    y = [float(r[ycol]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, "o-", ms=3)
    ax.set_xlabel(xcol)
    ax.set_ylabel(ycol)
    fig.tight_layout()
    out = Path(path).with_suffix(".svg")
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out


# -- shared setup ------------------------------------------------------------------

def _domain(cfg):
    p = cfg.problem
    return build_domain(p.n, p.radius, p.h, p.truncation)


def _problem(cfg, sigma=None):
    p = cfg.problem
    dom = _domain(cfg)
    sigma = p.sigma if sigma is None else sigma
    phi = sample_boundary(dom, cfg.boundary_data())
    return make_problem(dom, sigma, phi, cfg.exterior_set(), p.quadrature_depth)


def _params(cfg):
    s = cfg.search
    return SearchParams(
        max_sweeps=s.max_sweeps, flip_scope=s.flip_scope, band=s.band, T0=s.T0, decay=s.decay,
        rng_seed=s.seed, patience=s.patience, resolve_every=s.resolve_every, polish=s.polish,
        max_polish_passes=s.max_polish_passes,
    )


def _described_set(cfg):
    dom = _domain(cfg)
    return IndicatorSet.from_exterior(dom, cfg.exterior_set())


def _snapshot_path(cfg, out):
    snap = cfg.diagnostics.snapshot
    return Path(snap) if snap else Path(out) / "snapshot.txt"


def _c_hat(cfg, n, sigma):
    mode = cfg.diagnostics.c_hat
    if mode == "analytic":
        return analytic_constant(n, sigma)
    if mode == "auto":
        return calibrate_constant(n, sigma, h=cfg.diagnostics.calibration_h).c_hat
    return float(mode)


# -- subcommands ---------------------------------------------------------------------

def cmd_minimize(cfg, out, log):
    prob = _problem(cfg)
    res = minimize(prob.phi, prob.exterior, prob.domain, prob.sigma, _params(cfg), problem=prob)
    write_snapshot(res.config, out / "snapshot.txt")
    hist = out / "history.csv"
    write_history_csv(res.history, hist)
    b = res.config.breakdown
    log(f"total = {b.total!r} (dirichlet {b.dirichlet!r}, per_sigma {b.per_sigma!r}), seed {res.seed}")
    if not res.converged:
        raise GateError("max_sweeps exceeded without convergence; best-so-far written")
    return {"history": (hist, "sweep", "total")}


def cmd_persigma(cfg, out, log):
    E = _described_set(cfg)
    p = cfg.problem
    table = build_weight_table(E.domain, p.sigma, p.quadrature_depth)
    per = per_sigma_terms(E, table, build_tail_model(E.domain, E.exterior, p.sigma))
    path = _write_csv(out / "persigma.csv", ["interior", "exterior", "total"],
                      [(per.interior, per.exterior, per.total)])
    log(f"per_sigma = {per.total:.5f}")
    return {"persigma": (path, None, None)}


def cmd_curvature(cfg, out, log):
    E = _described_set(cfg)
    dom = E.domain
    p = cfg.problem
    ctabs = build_curvature_tables(dom, p.sigma, p.quadrature_depth)
    tails = build_tail_model(dom, E.exterior, p.sigma)
    cells = np.argwhere(E.boundary_mask() & dom.omega_mask)
    rows = []
    for c in map(tuple, cells):
        rows.append(tuple(int(i) - dom.M for i in c) + (frac_curvature(E, c, ctabs=ctabs, tails=tails),))
    head = ["ix", "kappa"] if dom.n == 1 else ["ix", "iy", "kappa"]
    path = _write_csv(out / "curvature.csv", head, rows)
    log(f"{len(rows)} boundary cells")
    return {"curvature": (path, "ix", "kappa")}


def cmd_diagnose(cfg, out, log):
    config = read_snapshot(_snapshot_path(cfg, out))
    dom = config.domain
    d = cfg.diagnostics
    wanted = set(d.reports)
    table = build_weight_table(dom, config.sigma, cfg.problem.quadrature_depth)
    c_hat = _c_hat(cfg, dom.n, config.sigma) if "weiss" in wanted else None
    radii = list(d.radii) or None
    rep = diag.diagnose(config, radii, c_hat=c_hat, table=table, extension_refine=d.extension_refine)
    nan = np.full(len(rep.radii), math.nan)
    if "acf" not in wanted:
        rep.psi = nan
    if "density" not in wanted:
        rep.density = nan
    if "lambda" not in wanted:
        rep.lambda_plus = rep.lambda_minus = nan
    if "flatness" not in wanted:
        rep.flat_width = nan
    report = out / "report.csv"
    diag.write_report_csv(rep, report)
    cells = out / "cells.csv"
    diag.write_cells_csv(rep.el if "el" in wanted else diag.ELReport([], 0), dom.n, cells)
    summary = [
        ("center", " ".join(_f(v) for v in rep.center)),
        ("c_hat", _f(rep.c_hat)),
        ("holder_exponent", "flat" if rep.holder.flat else _f(rep.holder.exponent)),
        ("holder_fit_rms", _f(rep.holder.residual)),
        ("lambda_exponent", "flat" if rep.lambda_fit.flat else _f(rep.lambda_fit.exponent)),
        ("lambda_fit_rms", _f(rep.lambda_fit.residual)),
        ("el_max_residual", _f(rep.el.max_abs)),
        ("el_skipped", str(rep.el.skipped)),
        ("blowup_defects", " ".join(_f(v) for v in rep.blowup_defect)),
    ]
    _write_csv(out / "summary.csv", ["quantity", "value"], summary)
    for note in rep.notes:
        log(note)
    log(f"{len(rep.radii)} radii, {len(rep.el.cells)} flat boundary cells")
    return {"report": (report, "r", "phi"), "cells": (cells, None, None)}


def cmd_calibrate(cfg, out, log):
    p = cfg.problem
    res = calibrate_constant(p.n, p.sigma, h=cfg.diagnostics.calibration_h, raise_on_spread=False)
    rows = [(label, lhs, rhs, ratio) for label, lhs, rhs, ratio in res.estimates]
    path = _write_csv(out / "calibration.csv", ["perturbation", "per_difference", "energy_difference", "ratio"],
                      rows)
    _write_csv(out / "calibration_summary.csv", ["c_hat", "spread", "analytic"],
               [(res.c_hat, res.spread, analytic_constant(p.n, p.sigma))])
    log(f"c_hat = {res.c_hat:.6g}, spread {res.spread:.2%}")
    if not res.ok():
        raise GateError(f"calibration spread {res.spread:.2%} exceeds 5%; refine the mesh")
    return {"calibration": (path, None, None)}


def cmd_sweep_sigma(cfg, out, log):
    params = _params(cfg)
    rows = []
    flagged = []
    for sigma in cfg.problem.sigmas:
        prob = _problem(cfg, sigma)
        res = minimize(prob.phi, prob.exterior, prob.domain, sigma, params, problem=prob)
        b = res.config.breakdown
        rows.append((sigma, b.dirichlet, b.per_sigma, b.total, len(res.history) - 1, int(res.converged)))
        if not res.converged:
            flagged.append(sigma)
        log(f"sigma = {sigma:g}: total {b.total!r}")
    path = _write_csv(out / "sweep_sigma.csv",
                      ["sigma", "dirichlet", "per_sigma", "total", "sweeps", "converged"], rows)
    if flagged:
        raise GateError(f"no convergence for sigma in {flagged}")
    return {"sweep_sigma": (path, "sigma", "total")}


def cmd_blowup(cfg, out, log):
    config = read_snapshot(_snapshot_path(cfg, out))
    x0 = diag.free_boundary_point(config.E)
    radii = sorted(cfg.diagnostics.blowup_radii, reverse=True)
    defects = diag.blowup_sequence(config, radii, x0)
    rows = [(radii[k], radii[k + 1], d) for k, d in enumerate(defects)]
    path = _write_csv(out / "blowup.csv", ["r_from", "r_to", "defect"], rows)
    log("defects " + " ".join(f"{d:.4g}" for d in defects))
    return {"blowup": (path, "r_to", "defect")}


COMMANDS = {
    "minimize": cmd_minimize,
    "persigma": cmd_persigma,
    "curvature": cmd_curvature,
    "diagnose": cmd_diagnose,
    "calibrate": cmd_calibrate,
    "sweep-sigma": cmd_sweep_sigma,
    "blowup": cmd_blowup,
}


def run(subcommand, cfg, out_dir=None, log=print):
    """Execute ``subcommand``; returns the artifact paths.  Raises on failure."""
    out_dir = Path(out_dir or cfg.output.directory)
    with output_lock(out_dir) as out:
        (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
        gate = None
        try:
            arts = COMMANDS[subcommand](cfg, out, log)
        except GateError as exc:
            gate, arts = exc, {}
        if cfg.output.plot:
            for path, xcol, ycol in arts.values():
                if xcol:
                    plot_csv(path, xcol, ycol)
        if gate is not None:
            raise gate
        return {k: v[0] for k, v in arts.items()}


def error_line(subcommand, exc):
    msg = " ".join(str(exc).split())
    return f"fracmin: error: subcommand={subcommand} kind={type(exc).__name__} message={msg}"


def build_parser():
    ap = argparse.ArgumentParser(prog="fracmin", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="INI experiment file")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (overrides [search] seed)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ValueError("seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"{args.config}: {err}", file=sys.stderr)
        print(error_line(args.subcommand, exc), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(error_line(args.subcommand, exc), file=sys.stderr)
        return 2
    try:
        run(args.subcommand, cfg, args.out)
    except Exception as exc:  # every module failure ends in one parsable line
        print(error_line(args.subcommand, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
