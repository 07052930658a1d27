import csv
import math

import numpy as np
import pytest

from fracmin.grid import Configuration, Exterior, IndicatorSet, UnderResolvedError, build_domain
from fracmin.extension import poisson_extension
from fracmin.kernel import build_weight_table
from fracmin.diagnostics import (
    REPORT_COLUMNS,
    acf_psi,
    best_flatness,
    blowup_sequence,
    density_report,
    diagnose,
    dyadic_radii,
    el_residual,
    flatness,
    holder_fit,
    lambda_product,
    shell_integral,
    weiss_phi,
    write_cells_csv,
    write_report_csv,
)


def _pair(dom, E, up=None, um=None, sigma=0.5):
    z = np.zeros(dom.shape)
    up = z if up is None else up
    um = z if um is None else um
    return Configuration(E, sigma, np.where(dom.layer_mask, up - um, 0.0), up, um)


def _half(n, h, normal=None):
    dom = build_domain(n, 1.0, h, 2.0)
    normal = normal or ([1.0] if n == 1 else [0.0, 1.0])
    return dom, IndicatorSet.from_exterior(dom, Exterior.half_space(normal))


def test_shell_integral_constant():
    dom = build_domain(2, 1.0, 1 / 32, 2.0)
    for r in (0.25, 0.5, 0.9):
        assert shell_integral(np.ones(dom.shape), dom, r) == pytest.approx(2 * math.pi * r, rel=0.05)


def test_weiss_all_inside_is_zero():
    dom = build_domain(1, 1.0, 1 / 16, 2.0)
    E = IndicatorSet.from_exterior(dom, Exterior.all_inside())
    U = poisson_extension(E, 0.5, refine=2)
    cfg = _pair(dom, E)
    for r in (0.25, 0.5, 1.0):
        assert weiss_phi(cfg, U, r, 3.0) == pytest.approx(0.0, abs=1e-12)


def test_weiss_trivial_cone_constant():
    dom, E = _half(1, 1 / 32)
    U = poisson_extension(E, 0.5, refine=8)
    vals = [weiss_phi(_pair(dom, E), U, r, 3.0) for r in (0.25, 0.5, 1.0)]
    assert (max(vals) - min(vals)) / max(vals) <= 0.03


def test_weiss_rejects_small_radius():
    dom, E = _half(1, 1 / 16)
    U = poisson_extension(E, 0.5)
    with pytest.raises(UnderResolvedError):
        weiss_phi(_pair(dom, E), U, 3 / 16, 3.0)


def test_psi_linear_two_phase():
    # the face straddling y = 0 carries half its continuum energy in each
    # phase, an O(h / r) deficit: 7% at r = 8h, 4% at r = 16h
    dom, E = _half(2, 1 / 64)
    y = dom.centers[..., 1]
    up, um = np.maximum(y, 0), np.maximum(-y, 0)
    for r in (0.25, 0.5, 0.75, 1.0):
        assert acf_psi(up, um, r, dom) == pytest.approx(math.pi ** 2 / 4, rel=0.05)


def test_psi_one_phase_zero():
    dom, _ = _half(2, 1 / 16)
    y = dom.centers[..., 1]
    assert acf_psi(np.maximum(y, 0), np.zeros(dom.shape), 0.5, dom) == 0.0


def test_density_half_and_quarter():
    dom, E = _half(2, 1 / 32)
    radii = [0.25, 0.5, 1.0]
    for r, d in zip(radii, density_report(E, radii)):
        assert abs(d - 0.5) <= dom.h / r
    c = dom.centers
    Q = IndicatorSet.from_exterior(dom, Exterior.all_outside(), inside=(c[..., 0] > 0) & (c[..., 1] > 0))
    for r, d in zip(radii, density_report(Q, radii)):
        assert abs(d - 0.25) <= dom.h / r


def test_density_needs_boundary_point():
    dom, E = _half(2, 1 / 16)
    with pytest.raises(ValueError):
        density_report(E, [0.25], center=[0.0, 0.4])


def test_holder_exact_power():
    dom = build_domain(2, 1.0, 1 / 32, 2.0)
    c = dom.centers
    rad = np.linalg.norm(c, axis=-1)
    theta = np.arctan2(c[..., 1], c[..., 0])
    u = rad ** 0.75 * np.sin(theta)
    fit = holder_fit(u, dyadic_radii(dom.h), dom)
    assert fit.exponent == pytest.approx(0.75, abs=0.05)


def test_holder_linear_and_flat():
    dom = build_domain(1, 1.0, 0.01, 2.0)
    x = dom.centers[..., 0]
    assert holder_fit(x, dyadic_radii(dom.h), dom).exponent == pytest.approx(1.0, abs=0.05)
    fit = holder_fit(np.zeros(dom.shape), dyadic_radii(dom.h), dom)
    assert fit.flat and fit.describe() == "exactly flat"


def test_lambda_one_phase_zero():
    dom = build_domain(1, 1.0, 0.01, 2.0)
    x = dom.centers[..., 0]
    rep = lambda_product(np.maximum(x, 0), np.zeros(dom.shape), dyadic_radii(dom.h), dom, 0.5)
    assert np.all(rep.product == 0)
    assert rep.fit.flat


@pytest.mark.parametrize("sigma", [0.3, 0.5, 0.7])
def test_lambda_linear_exponent(sigma):
    dom = build_domain(2, 1.0, 1 / 32, 2.0)
    y = dom.centers[..., 1]
    rep = lambda_product(np.maximum(y, 0), np.maximum(-y, 0), dyadic_radii(dom.h), dom, sigma)
    assert rep.fit.exponent == pytest.approx(sigma, abs=1e-9)
    assert np.allclose(rep.plus, rep.radii ** (sigma / 2), rtol=1e-3)


@pytest.mark.parametrize("n,h", [(1, 0.02), (2, 1 / 8)])
def test_el_trivial_pair(n, h):
    dom, E = _half(n, h)
    table = build_weight_table(dom, 0.5)
    el = el_residual(_pair(dom, E), table)
    assert el.cells
    assert el.max_abs <= 1e-6


def test_el_linear_on_half_space():
    dom, E = _half(1, 0.02)
    x = dom.centers[..., 0]
    cfg = _pair(dom, E, np.maximum(x, 0), np.maximum(-x, 0))
    el = el_residual(cfg, build_weight_table(dom, 0.5))
    assert el.cells
    for c in el.cells:
        assert c.grad_plus_sq == pytest.approx(1.0) and c.grad_minus_sq == pytest.approx(1.0)
        assert abs(c.residual) <= 1e-6


def test_blowup_homogeneous_input():
    dom, E = _half(1, 1 / 64)
    x = dom.centers[..., 0]
    a = 1 - 0.25
    cfg = _pair(dom, E, np.maximum(x, 0) ** a, np.maximum(-x, 0) ** a)
    defect = blowup_sequence(cfg, [1.0, 0.5, 0.25], center=[0.0])
    assert len(defect) == 2
    # nearest-cell resampling at scale r shifts points by up to h / (2r)
    assert np.all(defect <= (dom.h / (2 * 0.25)) ** a)


def test_blowup_zero_field():
    dom, E = _half(2, 1 / 16)
    defect = blowup_sequence(_pair(dom, E), [1.0, 0.5], center=[0.0, 0.0])
    assert np.all(defect == 0)


def test_flatness_half_plane():
    dom, E = _half(2, 1 / 16)
    for r in (0.25, 0.5):
        assert flatness(E, r, [0.0, 1.0]) <= dom.h
        assert flatness(E, r, [1.0, 0.0]) == pytest.approx(2 * r, abs=2 * dom.h)
        width, e = best_flatness(E, r)
        assert width <= dom.h and abs(e[1]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        flatness(E, 0.5, [1.0, 1.0])


@pytest.fixture(scope="module")
def report(bench_1d):
    prob, res = bench_1d
    before = res.config.fingerprint()
    rep = diagnose(res.config, c_hat=3.0, table=prob.table, extension_refine=4)
    return before, res.config, rep


def test_diagnostics_are_read_only(report):
    before, cfg, _ = report
    assert cfg.fingerprint() == before


def test_report_shares_radii(report):
    _, _, rep = report
    k = len(rep.radii)
    assert k >= 3
    for arr in (rep.phi, rep.psi, rep.density, rep.lambda_prod, rep.flat_width):
        assert len(arr) == k and np.all(np.isfinite(arr))
    assert np.isfinite(rep.holder.residual) and np.isfinite(rep.lambda_fit.residual)


def test_report_csvs(tmp_path, report):
    _, cfg, rep = report
    write_report_csv(rep, tmp_path / "report.csv")
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == len(rep.radii) + 1
    write_cells_csv(rep.el, cfg.domain.n, tmp_path / "cells.csv")
    rows = list(csv.reader(open(tmp_path / "cells.csv")))
    assert rows[0] == ["ix", "kappa", "grad_plus_sq", "grad_minus_sq", "residual"]
    assert len(rows) == len(rep.el.cells) + 1
