import numpy as np
import pytest

from fracmin.grid import Configuration, Exterior, IndicatorSet, build_domain
from fracmin.harmonic import replacement
from fracmin.kernel import per_sigma
from fracmin.minimize import (
    HISTORY_COLUMNS,
    SearchParams,
    dirichlet_estimate,
    exact_delta,
    flip_scope,
    make_problem,
    minimize,
    propose_flip,
    sample_boundary,
    scan_single_interface_1d,
    sweep,
    total_energy,
    write_history_csv,
)


def _bench_problem(h=0.02):
    dom = build_domain(1, 1.0, h, 2.0)
    ext = Exterior.half_space([1.0])
    return make_problem(dom, 0.5, sample_boundary(dom, lambda p: p[:, 0]), ext)


def _interface(prob, a):
    dom = prob.domain
    x = dom.centers[..., 0]
    return prob.evaluate(IndicatorSet.from_exterior(dom, prob.exterior, inside=x > a))


def test_zero_data_zero_energy():
    dom = build_domain(2, 1.0, 1 / 8, 2.0)
    ext = Exterior.all_outside()
    prob = make_problem(dom, 0.5, np.zeros(dom.shape), ext)
    res = minimize(prob.phi, ext, dom, 0.5, problem=prob)
    assert not res.config.E.inside[dom.omega_mask].any()
    assert res.config.breakdown.total == 0.0


def test_half_plane_breakdown():
    dom = build_domain(2, 1.0, 0.025, 2.0)
    ext = Exterior.half_space([0.0, 1.0])
    prob = make_problem(dom, 0.5, sample_boundary(dom, lambda p: p[:, 1]), ext)
    cfg = prob.evaluate(IndicatorSet.from_exterior(dom, ext))
    b = cfg.breakdown
    assert b.dirichlet == pytest.approx(np.pi, rel=0.03)
    assert b.per_sigma == pytest.approx(per_sigma(cfg.E, prob.table, prob.tails), rel=1e-12)
    assert b.total == b.dirichlet + b.per_sigma


def test_total_invariant_under_relabeling():
    prob = _bench_problem()
    cfg = _interface(prob, 0.2)
    # mirror x -> -x: the same pair with its cells listed in reverse order
    E = IndicatorSet(cfg.domain, cfg.E.phase[::-1].copy(), Exterior.half_space([-1.0]))
    mirrored = Configuration(E, cfg.sigma, cfg.phi[::-1], cfg.u_plus[::-1], cfg.u_minus[::-1])
    a = total_energy(cfg, prob.table)
    b = total_energy(mirrored, prob.table)
    assert b.total == pytest.approx(a.total, rel=1e-12)
    assert b.dirichlet == pytest.approx(a.dirichlet, rel=1e-12)


def test_dirichlet_estimate_deep_cell():
    dom = build_domain(1, 1.0, 0.02, 2.0)
    x = dom.centers[..., 0]
    E = IndicatorSet.from_exterior(dom, Exterior.all_inside())
    s = 0.7
    up = np.where(dom.omega_mask | dom.layer_mask, s * (x + 2), 0.0)
    cfg = Configuration(E, 0.5, up, up, np.zeros(dom.shape))
    cell = (int(np.argmin(np.abs(x))),)
    # removing the cell from E forces u+ to vanish there, which costs energy
    assert dirichlet_estimate(cfg, cell) == pytest.approx(dom.h * s * s, rel=1e-9)


def test_flip_and_unflip_are_opposite():
    prob = _bench_problem()
    cfg = _interface(prob, 0.3)
    x = prob.domain.centers[..., 0]
    cell = (int(np.argmin(np.abs(x - 0.31))),)
    est = propose_flip(cfg, cell, prob.table)
    _, new = exact_delta(prob, cfg, cell)
    back = propose_flip(new, cell, prob.table)
    assert np.sign(est) == -np.sign(back)
    assert abs(est + back) < 0.2 * abs(est)


def test_propose_flip_scope_errors():
    prob = _bench_problem()
    cfg = _interface(prob, 0.3)
    scope = flip_scope(cfg.E, 1)
    far = (int(np.argmin(np.abs(prob.domain.centers[..., 0] + 0.8))),)
    with pytest.raises(ValueError):
        propose_flip(cfg, far, prob.table, scope=scope)
    layer = (int(np.flatnonzero(prob.domain.layer_mask)[0]),)
    with pytest.raises(ValueError):
        propose_flip(cfg, layer, prob.table)


@pytest.mark.parametrize("h", [0.02, 0.01])
def test_estimate_matches_exact_on_flat_interface(h):
    prob = _bench_problem(h)
    cfg = _interface(prob, 0.3)
    x = prob.domain.centers[..., 0]
    for side in (-1, 1):
        cell = (int(np.argmin(np.abs(x - 0.3 - side * h / 2))),)
        est = propose_flip(cfg, cell, prob.table)
        exact, _ = exact_delta(prob, cfg, cell)
        assert abs(est - exact) <= 0.2 * abs(exact)


def test_sweep_without_acceptance_is_identity():
    prob = _bench_problem()
    cfg = _interface(prob, 0.0)
    res = sweep(cfg, SearchParams(), prob, np.random.default_rng(0), threshold=1e6)
    assert res.accepted == 0 and not res.committed
    assert res.config is cfg
    assert res.config.breakdown.total == cfg.breakdown.total


def test_committed_sweep_decreases():
    prob = _bench_problem()
    cfg = _interface(prob, 0.4)
    res = sweep(cfg, SearchParams(), prob, np.random.default_rng(0))
    assert res.committed
    assert res.config.breakdown.total < cfg.breakdown.total


def test_benchmark_matches_scan(bench_1d):
    prob, res = bench_1d
    faces, totals = scan_single_interface_1d(prob)
    assert res.converged
    assert abs(res.config.breakdown.total - totals.min()) <= 1e-3
    x = prob.domain.centers[..., 0]
    inside = res.config.E.inside & prob.domain.omega_mask
    a = x[inside].min() - prob.domain.h / 2
    assert abs(a - faces[np.argmin(totals)]) <= 2 * prob.domain.h


def test_nonnegative_data_all_inside():
    dom = build_domain(2, 1.0, 1 / 8, 2.0)
    ext = Exterior.all_inside()
    phi = sample_boundary(dom, lambda p: 2 + p[:, 0])
    prob = make_problem(dom, 0.5, phi, ext)
    res = minimize(phi, ext, dom, 0.5, problem=prob)
    cfg = res.config
    assert np.all(cfg.E.inside[cfg.u_plus > 0])
    v = replacement(dom, prob.phi, np.zeros(dom.shape, bool))
    assert np.max(np.abs(cfg.u_plus - v)[dom.omega_mask]) < 1e-8
    assert cfg.breakdown.per_sigma == 0.0


def test_history_nonincreasing_at_commits(bench_1d):
    _, res = bench_1d
    totals = [row["total"] for row in res.history if row["committed"]]
    assert all(b < a for a, b in zip(totals[1:], totals[2:])) or len(totals) < 3
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def test_deterministic():
    prob = _bench_problem()
    a = minimize(prob.phi, prob.exterior, prob.domain, 0.5, SearchParams(rng_seed=5), problem=prob)
    b = minimize(prob.phi, prob.exterior, prob.domain, 0.5, SearchParams(rng_seed=5), problem=prob)
    assert a.history == b.history
    assert a.seed == 5


def _flip_sample(prob, cfg, mask, count, seed=0):
    cells = [tuple(c) for c in np.argwhere(mask)]
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(cells), size=min(count, len(cells)), replace=False)
    return [exact_delta(prob, cfg, cells[k])[0] for k in pick]


def test_local_minimality(bench_1d):
    prob, res = bench_1d
    deltas = _flip_sample(prob, res.config, flip_scope(res.config.E, 2), 20)
    assert len(deltas) >= 4
    assert min(deltas) >= -1e-8


def test_local_minimality_beyond_band(bench_1d):
    prob, res = bench_1d
    deltas = _flip_sample(prob, res.config, prob.domain.omega_mask, 20, seed=1)
    assert len(deltas) == 20
    assert min(deltas) >= -1e-8


def test_subdomain_consistency(bench_1d):
    prob, res = bench_1d
    dom = prob.domain
    near = dom.omega_mask & (np.abs(dom.centers[..., 0]) < 0.5)
    deltas = _flip_sample(prob, res.config, near & flip_scope(res.config.E, 3), 20)
    assert min(deltas) >= -1e-8


def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(flip_scope="everywhere")
    with pytest.raises(ValueError):
        SearchParams(decay=1.0)
    with pytest.raises(ValueError):
        SearchParams(T0=-1)
    assert SearchParams(flip_scope="boundary_only", band=5).width == 1


def test_annealing_is_reproducible():
    prob = _bench_problem()
    params = SearchParams(T0=0.01, decay=0.5, rng_seed=3, max_sweeps=10)
    a = minimize(prob.phi, prob.exterior, prob.domain, 0.5, params, problem=prob)
    b = minimize(prob.phi, prob.exterior, prob.domain, 0.5, params, problem=prob)
    assert a.history == b.history


def test_history_csv(tmp_path, bench_1d):
    _, res = bench_1d
    path = tmp_path / "history.csv"
    write_history_csv(res.history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert len(lines) == len(res.history) + 1
