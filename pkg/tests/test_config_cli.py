import csv
import os
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from fracmin.cli import LOCK_NAME, LockedError, main, output_lock, run
from fracmin.config import (
    ConfigError,
    DiagnosticsConfig,
    ExperimentConfig,
    ProblemConfig,
    SearchConfig,
    parse_config,
    serialize_config,
)

SMALL = """\
[problem]
n = 1
h = 0.02
[search]
seed = 4
[diagnostics]
c_hat = analytic
[output]
plot = true
"""


def _write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_config_defaults():
    cfg = parse_config("[problem]\nn = 1\n")
    assert cfg == ExperimentConfig()
    assert cfg.problem.truncation == 2.0
    assert cfg.search.flip_scope == "boundary_band" and cfg.search.T0 == 0.0


def test_sigma_out_of_range_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("[problem]\nn = 1\n\nsigma = 1.5\n")
    assert info.value.errors == ["line 4: sigma out of range [0.1,0.9]"]


def test_all_errors_reported():
    text = "[problem]\nsigma = 0.05\nwidth = 3\n[search]\ndecay = 2\n[extra]\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = info.value.errors
    assert len(errs) == 5
    joined = "\n".join(errs)
    for bit in ("line 2: sigma out of range", "line 3: unknown key 'width'", "line 5: decay",
                "line 6: unknown section", "missing required field n"):
        assert bit in joined


def test_comments_and_fractions():
    cfg = parse_config("# experiment\n[problem]\nn = 2  # plane\nh = 1/16\n; note\n")
    assert cfg.problem.n == 2 and cfg.problem.h == 1 / 16


sigmas = st.floats(0.1, 0.9, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(
    n=st.sampled_from([1, 2]),
    sigma=sigmas,
    sweep=st.lists(sigmas, min_size=1, max_size=4).map(tuple),
    seed=st.integers(0, 2 ** 64 - 1),
    scope=st.sampled_from(["boundary_only", "boundary_band"]),
    T0=st.floats(0, 10, allow_nan=False),
    boundary=st.sampled_from(["two_phase_linear(0.25)", "constant(-1.5)", "radial_power(0.75)"]),
    radii=st.lists(st.floats(0.01, 1, allow_nan=False), max_size=3).map(tuple),
    plot=st.booleans(),
)
def test_round_trip(n, sigma, sweep, seed, scope, T0, boundary, radii, plot):
    cfg = ExperimentConfig(
        problem=ProblemConfig(n=n, sigma=sigma, sigmas=sweep, boundary=boundary),
        search=SearchConfig(seed=seed, flip_scope=scope, T0=T0),
        diagnostics=DiagnosticsConfig(radii=radii, c_hat="analytic"),
    )
    cfg = replace(cfg, output=replace(cfg.output, plot=plot))
    assert parse_config(serialize_config(cfg)) == cfg


def test_persigma_half_line(tmp_path, capsys):
    path = _write(tmp_path, "[problem]\nn = 1\nsigma = 0.5\nexterior = half_space\n")
    assert main(["persigma", "--config", path, "--out", str(tmp_path / "out")]) == 0
    printed = capsys.readouterr().out
    value = float(printed.split("per_sigma =")[1].split()[0])
    assert value == pytest.approx(5.65685, abs=1e-3)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = parse_config(SMALL)
    out = root / "run"
    run("minimize", cfg, out, log=lambda *_: None)
    run("diagnose", cfg, out, log=lambda *_: None)
    return cfg, out


def test_diagnose_after_minimize(pipeline):
    _, out = pipeline
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert rows
    for row in rows:
        for key, val in row.items():
            assert val not in ("", "nan"), key
    assert (out / "report.svg").exists() and (out / "history.svg").exists()


def test_sweep_sigma_rows(tmp_path):
    cfg = parse_config("[problem]\nn = 1\nh = 0.05\nsigmas = 0.2, 0.5, 0.8\n")
    run("sweep-sigma", cfg, tmp_path, log=lambda *_: None)
    rows = list(csv.DictReader(open(tmp_path / "sweep_sigma.csv")))
    assert [float(r["sigma"]) for r in rows] == [0.2, 0.5, 0.8]
    assert all(float(r["total"]) > 0 for r in rows)


def test_error_line_and_exit_code(tmp_path, capsys):
    bad = _write(tmp_path, "[problem]\nn = 1\nsigma = 1.5\n")
    assert main(["minimize", "--config", bad]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[0].endswith("line 3: sigma out of range [0.1,0.9]")
    assert err[-1].startswith("fracmin: error: subcommand=minimize kind=ConfigError message=")
    # a module failure: diagnose without a snapshot
    cfg = _write(tmp_path, "[problem]\nn = 1\n")
    assert main(["diagnose", "--config", cfg, "--out", str(tmp_path / "empty")]) == 1
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("fracmin: error: subcommand=diagnose kind=FileNotFoundError")


def test_lock_file(tmp_path):
    with output_lock(tmp_path):
        assert (tmp_path / LOCK_NAME).exists()
        with pytest.raises(LockedError):
            with output_lock(tmp_path):
                pass
    assert not (tmp_path / LOCK_NAME).exists()


def _artifacts(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.suffix in (".csv", ".svg", ".txt")}


def test_reruns_are_byte_identical(tmp_path, pipeline):
    cfg, first = pipeline
    again = tmp_path / "again"
    run("minimize", cfg, again, log=lambda *_: None)
    run("diagnose", cfg, again, log=lambda *_: None)
    a, b = _artifacts(first), _artifacts(again)
    assert a.keys() == b.keys() and len(a) >= 6
    assert a == b


def test_seed_override(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["minimize", "--config", path, "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    assert "seed = 9" in (tmp_path / "o" / "config.ini").read_text()
    assert not os.path.exists(tmp_path / "o" / LOCK_NAME)
