import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from heavytail_ou import cli
from heavytail_ou.config import EXPERIMENTS, Budgets, RunConfig, ValidateOptions, load, loads
from heavytail_ou.errors import ConfigError
from heavytail_ou.ou import ModelParams

SMALL = """
[model]
gamma = 1.0
p = 4.0

[run]
seed = 7

[budgets]
n_samples = 2000
n_paths = 2
n_cycles = 2000
horizons = [5.0, 10.0]
thresholds = [0.5, 1.0]
instanton_horizons = [2.5, 5.0, 10.0, 20.0]
instanton_dt = 0.02

[validate]
criteria = [2]
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def _run(exp, cfg_file, out, *extra):
    return cli.main([exp, "--config", str(cfg_file), "--out", str(out), *extra])


# --- configuration -------------------------------------------------------------

budgets = st.builds(
    Budgets,
    n_samples=st.integers(1, 10**7), n_paths=st.integers(1, 100),
    n_cycles=st.integers(1, 10**7),
    horizons=st.lists(st.floats(0.1, 1e4), min_size=1, max_size=4).map(tuple),
    thresholds=st.lists(st.floats(-10, 10), max_size=3).map(tuple),
    target_probability=st.floats(1e-6, 0.5), dt=st.floats(1e-4, 1.0),
    eps0=st.floats(0.0, 1.0), workers=st.integers(1, 8),
)
configs = st.builds(
    RunConfig,
    model=st.builds(ModelParams, st.floats(0.01, 100), st.floats(0.5, 10)),
    experiment=st.sampled_from(EXPERIMENTS),
    seed=st.integers(0, 2**64 - 1),
    budgets=budgets,
    output_dir=st.text("abcxyz_/0123", min_size=1, max_size=12),
    validate=st.builds(ValidateOptions,
                       criteria=st.lists(st.integers(1, 11), min_size=1, max_size=11).map(tuple)),
)


@settings(max_examples=100, deadline=None)
@given(configs)
def test_config_round_trip(cfg):
    back = loads(cfg.dumps())
    assert back.to_dict() == cfg.to_dict()
    assert back.digest() == cfg.digest()


def test_overrides_apply_before_validation():
    # the experiment may come only from the command line
    cfg = loads("[model]\np = 3.0\n", experiment="tails", seed=5, output_dir="x")
    assert (cfg.experiment, cfg.seed, cfg.output_dir, cfg.model.p) == ("tails", 5, "x", 3.0)


@pytest.mark.parametrize("text", [
    "[model\n",
    "[model]\ngamma = -1.0\n[run]\nexperiment = 'tails'\n",
    "[run]\nexperiment = 'fly'\n",
    "[run]\nexperiment = 'tails'\n[budgets]\nn_samples = 0\n",
    "[run]\nexperiment = 'tails'\n[budgets]\nhorizons = []\n",
    "[run]\nexperiment = 'tails'\n[budgets]\nwarp = 3\n",
    "[run]\nexperiment = 'tails'\nseed = -4\n",
    "[run]\nexperiment = 'tails'\n[extras]\n",
    "[run]\nexperiment = 'validate'\n[validate]\ncriteria = [12]\n",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.toml")


# --- command line -----------------------------------------------------------------

def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[budgets]\nn_samples = -3\n")
    assert _run("tails", bad, tmp_path / "o") == 2
    assert "configuration error" in capsys.readouterr().err
    assert _run("tails", tmp_path / "missing.toml", tmp_path / "o") == 2


def test_instanton_then_report(cfg_file, tmp_path):
    out = tmp_path / "o"
    assert _run("instanton", cfg_file, out) == 0
    rows = (out / "instanton.csv").read_text().splitlines()
    assert rows[0].startswith("H,dt,n_grid,J_H")
    assert len(rows) == 5
    info = json.loads((out / "jinf.json").read_text())
    assert info["J_inf"] == pytest.approx(2 / math.sqrt(3), rel=2e-3)
    # report needs the tails table as well
    assert _run("report", cfg_file, out) == 2
    assert _run("tails", cfg_file, out) == 0
    assert _run("report", cfg_file, out) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "x,T,mc_scaled_rate,theory_rate,gap_relative,status"
    assert len(lines) == 1 + 2 * 2
    for line in lines[1:]:
        x, T, mc, theory, gap, status = line.split(",")
        assert float(theory) == pytest.approx(info["J_inf"] * float(x) ** 0.5, rel=1e-15)
    manifest = json.loads((out / "manifest_report.json").read_text())
    assert manifest["config_sha256"] and manifest["seed"] == 7 and "numpy" in manifest["versions"]


def test_every_cell_is_finite_or_flagged(cfg_file, tmp_path):
    out = tmp_path / "o"
    for exp in ("simulate", "excursions", "tails"):
        assert _run(exp, cfg_file, out) == 0
    for table in out.glob("*.csv"):
        lines = table.read_text().splitlines()
        header = lines[0].split(",")
        for line in lines[1:]:
            cells = dict(zip(header, line.split(",")))
            if "nan" in cells.values():
                assert cells.get("status", "ok") != "ok"


def test_rerun_is_byte_identical(cfg_file, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        for exp in ("simulate", "excursions", "tails", "instanton", "report"):
            assert _run(exp, cfg_file, out) == 0
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert len(names) == 7
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_seed_override_changes_samples(cfg_file, tmp_path):
    _run("tails", cfg_file, tmp_path / "a")
    _run("tails", cfg_file, tmp_path / "b", "--seed", "8")
    assert (tmp_path / "a" / "tails.csv").read_text() != (tmp_path / "b" / "tails.csv").read_text()


def test_validate_pass_fail_and_repeatability(cfg_file, tmp_path):
    assert _run("validate", cfg_file, tmp_path / "a") == 0
    assert _run("validate", cfg_file, tmp_path / "b") == 0
    assert (tmp_path / "a" / "validate.csv").read_bytes() == \
        (tmp_path / "b" / "validate.csv").read_bytes()
    corrupted = tmp_path / "corrupt.toml"
    corrupted.write_text(SMALL + '\n[validate.tolerances."2"]\nrel_tol = -1.0\n')
    assert _run("validate", corrupted, tmp_path / "c") == 1
    assert "false" in (tmp_path / "c" / "validate.csv").read_text()
