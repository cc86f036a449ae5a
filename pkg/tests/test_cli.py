import csv
import json
import math

import pytest

from hamshape.cli import main
from hamshape.config import RunConfig, from_preset, load_config
from hamshape.errors import ConfigError


def _json(text):
    return json.loads(text)


# -- configuration -----------------------------------------------------------

def test_preset_overrides():
    cfg = from_preset("example2", n_per_side=24)
    assert cfg.n_per_side == 24 and cfg.epsilon == 0.9 and cfg.cost == "distributed"
    with pytest.raises(ConfigError):
        from_preset("example3")


def test_ini_roundtrip(tmp_path):
    cfg = from_preset("example2", n_per_side=32, variant="i")
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_ini())
    again = load_config(path)
    assert again == cfg


@pytest.mark.parametrize("text", [
    "[mesh]\nn_side = 4\n",
    "[solver]\ntol = 1\n",
    "[problem]\nepsilon = abc\n",
    "[problem]\nepsilon = -1\n",
    "[problem]\ng0 = x^^2\n",
    "[problem]\ncost = distributed\n",
    "[mesh]\ndegree = 3\n",
])
def test_bad_config_rejected(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_names_preset(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[run]\npreset = example1\n[mesh]\nn_per_side = 40\n")
    cfg = load_config(path)
    assert cfg.g0 == from_preset("example1").g0 and cfg.n_per_side == 40


def test_defaults_valid():
    RunConfig().validate()


# -- commands ----------------------------------------------------------------

def test_run_rejects_zero_epsilon(tmp_path, capsys):
    code = main(["run", "--preset", "example1", "--epsilon", "0", "--out", str(tmp_path / "r")])
    assert code == 2
    assert "epsilon" in _json(capsys.readouterr().err)["message"]
    assert not (tmp_path / "r").exists()


def test_trace_unit_circle(capsys):
    assert main(["trace", "--g", "x^2 + y^2 - 1"]) == 0
    rep = _json(capsys.readouterr().out)
    assert rep["count"] == 1
    assert abs(rep["components"][0]["period"] - math.pi) < 1e-8


def test_trace_example1(tmp_path, capsys):
    assert main(["trace", "--preset", "example1", "--out", str(tmp_path)]) == 0
    assert _json(capsys.readouterr().out)["count"] == 2
    assert (tmp_path / "boundary_0_1.csv").is_file()


def test_trace_no_zero_set(capsys):
    assert main(["trace", "--g", "1"]) == 4
    assert _json(capsys.readouterr().err)["error"]


def test_validate_rejects_empty_dir(tmp_path, capsys):
    assert main(["validate", str(tmp_path)]) == 2
    capsys.readouterr()


def test_grad_check_default(capsys):
    assert main(["grad-check"]) == 0
    rep = _json(capsys.readouterr().out)
    assert rep["passed"]
    theta = {r["check"]: r["analytic"] for r in rep["results"]}
    assert abs(theta["theta(g, g)"] + math.pi) < 1e-4
    assert abs(theta["theta(g, 1)"]) < 1e-4


def test_grad_check_zero_direction(capsys):
    assert main(["grad-check", "--zero-direction"]) == 0
    rep = _json(capsys.readouterr().out)
    assert rep["results"][0]["analytic"] == 0.0


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    dirs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(name)
        code = main(["run", "--preset", "example2", "--mesh-n", "24", "--max-iter", "2", "--out", str(out)])
        assert code == 0
        dirs.append(out)
    return dirs


def test_run_artifacts(small_runs):
    out = small_runs[0]
    for name in ("config.ini", "iterations.csv", "summary.json", "g_0.csv", "u_0.csv", "y_0.csv",
                 "boundary_0_0.csv", "iter_0.svg", "mesh/vertices.csv", "mesh/triangles.csv"):
        assert (out / name).is_file(), name
    rows = list(csv.DictReader(open(out / "iterations.csv")))
    assert rows[0]["k"] == "0" and rows[0]["sub_step"] == "-1"
    accepted = [float(r["J"]) for r in rows if r["accepted"] == "1"]
    assert all(b < a for a, b in zip(accepted, accepted[1:]))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["configurations"][0]["file"] == "g_0.csv"


def test_svg_content(small_runs):
    svg = (small_runs[0] / "iter_0.svg").read_text()
    assert 'class="frame"' in svg and 'class="contour"' in svg and 'class="E"' in svg


def test_run_reproducible(small_runs):
    a, b = small_runs
    for name in ("iterations.csv", "g_1.csv", "boundary_1_0.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_validate_small_run(small_runs, capsys):
    assert main(["validate", str(small_runs[0])]) == 0
    rep = _json(capsys.readouterr().out)
    assert rep["column"] == "t1"
    assert len(rep["values"]) == len(rep["labels"])
    assert (small_runs[0] / "validation.csv").is_file()
