import json
import math
import subprocess
import sys

import numpy as np
import pytest

from brakechords import cli
from brakechords.errors import ValidationError


def write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def test_config_sections_and_dotted_keys(tmp_path):
    path = write(tmp_path, '[model]\nscenario = "s2"\n[tol]\nnewton = 1e-9\n"grid.samples" = 200\n')
    with pytest.raises(ValidationError):
        cli.ScenarioConfig.load(path)
    path = write(tmp_path, '"grid.samples" = 200\n[model]\nscenario = "s2"\n[tol]\nnewton = 1e-9\n')
    cfg = cli.ScenarioConfig.load(path)
    assert (cfg.scenario, cfg.tol_newton, cfg.grid_samples) == ("s2", 1e-9, 200)


@pytest.mark.parametrize("text", [
    '[model]\nscenario = "s9"\n',
    '[model]\nbeta = -0.1\n',
    '[tol]\nintegration = 0.0\n',
    '[model]\nscenario = "custom"\n',
    '[extra]\nkey = 1\n',
    '[model\n',
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ValidationError):
        cli.ScenarioConfig.load(write(tmp_path, text))


def test_custom_scenario_matches_builtin():
    cfg = cli.ScenarioConfig.from_mapping({"model": {
        "scenario": "custom", "mass": [[1.0, 0.0], [0.0, 0.5]],
        "potential": [[0.5, 2, 0], [2.0, 0, 2]], "energy": 0.5}})
    model, well = cfg.build()
    ref, _ = cli.scenario("s2")
    Q = np.array([[0.1, 0.2], [-0.3, 0.05]])
    P = np.array([[0.4, -0.2], [0.1, 0.9]])
    np.testing.assert_allclose(model.kernel.H(Q, P), ref.kernel.H(Q, P), rtol=1e-14)
    assert well.radial_boundary_point([0, 1]) == pytest.approx([0, 0.5], abs=1e-12)


def test_negative_beta_exits_invalid(tmp_path):
    path = write(tmp_path, '[model]\nscenario = "s3"\nbeta = -0.1\n')
    assert cli.main(["scenario", "validate", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "scenario_validate.json").exists()


def test_metric_verify_s2(tmp_path):
    assert cli.main(["metric", "verify", "--scenario", "s2", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metric_verify.json").read_text())
    assert report["schema"] == 1 and report["command"] == "metric verify"
    assert report["riemannian_oracle"] <= 1e-6
    assert report["passed"]


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["flow", "demo", "--scenario", "s1", "--seed", "7", "--out", str(d)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert "flow_demo.json" in names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    body = json.loads((a / "flow_demo.json").read_text())
    assert set(body["files"]) == set(names) - {"flow_demo.json"}


def test_scenario_validate_payload(tmp_path):
    assert cli.main(["scenario", "validate", "--scenario", "s3", "--out", str(tmp_path)]) == 0
    body = json.loads((tmp_path / "scenario_validate.json").read_text())
    assert body["model"]["beta"] == pytest.approx(0.1)
    assert body["convexity"]["nu_min"] == pytest.approx(1.0)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "brakechords", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "brake" in proc.stdout


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("brake")
    code = cli.main(["brake", "solve", "--scenario", "s1", "--out", str(out)])
    return code, out


@pytest.mark.slow
def test_brake_solve_s1(solved):
    code, out = solved
    assert code == 0
    body = json.loads((out / "brake_solve.json").read_text())
    assert body["passed"] and len(body["orbits"]) >= 4
    for orbit in body["orbits"]:
        assert abs(orbit["period_half"] - math.pi) <= 1e-4


@pytest.mark.slow
def test_brake_verify_roundtrip(solved, tmp_path):
    _, out = solved
    assert cli.main(["brake", "verify", "--scenario", "s1", "--out", str(out)]) == 0
    body = json.loads((out / "brake_verify.json").read_text())
    assert body["passed"] and all(r["passed"] for r in body["orbits"])
    # a perturbed copy fails the energy check
    data = np.loadtxt(out / "orbit_0.csv", delimiter=",", skiprows=1)
    data[:, 3] *= 1.01
    header = (out / "orbit_0.csv").read_text().splitlines()[0]
    np.savetxt(tmp_path / "orbit_0.csv", data, delimiter=",", header=header, comments="")
    assert cli.main(["brake", "verify", "--scenario", "s1", "--out", str(tmp_path)]) == 3


def test_brake_verify_without_orbits(tmp_path):
    assert cli.main(["brake", "verify", "--out", str(tmp_path)]) == 2
