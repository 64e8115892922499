import csv
from pathlib import Path

import numpy as np
import pytest

from krlab.cli import EXIT_CERT, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_OK, run
from krlab.config import OUT_ENV, ConfigError, parse_config, parse_string

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def report(out):
    rep = {}
    for line in (Path(out) / "report.txt").read_text().splitlines():
        k, _, v = line.partition(" = ")
        rep[k] = v
    return rep


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


RENEWAL = """
[model]
type = renewal
r = constant:2
K = constant:1
y_max = 20

[grid]
n = 1000
"""


# ---------------------------------------------------------------- parsing


def test_minimal_renewal_config():
    cfg = parse_string(RENEWAL)
    assert cfg.model_type == "renewal"
    assert cfg.resolutions() == [1000]
    m = cfg.model(1000)
    assert m.y_max == 20.0 and m.n == 1000


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="foo"):
        parse_string(RENEWAL + "foo = 1\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="plot"):
        parse_string(RENEWAL + "[plot]\nx = 1\n")


def test_mitosis_needs_geometric_ratio():
    with pytest.raises(ConfigError, match="geometric_ratio required"):
        parse_string("[model]\ntype = mitosis\na = linear\nK = ramp:1:2\n")


def test_unknown_preset_and_type_mismatch():
    with pytest.raises(ConfigError):
        parse_string("[model]\npreset = nope\n")
    with pytest.raises(ConfigError):
        parse_string("[model]\npreset = renewal-window\ntype = mitosis\n")
    with pytest.raises(ConfigError):
        parse_string("[model]\ntype = renewal\nr = wobbly:3\n")


def test_type_mismatch_in_value():
    with pytest.raises(ConfigError):
        parse_string(RENEWAL.replace("y_max = 20", "y_max = twenty"))


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/run.ini")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    parse_config(path)


# ---------------------------------------------------------------- commands


def test_eig_renewal(tmp_path):
    out = tmp_path / "out"
    assert run(["eig", "--config", write(tmp_path, RENEWAL), "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert float(rep["lam1[1000]"]) == pytest.approx(1.0, abs=5e-3)
    assert "lam1[1000].tol" in rep
    assert rep["check.geometry[1000]"] == "pass"


def test_eig_three_resolutions(tmp_path):
    out = tmp_path / "out"
    assert run(["eig", "--config", str(CONFIGS / "renewal.ini"), "--out", str(out), "--quiet"]) == EXIT_OK
    table = rows(out / "eig.csv")
    assert table[0][:2] == ["n", "lam1"]
    assert len(table) == 4


def test_eig_reducible_exit_3(tmp_path):
    out = tmp_path / "out"
    assert run(["eig", "--config", str(CONFIGS / "reducible.ini"), "--out", str(out), "--quiet"]) == EXIT_GEOMETRY
    rep = report(out)
    assert rep["check.geometry[2]"] == "fail"
    assert any(k.startswith("violation[2]") for k in rep)


def test_config_error_exit_5(tmp_path):
    p = write(tmp_path, RENEWAL + "foo = 1\n")
    assert run(["eig", "--config", p, "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG


def test_certify_success(tmp_path):
    out = tmp_path / "out"
    assert run(["certify", "--config", str(CONFIGS / "mitosis_mixing.ini"), "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert float(rep["cert.alpha"]) < 1
    assert rep["check.isolation_confirmed_by_oracle"] == "pass"
    assert rows(out / "certificate_sweep.csv")[0] == ["gamma_L", "K", "A", "gamma_H", "alpha"]


def test_certify_failed_minorization_exit_4(tmp_path):
    # decoupled states give a diagonal kernel, so every row has a zero
    text = "[model]\ntype = matrix\nA = -1, 0; 0, -1\n[certify]\nT = 1\ndoblin = true\n"
    assert run(["certify", "--config", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CERT


def test_certify_boundary_A_exit_4(tmp_path):
    text = (CONFIGS / "mitosis_mixing.ini").read_text().replace("isolation = true", "A = 1e-9")
    text = text.replace("gamma_L = 0.1, 0.3, 0.5, 0.7", "gamma_L = 0.1")
    assert run(["certify", "--config", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CERT


def test_simulate_fixed_point_flat(tmp_path):
    text = RENEWAL.replace("n = 1000", "n = 200") + "\n[simulate]\nf0 = f1\nT_end = 5\ndt = 0.5\n"
    out = tmp_path / "out"
    assert run(["simulate", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == EXIT_OK
    traj = np.array(rows(out / "trajectory.csv")[1:], dtype=float)
    assert np.max(traj[:, 1]) <= 1e-8


@pytest.mark.slow
def test_simulate_nonmixing_period(tmp_path):
    out = tmp_path / "out"
    assert run(["simulate", "--config", str(CONFIGS / "mitosis_nonmixing.ini"), "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert abs(float(rep["period[0]"]) - np.log(2)) / np.log(2) < 0.02
    assert rep["check.lattice_support"] == "pass"


def test_simulate_rate_dominates_certificate(tmp_path):
    out = tmp_path / "out"
    assert run(["simulate", "--config", str(CONFIGS / "mitosis_mixing.ini"), "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert rep["check.measured_rate_ge_certified"] == "pass"
    assert rep["check.conservation"] == "pass"


def test_oracle_two_by_two(tmp_path):
    p = write(tmp_path, "[model]\ntype = matrix\nA = 0, 2; 1, -1\n")
    out = tmp_path / "out"
    assert run(["oracle", "--config", p, "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert float(rep["lam1_dense"]) == pytest.approx(1.0, abs=1e-12)
    assert rep["check.lam1_agreement"] == "pass"


def test_oracle_power_at_200(tmp_path):
    text = "[model]\npreset = mutation-bump\n[grid]\nn = 200\n[solver]\nmethod = power\n"
    out = tmp_path / "out"
    assert run(["oracle", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == EXIT_OK
    rep = report(out)
    assert rep["check.lam1_agreement"] == "pass" and rep["check.eigvec_agreement"] == "pass"


def test_oracle_cap_exceeded(tmp_path):
    text = "[model]\npreset = mutation-bump\n[grid]\nn = 3000\n"
    assert run(["oracle", "--config", write(tmp_path, text), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG


def test_build_writes_grid(tmp_path):
    out = tmp_path / "out"
    assert run(["build", "--config", str(CONFIGS / "mitosis_nonmixing.ini"), "--out", str(out), "--quiet"]) == EXIT_OK
    assert rows(out / "build.csv")[1][2] == "true"
    assert len(rows(out / "grid.csv")) == 513


def test_sweep_eps(tmp_path):
    text = "[model]\npreset = singular-2d\n[grid]\nn_axis = 16\n[sweep]\neps = 0.5, 0.25\n"
    out = tmp_path / "out"
    assert run(["sweep", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == EXIT_OK
    assert len(rows(out / "sweep.csv")) == 3
    assert "largest_passing_eps" in report(out)


# ---------------------------------------------------------------- contracts


def test_deterministic_with_seed(tmp_path):
    text = RENEWAL.replace("n = 1000", "n = 100") + "\n[simulate]\nf0 = random\nT_end = 2\ndt = 0.5\n"
    p = write(tmp_path, text)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert run(["simulate", "--config", p, "--out", str(out), "--seed", "7", "--quiet"]) == EXIT_OK
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "o2"
    run(["simulate", "--config", p, "--out", str(out), "--seed", "8", "--quiet"])
    assert (out / "trajectory.csv").read_bytes() != outs[0]


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg_dir = tmp_path / "cfgdir"
    env_dir = tmp_path / "envdir"
    cli_dir = tmp_path / "clidir"
    p = write(tmp_path, RENEWAL.replace("n = 1000", "n = 50") + f"\n[output]\ndir = {cfg_dir}\n")
    assert run(["build", "--config", p, "--quiet"]) == EXIT_OK
    assert (cfg_dir / "report.txt").exists()
    monkeypatch.setenv(OUT_ENV, str(env_dir))
    assert run(["build", "--config", p, "--quiet"]) == EXIT_OK
    assert (env_dir / "report.txt").exists()
    assert run(["build", "--config", p, "--out", str(cli_dir), "--quiet"]) == EXIT_OK
    assert (cli_dir / "report.txt").exists()


def test_report_prints_unless_quiet(tmp_path, capsys):
    p = write(tmp_path, RENEWAL.replace("n = 1000", "n = 50"))
    run(["build", "--config", p, "--out", str(tmp_path / "o")])
    assert "exit_code = 0" in capsys.readouterr().out
    run(["build", "--config", p, "--out", str(tmp_path / "o"), "--quiet"])
    assert capsys.readouterr().out == ""
