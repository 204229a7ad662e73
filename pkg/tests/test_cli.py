import json
import os

import pytest

from paraopt.cli import emit_plotdata, main, run

SUPERPOSITION_CFG = """
[experiment]
kind = superposition_suite
seed = 7

[problem]
nx = 5
ny = 4
bc = dirichlet
t = 2

[time]
scheme = uniform
n = 6
"""

TURNPIKE_CFG = """
[experiment]
kind = turnpike
seed = 0

[problem]
nx = 7
ny = 5
bc = dirichlet
alpha = 0.1
e = 1.0
reference = static
t = 6

[time]
scheme = uniform
n = 25
"""

MPC_CFG = """
[experiment]
kind = mpc_compare
seed = 0

[problem]
nx = 6
ny = 4
bc = dirichlet
alpha = 0.01
e = 1.0
reference = dynamic
t = 4

[mpc]
tau = 1.0
steps = 2
n_list = 4,5
schemes = uniform,exponential,pw_uniform
plant_refinement = 2
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_emit_plotdata(tmp_path):
    path = str(tmp_path / "data.csv")
    emit_plotdata({"t": [0.0, 1.0], "v": [2.0, 3.5]}, path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines == ["t,v", "0,2", "1,3.5"]
    emit_plotdata({"a": [], "b": []}, path)
    with open(path) as fh:
        assert fh.read() == "a,b\n"
    with pytest.raises(ValueError):
        emit_plotdata({"a": [1], "b": []}, path)


def test_missing_config_is_exit_2(tmp_path, capsys):
    assert run(str(tmp_path / "nope.ini")) == 2


def test_unknown_experiment_is_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, "[experiment]\nkind = banana\n")
    assert run(cfg, out_dir=str(tmp_path)) == 2


def test_invalid_scheme_exit_2_no_partial_csv(tmp_path, capsys):
    bad = MPC_CFG.replace("uniform,exponential,pw_uniform", "uniform,chebyshev")
    cfg = _write(tmp_path, bad)
    out = tmp_path / "out"
    assert run(cfg, out_dir=str(out)) == 2
    assert not (out / "cost_table.csv").exists()


def test_superposition_run_and_determinism(tmp_path, capsys):
    cfg = _write(tmp_path, SUPERPOSITION_CFG)
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert run(cfg, out_dir=str(out1)) == 0
    assert run(cfg, out_dir=str(out2)) == 0
    a = (out1 / "superposition.csv").read_bytes()
    b = (out2 / "superposition.csv").read_bytes()
    assert a == b
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["growth_violations"] == 0
    assert summary["seed"] == 7
    manifest = (out1 / "MANIFEST").read_text()
    assert "config_sha256" in manifest and "seed: 7" in manifest


def test_turnpike_run_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, TURNPIKE_CFG)
    out = tmp_path / "out"
    assert run(cfg, out_dir=str(out), verbose=True) == 0
    with open(out / "turnpike_norms.csv") as fh:
        header = fh.readline().strip()
    assert header == "t,norm_x_dev,norm_u_dev,norm_lambda_dev,s_t"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mu"] > 0
    assert 0 <= summary["r2_in"] <= 1


def test_mpc_run_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, MPC_CFG)
    out = tmp_path / "out"
    assert run(cfg, out_dir=str(out)) == 0
    with open(out / "cost_table.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "scheme,N,cost"
    assert len(lines) == 1 + 3 * 2  # header + schemes x N values
    with open(out / "mpc_plot.csv") as fh:
        assert fh.readline().startswith("N,cost_uniform,cost_exponential,")


def test_cli_main_entrypoint(tmp_path, capsys):
    cfg = _write(tmp_path, SUPERPOSITION_CFG)
    assert main(["run", cfg, "--out", str(tmp_path / "m")]) == 0
    with pytest.raises(SystemExit):
        main([])
