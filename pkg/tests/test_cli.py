import csv
import json
import os
import subprocess
import sys

import pytest

from manifold_mc import cli


def run(tmp_path, *args, out="out"):
    return cli.main(list(args) + ["--out", str(tmp_path / out)])


def read_rows(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# config_sha256=")
    return lines[0], list(csv.reader(lines[1:]))


def test_sample_torus_stride(tmp_path):
    assert run(tmp_path, "sample", "--seed", "1", "--override", "sampler.n_steps=1000000",
               "--override", "sampler.stride=100", "--override",
               "output.histogram=phi") == 0
    head, rows = read_rows(tmp_path / "out" / "samples.csv")
    assert rows[0] == ["step", "x0", "x1", "x2"]
    assert len(rows) - 1 == 10_000
    assert rows[1][0] == "100" and rows[-1][0] == "1000000"
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["seed"] == 1 and summary["step_scale"] == 0.5
    assert sum(summary["outcome_fractions"].values()) == pytest.approx(1.0)
    assert summary["observables"]["cos_phi"]["mean"] == pytest.approx(0.25, abs=0.02)
    _, hist = read_rows(tmp_path / "out" / "histogram.csv")
    assert sum(int(r[3]) for r in hist[1:]) == 10_000


def test_sample_zero_steps(tmp_path):
    assert run(tmp_path, "sample", "--override", "sampler.n_steps=0") == 0
    _, rows = read_rows(tmp_path / "out" / "samples.csv")
    assert rows == [["step", "x0", "x1", "x2"]]


def test_sample_reproducible(tmp_path):
    args = ["sample", "--seed", "9", "--override", "manifold.name=cone",
            "--override", "sampler.n_steps=5000"]
    assert run(tmp_path, *args, out="a") == 0
    assert run(tmp_path, *args, out="b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    sa = json.loads((a / "summary.json").read_text())
    sb = json.loads((b / "summary.json").read_text())
    sa.pop("wall_time"), sb.pop("wall_time")
    assert sa == sb
    assert run(tmp_path, *args[:2], "10", *args[3:], out="c") == 0
    assert (a / "samples.csv").read_bytes() != (tmp_path / "c" / "samples.csv").read_bytes()


def test_config_file_and_hash(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("manifold.name = son\nmanifold.n = 3\nsampler.n_steps = 2000\n"
                   "seed = 4  # inline comment\n")
    assert cli.main(["sample", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 4 and summary["step_scale"] == 0.28
    loaded = cli.load_config(str(cfg), [], None)
    assert summary["config_sha256"] == cli.config_hash(loaded)
    assert cli.config_hash(cli.load_config(str(cfg), ["seed=5"], None)) != summary["config_sha256"]


def test_integrate_torus(tmp_path):
    assert run(tmp_path, "integrate", "--seed", "3",
               "--override", "integrate.x0=1.5,0,0", "--override", "integrate.r0=3",
               "--override", "integrate.rk=0.5", "--override", "integrate.n_total=20000") == 0
    res = json.loads((tmp_path / "out" / "result.json").read_text())
    assert abs(res["Z_hat"] / 19.7392 - 1) <= 4 * res["sigma_r"]
    assert res["schedule"]["radii"][0] == 3.0 and res["schedule"]["k"] == 2
    assert len(res["stages"]) == 2 and "N_next" in res["stages"][0]
    assert res["seed"] == 3


@pytest.mark.parametrize("override", ["bogus.key=1", "sampler.step_scale=-1",
                                      "manifold.name=klein", "newton.nmax=abc",
                                      "density.name=rigidity"])
def test_config_errors_exit_2(tmp_path, override):
    assert run(tmp_path, "sample", "--override", override) == 2


def test_bad_start_exit_2(tmp_path):
    assert run(tmp_path, "sample", "--override", "sampler.x_init=1,0,0") == 2


def test_missing_config_exit_2(tmp_path):
    assert cli.main(["sample", "--config", str(tmp_path / "none.cfg")]) == 2


def test_innermost_failure_exit_3(tmp_path):
    assert run(tmp_path, "integrate", "--override", "manifold.name=sphere",
               "--override", "manifold.dim=2", "--override", "integrate.x0=1,0",
               "--override", "integrate.r0=4", "--override", "integrate.rk=3",
               "--override", "integrate.n_total=2000") == 3


def test_validate_pass_and_fail(tmp_path, capsys):
    assert run(tmp_path, "validate", "--override", "validate.suite=jacobian-symmetry",
               out="v") == 0
    rep = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert rep["passed"] is True
    assert "PASS" in capsys.readouterr().out
    # the d = 1 toy-model minimizer is a known discrepancy, so this suite fails
    assert run(tmp_path, "validate", "--override", "validate.suite=nu-minimizers",
               out="w") == 4
    assert run(tmp_path, "validate", "--override", "validate.suite=nope") == 2


def test_analyze_nu(tmp_path):
    assert run(tmp_path, "analyze-nu", "--override", "analyze.d=3") == 0
    _, rows = read_rows(tmp_path / "out" / "nu.csv")
    assert rows[0] == ["nu", "g_const", "g_d3", "l_d3"] and len(rows) == 201
    arg = json.loads((tmp_path / "out" / "nu_argmins.json").read_text())
    assert arg["argmins"]["g_const"] == pytest.approx(4.92, abs=0.01)
    assert arg["argmins"]["g_d3"] == pytest.approx(3.1, abs=0.1)


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "manifold_mc.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "analyze-nu" in out.stdout
