"""End-to-end pipeline runs on a deliberately small configuration."""

import io
import json
import os

import numpy as np
import pytest

from homlab.cli import main
from homlab.pipeline import (
    SQUARE_DOMAIN_CAVEAT,
    STAGE_EXIT,
    STAGES,
    Experiment,
    run_experiment,
)

SMALL = """
A_preset = smooth-iso
W_preset = sine1
f_preset = sine-sine
cell_grid_n = 16
domain_grid_n = 68
epsilons = 1/4
k_eigen = 2
output_dir = {out}
emit_svg = true
"""


def write_cfg(tmp_path, name="run.cfg", body=SMALL, out="out"):
    path = tmp_path / name
    path.write_text(body.format(out=tmp_path / out))
    return str(path), str(tmp_path / out)


def test_full_run_writes_all_artifacts(tmp_path):
    cfg, out = write_cfg(tmp_path)
    stream = io.StringIO()
    code = run_experiment(cfg, out=stream)
    assert code == 0
    for name in ("cell_solution.json", "spectrum_E.csv", "gaps.csv",
                 "rates.csv", "flux.csv", "rates.svg", "report.json"):
        assert os.path.exists(os.path.join(out, name)), name
    assert SQUARE_DOMAIN_CAVEAT in stream.getvalue()
    assert not [f for f in os.listdir(out) if f.endswith(".partial")]


def test_csv_formats(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert run_experiment(cfg, out=io.StringIO()) == 0

    gaps = open(os.path.join(out, "gaps.csv"), newline="").read()
    lines = gaps.split("\n")
    assert lines[0] == "epsilon,k,lambda_eps,lambda_0,gap,normalized_const"
    assert "\r" not in gaps
    assert gaps.endswith("\n")
    first = lines[1].split(",")
    assert first[0] == "0.25"
    float(first[2])  # plain decimal-point floats throughout

    spect = open(os.path.join(out, "spectrum_E.csv")).read().split("\n")
    tags = {row.split(",")[0] for row in spect[1:] if row}
    assert tags == {"hom", "hom_prime", "eps:1/4", "eps_prime:1/4"}

    flux = open(os.path.join(out, "flux.csv")).read().split("\n")
    assert flux[0] == "epsilon,k,lambda,flux,ratio_upper,ratio_lower"


def test_single_epsilon_rate_fits_are_skipped_with_note(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert run_experiment(cfg, out=io.StringIO()) == 0
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["rates"] == {}
    assert any("at least 3" in note for note in report["rate_notes"])
    rates = open(os.path.join(out, "rates.csv")).read()
    assert rates == "quantity,slope,intercept,r2\n"


def test_report_carries_effective_constants(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert run_experiment(cfg, out=io.StringIO()) == 0
    report = json.load(open(os.path.join(out, "report.json")))
    a_hat = np.array(report["cell"]["a_hat"])
    assert a_hat.shape == (2, 2)
    assert a_hat[0, 0] == pytest.approx(a_hat[1, 1], rel=1e-9)
    assert report["cell"]["m_w_chi_w"] < 0
    sol = report["solve"]["1/4"]
    assert sol["coercive"] is True
    assert sol["h1_w"] < sol["h1_plain"]
    assert report["flux"]["min_ratio_lower"] >= report["flux"]["lower_floor"]
    assert report["gaps"]["first_eig"][0]["d7"] < report["gaps"]["first_eig"][0]["d8"]


def test_two_runs_are_byte_identical(tmp_path):
    cfg1, out1 = write_cfg(tmp_path, "a.cfg", out="out1")
    cfg2, out2 = write_cfg(tmp_path, "b.cfg", out="out2")
    assert run_experiment(cfg1, out=io.StringIO()) == 0
    assert run_experiment(cfg2, out=io.StringIO()) == 0
    for name in ("spectrum_E.csv", "gaps.csv", "rates.csv", "flux.csv",
                 "rates.svg", "cell_solution.json"):
        a = open(os.path.join(out1, name), "rb").read()
        b = open(os.path.join(out2, name), "rb").read()
        assert a == b, name


def test_stage_subsets(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert run_experiment(cfg, upto="cell", out=io.StringIO()) == 0
    assert os.path.exists(os.path.join(out, "cell_solution.json"))
    assert not os.path.exists(os.path.join(out, "spectrum_E.csv"))

    assert run_experiment(cfg, upto="eigs", out=io.StringIO()) == 0
    assert os.path.exists(os.path.join(out, "spectrum_E.csv"))
    assert not os.path.exists(os.path.join(out, "gaps.csv"))


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    err = io.StringIO()
    assert run_experiment(str(bad), err=err) == STAGE_EXIT["config"]
    assert "no_such_key" in err.getvalue()


def test_stage_failure_maps_to_exit_code(tmp_path, monkeypatch):
    cfg, _ = write_cfg(tmp_path)

    def boom(self):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(Experiment, "stage_flux", boom)
    err = io.StringIO()
    assert run_experiment(cfg, err=err) == STAGE_EXIT["flux"]
    assert "[flux] synthetic failure" in err.getvalue()


def test_exit_codes_are_distinct():
    codes = list(STAGE_EXIT.values())
    assert len(codes) == len(set(codes))
    assert set(STAGE_EXIT) == set(STAGES) | {"config"}


def test_cli_cell_dump_fields(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert main(["cell", "-c", cfg, "--dump-fields"]) == 0
    head = open(os.path.join(out, "cell_fields.csv")).readline().strip()
    assert head == "y1,y2,chi1,chi2,chi_w"


def test_cli_solve_single_epsilon_dump(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert main(["solve", "-c", cfg, "--epsilon", "1/4", "--dump-fields"]) == 0
    path = os.path.join(out, "solve_fields_1_4.csv")
    head = open(path).readline().strip()
    assert head == "x1,x2,u_eps,u_0,phi1,phi2"


def test_cli_eigs_overrides(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert main(["eigs", "-c", cfg, "--epsilon", "0.25", "--k", "3",
                 "--seed", "5"]) == 0
    rows = [r for r in open(os.path.join(out, "spectrum_E.csv")).read().split("\n")
            if r.startswith("eps:1/4,")]
    assert len(rows) == 3


def test_cli_rejects_malformed_epsilon(tmp_path, capsys):
    cfg, _ = write_cfg(tmp_path)
    assert main(["solve", "-c", cfg, "--epsilon", "huge"]) == STAGE_EXIT["config"]
    assert "cannot parse" in capsys.readouterr().err
