import json
import os

import pytest

from hdtomo.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n_traces": 200, "seed": 5,
                                "pipeline": {"iters": 100, "wigner_steps": 11}}))
    return str(path)


def test_synth_then_tomo_from_file(config_file, tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--config", config_file, "--out", str(data)]) == EXIT_OK
    assert {"traces.cvtr", "truth.csv", "config.json"} <= set(os.listdir(data))
    out = tmp_path / "tomo"
    code = main(["tomo", "--config", config_file, "--dataset", str(data / "traces.cvtr"),
                 "--fc", "151", "--n", "9", "--out", str(out)])
    assert code == EXIT_OK
    assert "W00=" in capsys.readouterr().out
    assert (out / "rho_fc151MHz_n9.csv").exists()


def test_sweep_and_report(config_file, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", config_file, "--fc-list", "31,301", "--n-list", "1,25",
                 "--workers", "2", "--out", str(out)])
    assert code == EXIT_OK
    assert len((out / "heatmap.csv").read_text().splitlines()) == 5
    capsys.readouterr()
    assert main(["report", "--in", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "200.0" in text and "*" in text


def test_bad_arguments_are_config_errors(tmp_path, config_file):
    assert main(["sweep", "--out", str(tmp_path), "--n-list", "a,b"]) == EXIT_CONFIG
    assert main(["sweep", "--out", str(tmp_path), "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["sweep", "--out", str(tmp_path), "--config", config_file, "--n-list", "0"]) == EXIT_CONFIG
    assert main(["report", "--in", str(tmp_path / "nothing")]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_unreachable_calibration_is_numerical_failure(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"f_c": None, "snr_db": None, "eta_hd": 1.0, "pipeline": {"iters": 100}}))
    code = main(["calibrate", "--config", str(cfg), "--target", "-0.5", "--xi", "0", "--eta-prep", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC


def test_calibration_file_feeds_state(tmp_path, config_file):
    report = {"model": {"r": 0.3, "xi": 0.7, "eta_prep": 0.8, "dim": 12}}
    cal = tmp_path / "cal.json"
    cal.write_text(json.dumps(report))
    out = tmp_path / "data"
    assert main(["synth", "--config", config_file, "--calibration", str(cal), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "config.json").read_text())["state"]["r"] == 0.3
    cal.write_text("{}")
    assert main(["synth", "--config", config_file, "--calibration", str(cal), "--out", str(out)]) == EXIT_CONFIG
