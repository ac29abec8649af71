import csv
import json
import subprocess
import sys

import pytest

from uhgf.cli import EXIT_CONFIG, EXIT_USAGE, main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def small_grid_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"kl_grid": {"ratios": [1.0, 200.0], "gammas": [-6.0, 0.0]}}))
    return str(path)


def test_kl_grid_writes_table_and_summary(tmp_path):
    out = tmp_path / "r"
    assert main(["kl-grid", "--config", small_grid_config(tmp_path), "--out", str(out)]) == 0
    rows = read_csv(out / "kl_grid.csv")
    assert rows[0] == ["beta_over_alpha", "gamma", "classic_status", "classic_kl", "uhgf_kl"]
    assert len(rows) == 5
    summary = json.loads((out / "summary.json").read_text())
    assert summary["report"] == "kl_grid" and summary["n_cells"] == 4


def test_kl_grid_json_format(tmp_path):
    assert main(["kl-grid", "--config", small_grid_config(tmp_path), "--out", str(tmp_path),
                 "--format", "json"]) == 0
    assert len(json.loads((tmp_path / "kl_grid.json").read_text())) == 4


def test_gen_series_respects_seed(tmp_path):
    assert main(["gen-series", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-series", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    assert main(["gen-series", "--seed", "4", "--out", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "series.csv").read_bytes()
    assert a == (tmp_path / "b" / "series.csv").read_bytes()
    assert a != (tmp_path / "c" / "series.csv").read_bytes()
    assert len(a.splitlines()) == 320


def test_filter_on_input_file(tmp_path):
    main(["gen-series", "--out", str(tmp_path)])
    out = tmp_path / "f"
    code = main(["filter", "--input", str(tmp_path / "series.csv"), "--mode", "classic",
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["completed"] and summary["n_steps"] == 320
    assert summary["rmse_level1"] is not None
    rows = read_csv(out / "trajectory.csv")
    assert rows[0][:2] == ["step", "node"] and len(rows) == 1 + 2 * 320


def test_classic_crash_is_data_not_failure(tmp_path, capsys):
    code = main(["filter", "--preset", "robust", "--mode", "classic", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert not summary["completed"] and summary["failure"]["node"] == "x2"
    assert "failed at step" in capsys.readouterr().out


def test_compare_reports_failure_step_and_min_precision(tmp_path, capsys):
    assert main(["compare", "--preset", "robust", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["classic"]["failure"]["step"] >= 1
    assert summary["uhgf"]["min_pi"]["x2"] > 0
    assert (tmp_path / "trajectory_classic.csv").exists()
    assert (tmp_path / "trajectory_uhgf.csv").exists()
    out = capsys.readouterr().out
    assert "classic: failed at step" in out and "min precision" in out


def test_option_overrides_and_network_file(tmp_path):
    from uhgf.network import two_level_network

    net = tmp_path / "net.json"
    two_level_network(1.0, -3.0, 500.0).save(net)
    assert main(["filter", "--network", str(net), "--out", str(tmp_path / "n")]) == 0
    assert main(["filter", "--omega2", "-3", "--alpha-u", "500", "--out", str(tmp_path / "o")]) == 0


def test_scan_small_grid_is_deterministic(tmp_path):
    cfg = tmp_path / "scan.json"
    cfg.write_text(json.dumps({"scan": {"omega1": [1.0, 2.0, 1.0], "omega2": [1.0, 2.0, 1.0]}}))
    for name in ("a", "b"):
        assert main(["scan", "--config", str(cfg), "--out", str(tmp_path / name), "--threads", "1"]) == 0
    a = (tmp_path / "a" / "scan.csv").read_bytes()
    assert a == (tmp_path / "b" / "scan.csv").read_bytes()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert read_csv(tmp_path / "a" / "scan.csv")[0] == ["omega1", "omega2", "classic_ok", "uhgf_ok", "fail_step"]


def test_bitwise_identical_kl_grid(tmp_path):
    cfg = small_grid_config(tmp_path)
    for name in ("a", "b"):
        main(["kl-grid", "--config", cfg, "--out", str(tmp_path / name), "--seed", "5"])
    for f in ("kl_grid.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("argv", [
    [],
    ["nope"],
    ["filter", "--bogus"],
    ["filter", "--mode", "other"],
    ["scan", "--threads", "0"],
    ["kl-grid", "--format", "xml"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_USAGE


@pytest.mark.parametrize("content", [
    "{not json",
    json.dumps([1, 2]),
    json.dumps({"unknown": 1}),
    json.dumps({"kl_grid": {"alpha": -1.0}}),
    json.dumps({"series": {"length": 10}}),
    json.dumps({"filter": {"preset": "nope"}}),
    json.dumps({"filter": {"kappa": 0.0}}),
    json.dumps({"threads": 0}),
])
def test_config_errors_exit_2(tmp_path, content, capsys):
    path = tmp_path / "bad.json"
    path.write_text(content)
    command = "kl-grid" if "kl_grid" in content or "threads" in content else "filter"
    assert main([command, "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path):
    assert main(["filter", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["filter", "--network", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["kl-grid", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_console_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "uhgf.cli", "gen-series", "--out", str(tmp_path)],
                        capture_output=True, text=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "uhgf.cli", "filter", "--bogus"],
                         capture_output=True, text=True)
    assert bad.returncode == EXIT_USAGE
