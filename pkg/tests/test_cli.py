import json
import subprocess
import sys
from pathlib import Path

import pytest

from otdecomp.cli import read_csv, run


def write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def measure(path: Path, points, weights, dim=1) -> Path:
    return write(path, json.dumps({"dim": dim, "points": points, "weights": weights}))


@pytest.fixture
def point_configs(tmp_path):
    measure(tmp_path / "mu.json", [0.0], [1.0])
    measure(tmp_path / "nu.json", [1.0], [1.0])
    return write(tmp_path / "solve.toml", 'mu_file = "mu.json"\nnu_file = "nu.json"\ncost = "euclidean"\np = 2\n')


def test_solve_point_masses(tmp_path, point_configs):
    out = tmp_path / "out"
    assert run(["solve", "--config", str(point_configs), "--out", str(out)]) == 0
    rec = json.loads((out / "solve.json").read_text())
    assert rec["value"] == 1.0
    kind, meta, header, rows = read_csv(out / "plan.csv")
    assert kind == "plan" and header == ["i", "j", "mass"] and rows == [["0", "0", "1.0"]]


def test_solve_multidimensional_measure(tmp_path):
    measure(tmp_path / "a.json", [0, 0, 1, 1], [0.5, 0.5], dim=2)
    measure(tmp_path / "b.json", [0, 1, 1, 0], [0.5, 0.5], dim=2)
    cfg = write(tmp_path / "c.toml", 'mu_file = "a.json"\nnu_file = "b.json"\np = 1\nnormalize_p = 1\n')
    assert run(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "solve.json").read_text())["value"] == pytest.approx(1.0)


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand():
    assert run([]) == 1


def test_unknown_config_key(tmp_path):
    cfg = write(tmp_path / "bad.toml", "mu_file = 'a.json'\ncolour = 3\n")
    assert run(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_nested_table_rejected(tmp_path):
    cfg = write(tmp_path / "bad.toml", "[section]\nx = 1\n")
    assert run(["rates", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_bad_type_rejected(tmp_path):
    cfg = write(tmp_path / "bad.toml", "reps = 'many'\n")
    assert run(["rates", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_invalid_measure_file(tmp_path):
    measure(tmp_path / "mu.json", [0.0, 1.0], [0.5, 0.6])
    measure(tmp_path / "nu.json", [1.0], [1.0])
    cfg = write(tmp_path / "s.toml", 'mu_file = "mu.json"\nnu_file = "nu.json"\n')
    assert run(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_missing_measure_file(tmp_path):
    cfg = write(tmp_path / "s.toml", 'mu_file = "nope.json"\nnu_file = "nope.json"\n')
    assert run(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


RATES_AC4 = """name = "ac4"
setting = "pareto_tail"
mu = "pareto_1d"
mu_q = 1.5
cost = "abs"
p = 1
n_grid = [100, 1000, 10000, 100000]
reps = 2000
seed = 0
slope_target = -0.3333333333333333
slope_tolerance = 0.07
"""


def test_rates_pareto_slope(tmp_path):
    cfg = write(tmp_path / "r.toml", RATES_AC4)
    out = tmp_path / "o"
    assert run(["rates", "--config", str(cfg), "--out", str(out), "--threads", "4"]) == 0
    summary = json.loads((out / "rates_summary.json").read_text())
    assert summary["passed"] is True
    assert abs(summary["slope"] + 1 / 3) <= 0.07


def test_rates_slope_miss_is_contract_violation(tmp_path):
    cfg = write(tmp_path / "r.toml", RATES_AC4.replace("slope_tolerance = 0.07", "slope_tolerance = 0.0001")
                .replace("reps = 2000", "reps = 20").replace(", 100000]", "]"))
    assert run(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_rates_seed_override_and_threads(tmp_path):
    cfg = write(tmp_path / "r.toml", RATES_AC4.replace("reps = 2000", "reps = 50"))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(["rates", "--config", str(cfg), "--out", str(a), "--threads", "1", "--seed", "5"]) in (0, 2)
    assert run(["rates", "--config", str(cfg), "--out", str(b), "--threads", "3", "--seed", "5"]) in (0, 2)
    assert run(["rates", "--config", str(cfg), "--out", str(c), "--threads", "3", "--seed", "6"]) in (0, 2)
    assert (a / "rates.csv").read_bytes() == (b / "rates.csv").read_bytes()
    assert (a / "rates.csv").read_bytes() != (c / "rates.csv").read_bytes()


def test_rates_bad_seed(tmp_path):
    cfg = write(tmp_path / "r.toml", RATES_AC4)
    assert run(["rates", "--config", str(cfg), "--out", str(tmp_path), "--seed", "-3"]) == 1


def test_decompose(tmp_path):
    measure(tmp_path / "mu.json", [0, 1, 3, 7, 15, 31], [0.3, 0.2, 0.2, 0.1, 0.1, 0.1])
    measure(tmp_path / "nu.json", [0.5, 2, 6, 14, 30], [0.3, 0.3, 0.2, 0.1, 0.1])
    cfg = write(tmp_path / "d.toml", 'mu_file = "mu.json"\nnu_file = "nu.json"\np = 1\nn = 40\nruns = 10\n'
                                      'exponent = 1.5\n')
    out = tmp_path / "o"
    assert run(["decompose", "--config", str(cfg), "--out", str(out)]) == 0
    rec = json.loads((out / "decompose.json").read_text())
    assert rec["composite_violations"] == 0
    assert rec["value"] <= rec["composition_bound"] * (1 + 1e-12)
    kind, _, header, rows = read_csv(out / "layers.csv")
    assert kind == "layers" and header[0] == "layer" and len(rows) == len(rec["layers"])


def test_stochastics_and_duals(tmp_path):
    cfg = write(tmp_path / "s.toml", "reps = 2000\nn_values = [10, 100]\n")
    assert run(["stochastics", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    cfg = write(tmp_path / "d.toml", "preset_p = 2.0\nscaling_draws = 2\nks_n = 20000\nks_tolerance = 0.02\n")
    assert run(["duals", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    rec = json.loads((tmp_path / "d" / "duals.json").read_text())
    assert rec["criterion"] == [6.5, 7.0]


def test_duals_control_instance_is_invalid(tmp_path):
    cfg = write(tmp_path / "d.toml", "alpha = 2.5\nbeta = 5.0\ngamma = 4\np = 2.0\n")
    assert run(["duals", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1


def test_report_with_plot(tmp_path):
    cfg = write(tmp_path / "r.toml", RATES_AC4.replace("reps = 2000", "reps = 40"))
    run(["rates", "--config", str(cfg), "--out", str(tmp_path / "r")])
    out_a, out_b = tmp_path / "rep_a", tmp_path / "rep_b"
    csv_path = str(tmp_path / "r" / "rates.csv")
    assert run(["report", "--out", str(out_a), "--plot", csv_path]) == 0
    assert run(["report", "--out", str(out_b), "--plot", csv_path]) == 0
    svg = (out_a / "rates.svg").read_bytes()
    assert svg.startswith(b"<?xml") and svg == (out_b / "rates.svg").read_bytes()
    rec = json.loads((out_a / "report.json").read_text())
    assert rec["inputs"][0]["kind"] == "rates"


def test_report_rejects_foreign_csv(tmp_path):
    bad = write(tmp_path / "x.csv", "a,b\n1,2\n")
    assert run(["report", "--out", str(tmp_path), str(bad)]) == 1


def test_report_needs_inputs(tmp_path):
    assert run(["report", "--out", str(tmp_path)]) == 1


def test_console_entry_point(tmp_path, point_configs):
    proc = subprocess.run([sys.executable, "-m", "otdecomp.cli", "solve", "--config", str(point_configs),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "value = 1.0" in proc.stdout
