import csv
import io
import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import fig3_spec, table4_spec
from mixedfleet.cli import CSV_HEADER, cli, parse_range
from mixedfleet.model import save_network
from mixedfleet.oracle_two_region import closed_form_optimum


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def fig3_file(tmp_path):
    path = tmp_path / "fig3.json"
    save_network(fig3_spec(), path)
    return str(path)


def run(runner, *args):
    return runner.invoke(cli, [str(a) for a in args])


def solve_record(runner, tmp_path, network, *args, name="rec.json"):
    out = tmp_path / name
    res = run(runner, "solve", network, *args, "--out", out)
    assert res.exit_code == 0, res.output
    return out, json.loads(out.read_text())


def test_parse_range():
    assert parse_range("0:1:0.25") == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])
    assert parse_range("0:0.9:0.05")[-1] == pytest.approx(0.9)
    for bad in ("1:0:1", "0:1:0", "0:1", "a:b:c"):
        with pytest.raises(Exception):
            parse_range(bad)


def test_av_first_record_and_validation(runner, tmp_path, fig3_file):
    out, rec = solve_record(runner, tmp_path, fig3_file, "--algorithm", "av-first", "-M", 1, "-N", 10)
    best = closed_form_optimum(fig3_spec(), 1.0, 10.0).profit
    assert rec["total_profit"] / best == pytest.approx(0.9, abs=0.01)
    for key in ("command", "network_digest", "parameters", "algorithm", "seed", "b_C", "x_A", "x_C", "w_C",
                "av_active_mass", "cv_active_mass", "iterations", "evaluations", "wall_time"):
        assert key in rec
    res = run(runner, "validate", out, fig3_file)
    assert res.exit_code == 0, res.output
    assert "all checks passed" in res.output


def test_hand_edited_record_fails_validation(runner, tmp_path, fig3_file):
    out, rec = solve_record(runner, tmp_path, fig3_file, "--algorithm", "av-first", "-M", 1, "-N", 10)
    rec["x_C"][0][0] += 0.1
    out.write_text(json.dumps(rec))
    res = run(runner, "validate", out, fig3_file)
    assert res.exit_code == 3
    assert "cv_flow_balance" in res.output and "FAIL" in res.output


def test_record_against_another_network_fails(runner, tmp_path, fig3_file):
    out, _ = solve_record(runner, tmp_path, fig3_file, "--algorithm", "av-first", "-M", 1, "-N", 5)
    other = tmp_path / "other.json"
    save_network(fig3_spec(price=1.2), other)
    assert run(runner, "validate", out, other).exit_code == 3


def test_genetic_records_repeat(runner, tmp_path, fig3_file):
    args = ("--algorithm", "genetic", "-M", 2, "-N", 5, "--seed", 4, "--generations", 5)
    _, a = solve_record(runner, tmp_path, fig3_file, *args, name="a.json")
    _, b = solve_record(runner, tmp_path, fig3_file, *args, name="b.json")
    assert a["total_profit"] == b["total_profit"]
    assert a["b_C"] == b["b_C"] and a["seed"] == 4


@pytest.mark.parametrize("algorithm", ["gd", "bundle", "exhaustive", "multistart", "oracle"])
def test_every_record_validates(runner, tmp_path, fig3_file, algorithm):
    out, rec = solve_record(runner, tmp_path, fig3_file, "--algorithm", algorithm, "-M", 2, "-N", 5,
                            "--steps", 10)
    assert rec["algorithm"].startswith(algorithm)
    assert run(runner, "validate", out, fig3_file).exit_code == 0


def test_input_errors_exit_1(runner, tmp_path, fig3_file):
    res = run(runner, "solve", fig3_file, "-M", -1, "-N", 10)
    assert res.exit_code == 1 and "-M" in res.output
    assert run(runner, "solve", tmp_path / "missing.json", "-M", 1, "-N", 1).exit_code == 1
    assert run(runner, "frobnicate").exit_code == 1
    assert run(runner, "sweep", fig3_file, "--vary", "M", "--range", "3:1:1").exit_code == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run(runner, "solve", broken, "-M", 1, "-N", 1).exit_code == 1


def test_endogenous_records(runner, tmp_path, fig3_file):
    out = tmp_path / "e.json"
    res = run(runner, "endogenous", fig3_file, "-I", 0.9, "--n-max", 10, "--algorithm", "av-first", "--out", out)
    assert res.exit_code == 0, res.output
    rec = json.loads(out.read_text())
    assert rec["fleet_av"] == 0.0 and not np.any(rec["x_A"])
    assert run(runner, "validate", out, fig3_file).exit_code == 0

    res = run(runner, "endogenous", fig3_file, "-I", 0, "--n-max", 0, "--algorithm", "av-first", "--out", out)
    assert res.exit_code == 0
    rec = json.loads(out.read_text())
    assert rec["total_profit"] == pytest.approx(7.0) and rec["cv_active_mass"] == 0.0


def _rows(text):
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == list(CSV_HEADER)
    return [[float(r[0]), float(r[1]), float(r[2]), float(r[3]), r[4], int(r[5])] for r in rows[1:]]


def test_oracle_sweep_non_decreasing_in_M(runner, fig3_file):
    res = run(runner, "sweep", fig3_file, "--vary", "M", "--range", "0:6:1", "-N", 10, "--algorithm", "oracle")
    assert res.exit_code == 0, res.output
    rows = _rows(res.output)
    assert [r[0] for r in rows] == [0, 1, 2, 3, 4, 5, 6]
    assert np.all(np.diff([r[1] for r in rows]) >= -1e-9)


def test_grid_marginal_value_of_avs_rises_somewhere(runner, tmp_path):
    path = tmp_path / "grid.json"
    save_network(table4_spec(), path)
    out = tmp_path / "sweep.csv"
    res = run(runner, "sweep", path, "--vary", "M", "--range", "0:20:1", "-N", 16, "--out", out)
    assert res.exit_code == 0, res.output
    profit = np.array([r[1] for r in _rows(out.read_text())])
    slope = np.diff(profit)
    assert np.sum(np.diff(slope) > 1e-6) >= 2


def test_endogenous_sweep_loss_peak(runner, fig3_file):
    common = ("sweep", fig3_file, "--vary", "I", "--range", "0:0.9:0.1", "--n-max", 10)
    first = _rows(run(runner, *common, "--algorithm", "av-first").output)
    best = _rows(run(runner, *common, "--algorithm", "oracle").output)
    loss = [1 - f[1] / b[1] for f, b in zip(first, best)]
    assert first[int(np.argmax(loss))][0] == pytest.approx(0.8)
    assert max(loss) == pytest.approx(0.3502, abs=0.01)


def test_gen_grid_repeats(runner, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(runner, "gen-grid", 2, 2, "--seed", 7, "--out", a).exit_code == 0
    assert run(runner, "gen-grid", 2, 2, "--seed", 7, "--out", b).exit_code == 0
    assert a.read_text() == b.read_text()
    assert run(runner, "gen-grid", 1, 1).exit_code == 1


def test_global_tolerance(runner, tmp_path, fig3_file):
    out, rec = solve_record(runner, tmp_path, fig3_file, "--algorithm", "av-first", "-M", 1, "-N", 10)
    rec["total_profit"] += 1e-5
    out.write_text(json.dumps(rec))
    assert run(runner, "validate", out, fig3_file).exit_code == 3
    assert run(runner, "--tolerance", 1e-4, "validate", out, fig3_file).exit_code == 0
