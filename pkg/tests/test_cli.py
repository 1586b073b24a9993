import csv
import json
import os
import subprocess
import sys

import pytest

from synthcontrol.cli import run
from synthcontrol.panel import write_panel

from _factories import random_panel

FAST = ["--v-candidates", "4", "--lambda-grid", "0,0.1"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "panel.csv"
    write_panel(random_panel(seed=51, n_units=6, n_times=14), path)
    return str(path)


def call(capsys, *argv):
    status = run(list(argv))
    out, err = capsys.readouterr()
    return status, out, err


def test_fit_json(capsys, data):
    status, out, _ = call(capsys, "fit", "--data", data, "--treated", "u0", "--t0", "2010",
                          "--estimator", "dsc_pen", "--format", "json", *FAST)
    assert status == 0
    doc = json.loads(out)
    assert doc["schema_version"] == "1.0" and doc["command"] == "fit"
    r = doc["result"]
    for key in ("weights", "importance", "lambda", "alpha", "effects", "pre_rmspe", "post_rmspe"):
        assert key in r
    assert set(r["weights"]) == {"u1", "u2", "u3", "u4", "u5"}
    assert list(r["effects"]) == ["2010", "2011", "2012", "2013"]
    assert sum(r["weights"].values()) == pytest.approx(1.0, abs=1e-9)


def test_text_values_appear_verbatim_in_json(capsys, data):
    args = ["fit", "--data", data, "--treated", "u0", "--t0", "2010", "--estimator", "sc_pen", *FAST]
    _, text, _ = call(capsys, *args)
    _, js, _ = call(capsys, *args, "--format", "json")
    r = json.loads(js)["result"]
    assert f"lambda = {r['lambda']!r}" in text
    assert f"pre-RMSPE = {r['pre_rmspe']!r}" in text
    for t, e in r["effects"].items():
        assert f"  {t}  {e!r}" in text


def test_seed_reproduces_bit_for_bit(capsys, data):
    args = ["fit", "--data", data, "--treated", "u0", "--t0", "2010", "--estimator", "sc", "--seed", "9",
            "--format", "json", "--v-candidates", "6"]
    assert call(capsys, *args)[1] == call(capsys, *args)[1]


def test_out_directory_gets_every_artifact(capsys, data, tmp_path):
    status, _, _ = call(capsys, "fit", "--data", data, "--treated", "u0", "--t0", "2010", "--out", str(tmp_path), *FAST)
    assert status == 0
    assert sorted(os.listdir(tmp_path)) == ["fit.json", "fit.txt", "paths.csv"]
    rows = list(csv.DictReader(open(tmp_path / "paths.csv")))
    assert len(rows) == 14 and set(rows[0]) == {"time", "treated", "counterfactual", "gap"}


def test_split_flag(capsys, data):
    status, out, _ = call(capsys, "fit", "--data", data, "--treated", "u0", "--t0", "2010", "--split", "6:4",
                          "--format", "json", *FAST)
    assert status == 0
    r = json.loads(out)["result"]
    assert (r["train_len"], r["valid_len"]) == (6, 4)
    status, _, err = call(capsys, "fit", "--data", data, "--treated", "u0", "--t0", "2010", "--split", "6:3")
    assert status == 1 and "InvalidDesign" in err


def test_domain_error_exits_1_and_names_the_guard(capsys, data):
    status, _, err = call(capsys, "fit", "--data", data, "--treated", "u0", "--t0", "2000", "--estimator", "sc")
    assert status == 1
    assert "InvalidDesign" in err and "at least one period strictly before" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--data", "x.csv"],
        ["fit", "--estimator", "ols"],
        ["fit", "--split", "3-4"],
        ["fit", "--lambda-grid", "a,b"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors_exit_2(capsys, data, argv):
    status, _, err = call(capsys, *argv)
    assert status == 2
    assert "usage:" in err


def test_missing_file_is_reported(capsys, tmp_path):
    status, _, err = call(capsys, "fit", "--data", str(tmp_path / "nope.csv"), "--treated", "a", "--t0", "1")
    assert status == 1 and "FileNotFoundError" in err


def test_balance(capsys, data):
    status, out, _ = call(capsys, "balance", "--data", data, "--treated", "u0", "--t0", "2010", *FAST)
    assert status == 0
    assert "WMAPE" in out and "Importance" in out
    status, out, _ = call(capsys, "balance", "--data", data, "--treated", "u0", "--t0", "2010", "--format", "json", *FAST)
    doc = json.loads(out)
    assert doc["balance"]["mode"] == "levels"
    status, out, _ = call(capsys, "balance", "--data", data, "--treated", "u0", "--t0", "2010", "--estimator", "dsc",
                          "--normalize-balance", "--format", "csv", *FAST)
    assert status == 0 and out.startswith("variable,treated,synthetic,wmape,importance")


def test_placebo_space(capsys, data, tmp_path):
    status, out, _ = call(capsys, "placebo-space", "--data", data, "--treated", "u0", "--t0", "2010",
                          "--out", str(tmp_path), "--format", "json", "--jobs", "2", *FAST)
    assert status == 0
    doc = json.loads(out)
    assert len(doc["ratios"]) == 6
    assert 0 < doc["p_value"] <= 1
    assert {"placebo_paths.csv", "placebo_ratios.csv", "placebo_space.json", "placebo_space.txt"} <= set(os.listdir(tmp_path))


def test_placebo_time(capsys, data):
    status, out, _ = call(capsys, "placebo-time", "--data", data, "--treated", "u0", "--t0", "2010",
                          "--placebo-t0", "2006", "--format", "json", *FAST)
    assert status == 0
    assert json.loads(out)["result"]["t0"] == 2006
    status, _, err = call(capsys, "placebo-time", "--data", data, "--treated", "u0", "--t0", "2010",
                          "--placebo-t0", "2001")
    assert status == 1 and "InsufficientPrePeriods" in err


def test_evaluate(capsys, data):
    status, out, _ = call(capsys, "evaluate", "--data", data, "--treated", "u0", "--t0", "2010",
                          "--estimators", "sc,dsc", "--format", "json", *FAST)
    assert status == 0
    doc = json.loads(out)
    assert [s["kind"] for s in doc["summary"]] == ["sc", "dsc"]
    assert doc["metadata"]["panel"]["excluded_treated_unit"] == "u0"
    status, _, _ = call(capsys, "evaluate", "--data", data, "--treated", "u0", "--t0", "2010", "--estimators", "ols")
    assert status == 2


def test_bias_lab_examples(capsys):
    status, out, _ = call(capsys, "bias-lab", "--reproduce-examples")
    assert status == 0 and "FAIL" not in out and "claims pass" in out
    status, out, _ = call(capsys, "bias-lab", "--reproduce-examples", "--format", "json")
    assert json.loads(out)["passed"] is True


def test_bias_lab_simulation_round_trips_through_fit(capsys, tmp_path):
    status, out, _ = call(capsys, "bias-lab", "--link", "linear", "--donors", "5", "--periods", "10",
                          "--format", "csv", "--out", str(tmp_path))
    assert status == 0 and out.startswith("unit,time,outcome,z1")
    truth = json.load(open(tmp_path / "truth.json"))
    assert truth["link"] == "linear" and truth["treated_unit"] == "unit1"
    status, _, _ = call(capsys, "fit", "--data", str(tmp_path / "panel.csv"), "--treated", "unit1", "--t0", "7", *FAST)
    assert status == 0
    status, out, _ = call(capsys, "bias-lab", "--link", "power(1)")
    assert "linear in disguise" in out


def test_module_entry_point(data):
    proc = subprocess.run(
        [sys.executable, "-m", "synthcontrol", "fit", "--data", data, "--treated", "u0", "--t0", "2000"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert "strictly before" in proc.stderr


def test_package_exports_resolve():
    import synthcontrol

    for name in synthcontrol.__all__:
        assert getattr(synthcontrol, name) is not None
    with pytest.raises(AttributeError):
        synthcontrol.not_a_name
