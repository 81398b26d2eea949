import csv
import io
import json


from conftest import fixture_path
from gsmp_metric.cli import main

FAST = ["--samples", "8", "--grid", "0.05", "--horizon", "3", "--inner-samples", "4",
        "--quantum", "0.1", "--no-horizon-check", "--jobs", "1"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate(capsys):
    assert run(capsys, "validate", fixture_path("relay.json"))[0] == 0
    code, out, _ = run(capsys, "validate", fixture_path("broken.json"))
    assert code == 1 and "probability row sum ≠ 1" in out


def test_malformed_model(capsys, tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{\n  \"states\": [,]\n}")
    code, _, err = run(capsys, "validate", p)
    assert code == 2 and "line 2" in err


def test_bad_expression_position(capsys, tmp_path):
    p = tmp_path / "e.sexp"
    p.write_text("(int\n  (L (prop \"ping\") x))")
    code, _, err = run(capsys, "logic", fixture_path("pingpong.json"), p, "--state", "ping",
                       "--samples", "4", "--horizon", "3")
    assert code == 2 and "line 2" in err and "column" in err


def test_unknown_state(capsys):
    code, _, err = run(capsys, "distance", fixture_path("relay.json"), "--x", "nowhere",
                       "--y", "ping", *FAST)
    assert code == 2 and "unknown state" in err


def test_distance_json(capsys):
    code, out, _ = run(capsys, "distance", fixture_path("relay.json"), "--x", "ping:hit=0.8,fault=2",
                       "--y", "ping:hit=0.6,fault=1.9", "--depth", "2", *FAST)
    assert code == 0
    d = json.loads(out)
    assert 0 <= d["lower"] <= d["value"] <= d["upper"] <= 1
    assert set(d["budget"]) == {"depth_term", "sampling_term", "grid_term", "horizon_term", "total"}
    assert "jobs" not in d["config"] and d["config"]["samples"] == 8


def test_simulate_jsonl(capsys):
    code, out, _ = run(capsys, "simulate", fixture_path("pingpong.json"), "--state", "ping",
                       "-N", "2", "-T", "3.5")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 3
    tr = json.loads(lines[1])
    assert [s["dwell"] for s in tr["segments"]] == [1.0, 1.0, 1.0, 0.5]


def test_j2_scalar(capsys):
    code, out, _ = run(capsys, "j2", fixture_path("f_04.json"), fixture_path("f_05.json"))
    assert code == 0 and abs(json.loads(out)["value"] - 0.1) <= 0.02


def test_logic(capsys):
    code, out, _ = run(capsys, "logic", fixture_path("pingpong.json"), fixture_path("shift.sexp"),
                       "--state", "ping", "--state", "pong", "--samples", "4", "--horizon", "2")
    d = json.loads(out)
    assert code == 0 and len(d["values"]) == 2


def test_horizon_too_short_exit(capsys):
    code, _, err = run(capsys, "logic", fixture_path("pingpong.json"), fixture_path("shift.sexp"),
                       "--state", "ping", "--samples", "4", "--horizon", "1")
    assert code == 2 and "horizon" in err


def test_observables(capsys):
    code, out, _ = run(capsys, "observables", fixture_path("pingpong.json"), "--state", "ping",
                       "--obs", fixture_path("observables.json"), "-N", "10", "-T", "6")
    res = {r["observable"]: r for r in json.loads(out)["results"]}
    assert code == 0
    assert res["hit(pong)"]["mean"] == 1.0
    # ping for 3 of the first 5 time units at rate 1, pong for 2 at rate 0.5
    assert res["cumr(5.0)"]["mean"] == 4.0


def test_continuity_csv(capsys, tmp_path):
    dest = tmp_path / "c.csv"
    code, out, _ = run(capsys, "continuity", fixture_path("relay.json"),
                       "--pairs", fixture_path("pairs_relay.json"), "--obs", fixture_path("obs_relay.json"),
                       "--depth", "2", *FAST, "--out", dest)
    assert code == 0 and out == ""
    text = dest.read_text()
    assert text.startswith("# config ")
    rows = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
    assert {r["status"] for r in rows} <= {"pass", "uninformative"}
    assert {r["pair"] for r in rows} == {"same", "shift0.2", "props"}


def test_manual(capsys):
    code, out, _ = run(capsys, "manual")
    assert code == 0 and "Exit codes" in out


def test_env_seed(capsys, monkeypatch):
    argv = ["simulate", fixture_path("relay.json"), "--state", "ping", "-N", "3", "-T", "4"]
    a = run(capsys, *argv)[1]
    monkeypatch.setenv("GSMP_SEED", "9")
    b = run(capsys, *argv)[1]
    c = run(capsys, *argv, "--seed", "0")[1]
    assert a != b and a == c
