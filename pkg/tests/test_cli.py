import csv
import io
import json

import pytest
import yaml

from bb84cert import cli, config

RATE = {
    "command": "rate", "seed": 1,
    "source": {"model": "ideal"},
    "bounds": {"c": 1.0e9},
    "counts": {"mode": "balanced", "n_K": 50_000, "n_T": 20_000, "n_T_e": 300},
}

SIMULATE = {
    "command": "simulate", "seed": 7,
    "source": {"model": "ideal"},
    "protocol": {"N": 20_000, "sessions": 2, "eve": {"kind": "passive", "depolarizing": 0.02},
                 "reconciliation": {"mode": "parity"}},
    "bounds": {"c": 1.0e7},
}

SWEEP = {
    "command": "sweep", "seed": 3,
    "source": {"model": "ideal"},
    "bounds": {"c": 1.0e9},
    "counts": {"mode": "balanced", "n_K": 20_000, "n_T": 10_000, "n_T_e": 100},
    "sweep": {"grid": {"counts.n_T_e": [100, 400, 2000], "bounds.c": [1.0e8, 1.0e9]}},
}

VERIFY = {
    "command": "verify", "seed": 11,
    "verify": {"oracles": ["gram", "distance", "universality"], "distance_pairs": 100,
               "universality_trials": 2000},
}


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _run(tmp_path, data, *extra, out="out.txt"):
    path = _write(tmp_path, data)
    dest = tmp_path / out
    code = cli.main([data["command"], "--config", path, "--out", str(dest), *extra])
    return code, dest.read_text() if dest.exists() else ""


def test_rate_csv(tmp_path):
    code, text = _run(tmp_path, RATE)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == cli.RATE_COLUMNS
    assert int(rows[0]["m"]) > 0


def test_rate_jsonl_and_seed_override(tmp_path):
    code, text = _run(tmp_path, RATE, "--format", "jsonl", "--seed", "99")
    assert code == 0
    row = json.loads(text.splitlines()[0])
    assert row["m"] > 0 and row["reason"] == ""


def test_zero_key_is_success(tmp_path):
    data = {**RATE, "counts": {**RATE["counts"], "n_T_e": 6000}}
    code, text = _run(tmp_path, data)
    assert code == 0
    row = next(csv.DictReader(io.StringIO(text)))
    assert row["m"] == "0" and row["reason"]


@pytest.mark.parametrize("data", [
    {**RATE, "bounds": {"c": 0.5}},
    {**RATE, "source": {"model": "coherent"}},
    {**RATE, "surprise": 1},
    {**RATE, "counts": {"mode": "explicit", "N": 10}},
    {**RATE, "counts": None, "protocol": None},
    {"command": "sweep", "source": {"model": "ideal"}},
])
def test_config_errors_exit_2(tmp_path, data):
    code, _ = _run(tmp_path, data)
    assert code == cli.EXIT_CONFIG


def test_unreadable_config_exit_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("command: [rate\n")
    assert cli.main(["rate", "--config", str(path)]) == cli.EXIT_CONFIG
    assert cli.main(["rate", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_unknown_oracle_exit_2(tmp_path):
    data = {**VERIFY, "verify": {"oracles": ["astrology"]}}
    assert _run(tmp_path, data)[0] == cli.EXIT_CONFIG


def test_verify_passes_and_tamper_fails(tmp_path):
    code, text = _run(tmp_path, VERIFY)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert [r["oracle"] for r in rows] == VERIFY["verify"]["oracles"]
    assert all(r["passed"] == "True" for r in rows)
    tampered = {**VERIFY, "verify": {"oracles": ["tag_exploit"], "tag_sessions": 1, "tamper_s_M": True}}
    assert _run(tmp_path, tampered)[0] == cli.EXIT_ORACLE


def test_simulate_sessions(tmp_path):
    code, text = _run(tmp_path, SIMULATE)
    assert code == 0
    rows = [json.loads(line) for line in text.splitlines()]
    assert [r["index"] for r in rows] == [0, 1]
    for r in rows:
        assert r["recon_converged"]
        assert r["key_length"] <= r["m_bound"]
        if r["key_length"]:
            assert r["key_hex"].startswith(f"{r['key_length']}:")


def test_sweep_grid_and_argmax(tmp_path):
    code, text = _run(tmp_path, SWEEP)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    points = [r for r in rows if r["row_type"] == "point"]
    assert len(points) == 6
    best = [r for r in rows if r["row_type"] == "argmax"]
    assert len(best) == 1 and int(best[0]["m"]) == max(int(r["m"]) for r in points)
    by_c = {}
    for r in points:
        by_c.setdefault(r["param:bounds.c"], []).append(int(r["m"]))
    for ms in by_c.values():
        assert ms == sorted(ms, reverse=True)


@pytest.mark.parametrize("data", [RATE, SIMULATE, SWEEP, VERIFY])
def test_byte_identical_reruns(tmp_path, data):
    _, first = _run(tmp_path, data, out="a.txt")
    _, second = _run(tmp_path, data, out="b.txt")
    assert first == second and first


def test_config_round_trip():
    cfg = config.parse(SIMULATE)
    again = config.parse(yaml.safe_load(config.dump(cfg)))
    assert again == cfg


def test_set_path_creates_blocks():
    out = config.set_path({"a": {}}, "a.b.c", 3)
    assert out == {"a": {"b": {"c": 3}}}


def test_shipped_configs_parse():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.yaml")):
        config.load(str(path))
