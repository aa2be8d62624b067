import json
import os

import numpy as np
import pytest

from asprom.cli import main, run_offline, run_online, run_verify, validate_config
from asprom.exceptions import InvalidConfig

SMALL = {
    "hdm": {"nf": 20, "ns": 3, "n_params": 6, "planted_rank": 2},
    "sampling": {"max_entries": 8, "greedy_tol": 0.05},
    "rom": {"nf_keep": 10},
    "optimizer": {"max_iter": 30},
    "seed": 3,
}


def _write_cfg(path, raw):
    with open(path, "w") as fh:
        json.dump(raw, fh)
    return str(path)


@pytest.fixture(scope="module")
def offline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("off")
    cfg = _write_cfg(out / "cfg.json", SMALL)
    assert main(["offline", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_schema_rejects_unknown_key():
    with pytest.raises(InvalidConfig, match="bogus"):
        validate_config({**SMALL, "bogus": 1})


def test_schema_rejects_wrong_type():
    with pytest.raises(InvalidConfig, match="hdm/nf"):
        validate_config({"hdm": {"nf": "many", "ns": 3, "n_params": 6}})


def test_schema_rejects_inverted_candidate_box():
    with pytest.raises(InvalidConfig):
        validate_config({**SMALL, "sampling": {"c1": 0.1, "c2": -0.1}})


def test_defaults_filled():
    cfg = validate_config({"hdm": {"nf": 20, "ns": 3, "n_params": 6}})
    assert cfg["optimizer"]["zeta_lb"] == 4.75e-3
    assert cfg["sampling"]["c1"] == pytest.approx(-0.15)
    assert cfg["sampling"]["c2"] == pytest.approx(0.15)


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "bad.json", {"hdm": {"nf": 20}})
    assert main(["offline", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["offline", "--config", str(tmp_path / "nope.json")]) == 2


def test_offline_writes_reports(offline_dir):
    rep = json.loads((offline_dir / "offline_report.json").read_text())
    assert rep["status"] == "OK"
    assert rep["N_DB"] >= 1
    assert (offline_dir / "db.json").exists()


def test_pipeline_deterministic(tmp_path, offline_dir):
    cfg = _write_cfg(tmp_path / "cfg.json", SMALL)
    assert main(["offline", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "db.json").read_bytes() == (offline_dir / "db.json").read_bytes()
    for out in (tmp_path / "a", tmp_path / "b"):
        assert main(["online", "--config", cfg, "--db", str(tmp_path / "db.json"),
                     "--out", str(out)]) == 0
    assert (tmp_path / "a" / "convergence.csv").read_bytes() == \
        (tmp_path / "b" / "convergence.csv").read_bytes()


def test_online_does_not_touch_database(tmp_path, offline_dir):
    db = offline_dir / "db.json"
    before, mtime = db.read_bytes(), os.stat(db).st_mtime_ns
    cfg = validate_config(SMALL)
    rec, summary = run_online(cfg, str(db), str(tmp_path))
    assert db.read_bytes() == before and os.stat(db).st_mtime_ns == mtime
    header = (tmp_path / "convergence.csv").read_text().splitlines()[0]
    assert header == "iter,objective,max_violation,min_zeta,step_norm"
    assert summary["N_DB"] == json.loads((offline_dir / "offline_report.json").read_text())["N_DB"]
    assert len(summary["mu"]) == 6
    lo, hi = -0.3, 0.3
    assert np.all(np.asarray(summary["mu"]) >= lo - 1e-8)
    assert np.all(np.asarray(summary["mu"]) <= hi + 1e-8)


def test_online_rejects_other_hdm(tmp_path, offline_dir):
    cfg = _write_cfg(tmp_path / "cfg.json", {**SMALL, "seed": 4})
    assert main(["online", "--config", cfg, "--db", str(offline_dir / "db.json"),
                 "--out", str(tmp_path)]) == 3


def test_verify_passes(tmp_path, offline_dir):
    rep = run_verify(validate_config(SMALL), str(offline_dir / "db.json"), str(tmp_path))
    names = {c["name"]: c["status"] for c in rep["checks"]}
    assert rep["passed"], rep
    assert set(names) == {"hdm_vs_prom_damping", "procrustes_optimality", "as_subspace_recovery",
                          "database_consistency", "interpolation_reproduction"}


def test_verify_flags_tampered_database(tmp_path, offline_dir):
    raw = bytearray((offline_dir / "db.json").read_bytes())
    i = raw.index(b'"data"') + 12
    raw[i] = ord("A") if raw[i] != ord("A") else ord("B")
    bad = tmp_path / "db.json"
    bad.write_bytes(bytes(raw))
    cfg = _write_cfg(tmp_path / "cfg.json", SMALL)
    assert main(["verify", "--config", cfg, "--db", str(bad), "--out", str(tmp_path)]) == 2
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    status = {c["name"]: c["status"] for c in rep["checks"]}
    assert status["database_consistency"] == "FAIL"
    assert not rep["passed"]


def test_verify_size_limit():
    cfg = validate_config({"hdm": {"nf": 300, "ns": 3, "n_params": 6}})
    with pytest.raises(InvalidConfig):
        run_verify(cfg)


def test_report_command(offline_dir, capsys):
    assert main(["report", "--out", str(offline_dir)]) == 0
    out = capsys.readouterr().out
    assert "offline_report.json" in out and "N_DB" in out


def test_report_empty_dir(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 3


def test_failed_offline_writes_status(tmp_path):
    raw = {**SMALL, "sampling": {"n_grid": 2, "c1": 5.0, "c2": 6.0, "mode": "plain"}}
    with pytest.raises(Exception):
        run_offline(validate_config(raw), str(tmp_path))
    rep = json.loads((tmp_path / "offline_report.json").read_text())
    assert rep["status"] == "FAILED" and "error" in rep
