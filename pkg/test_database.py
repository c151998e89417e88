import sqlite3

import pytest

from database import ResultsDatabase


@pytest.fixture
def db(tmp_path):
    return ResultsDatabase(str(tmp_path / "results.db"))


def test_run_lifecycle(db):
    run_id = db.start_run("poisson", {"degree": 3, "ns": [8, 16]})
    assert run_id == 1
    assert db.add_row(run_id, {"N_s": 8, "L2_err": 1e-3})
    assert db.add_row(run_id, {"N_s": 16, "L2_err": 6e-5, "L2_rate": None})
    assert db.get_rows(run_id) == [{"N_s": 8, "L2_err": 1e-3}, {"N_s": 16, "L2_err": 6e-5, "L2_rate": None}]
    assert db.finish_run(run_id)
    runs = db.get_recent_runs()
    assert runs[0]["status"] == "ok"
    assert runs[0]["config"] == {"degree": 3, "ns": [8, 16]}
    assert runs[0]["finished_ts"] >= runs[0]["started_ts"]


def test_recent_runs_filtered(db):
    db.start_run("poisson", {})
    db.start_run("verify", {})
    db.start_run("verify", {})
    assert [r["id"] for r in db.get_recent_runs("verify")] == [3, 2]
    assert len(db.get_recent_runs(limit=1)) == 1


def test_unknown_run(db):
    assert not db.finish_run(42)
    assert db.get_rows(42) == []


def test_explicit_path_wins_over_environment(tmp_path, monkeypatch):
    env_path = tmp_path / "env.db"
    path = tmp_path / "explicit.db"
    monkeypatch.setenv("DB_PATH", str(env_path))
    db = ResultsDatabase(str(path))
    assert db.db_path == str(path)
    assert path.exists()
    assert not env_path.exists()


def test_errors_are_logged(db, caplog):
    with sqlite3.connect(db.db_path) as conn:
        conn.execute("DROP TABLE runs")
        conn.execute("DROP TABLE study_rows")
    assert db.start_run("poisson", {}) is None
    assert not db.add_row(1, {"N_s": 8})
    assert db.get_recent_runs() == []
    assert "Error starting run" in caplog.text
