import numpy as np

from config import RunConfig
from geometry import SplinePolarMapping, build_shifted_disk_map, save_mapping
from verify import FAIL, PASS, SKIPPED, SUITES, SuiteResult, run_suites, write_report


def test_suites_registered():
    names = [name for name, _ in SUITES]
    assert len(names) == len(set(names))
    assert {"idempotence", "commuting_diagram", "singularity", "leapfrog_structure"} <= set(names)


def test_angular_condition_skips():
    cfg = RunConfig(ns=[3], ntheta_factor=2)
    results = run_suites(cfg, ["discrete_trigonometry", "p_block_projector", "partition_of_unity"])
    assert [r.status for r in results] == [PASS, SKIPPED, SKIPPED]


def test_reflected_map_file_fails(tmp_path):
    F = build_shifted_disk_map(2, 4, 8)
    reflected = SplinePolarMapping(F.space, F.control_points * np.array([1.0, -1.0]), x0=F.x0, strict=False)
    path = tmp_path / "reflected.txt"
    save_mapping(str(path), reflected)
    results = run_suites(RunConfig(map_file=str(path)), ["singularity"])
    assert results[0].status == FAIL
    assert str(path) in results[0].detail


def test_report(tmp_path):
    path = tmp_path / "verify.txt"
    write_report([SuiteResult("a", PASS, "ok"), SuiteResult("b", FAIL, "broken")], str(path))
    lines = path.read_text().splitlines()
    assert lines[1].split()[:2] == ["b", "FAIL"]
    assert lines[-1] == "# 2 suites, 1 failed"


def test_characterization_passes_with_defaults():
    result = run_suites(RunConfig(), ["characterization"])[0]
    assert result.status == PASS, result.detail


def test_numerical_errors_become_failures(monkeypatch):
    def broken(ctx):
        raise ValueError("matmul: dimension mismatch")

    monkeypatch.setattr("verify.SUITES", [("broken", broken), ("fine", lambda ctx: SuiteResult("fine", PASS))])
    results = run_suites(RunConfig(ns=[3]))
    assert [r.status for r in results] == [FAIL, PASS]
    assert "ValueError" in results[0].detail
