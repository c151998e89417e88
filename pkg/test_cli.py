import csv
import os

import numpy as np
import pytest

import cli
from assembly import QuadratureGrid, l2_error, load_vector, mass_matrix
from cli import (CSV_NAME, ResultsTable, _cell, convergence_rate, main, raster_grid, roughness, sample_field,
                 write_raster)
from conforming import ConformingProjector
from database import ResultsDatabase
from derham import FieldCoeffs, grad_matrix
from geometry import build_shifted_disk_map
from projection import GeometricDofGrid, project_polar
from solvers import PoissonProblem, poisson_manufactured_solution, solve_poisson


def read_csv(out_dir):
    with open(os.path.join(out_dir, CSV_NAME), newline="") as fh:
        return list(csv.reader(fh))


class TestHelpers:
    @pytest.mark.parametrize("value,text", [(None, ""), ("PASS", "PASS"), (True, "1"), (np.int64(7), "7"),
                                            (0.5, "5.00000000000e-01"), (np.float64(-2.0), "-2.00000000000e+00")])
    def test_cell_format(self, value, text):
        assert _cell(value) == text

    def test_convergence_rate(self):
        assert convergence_rate(1.0, 0.25, 8, 16) == pytest.approx(2.0)
        assert convergence_rate(None, 0.25, None, 16) is None
        assert convergence_rate(1.0, 0.0, 8, 16) is None

    def test_results_table(self, tmp_path):
        db = ResultsDatabase(str(tmp_path / "r.db"))
        run_id = db.start_run("poisson", {})
        table = ResultsTable(str(tmp_path / CSV_NAME), ["N_s", "L2_err", "L2_rate"], db, run_id)
        table.add({"N_s": 8, "L2_err": 0.125, "L2_rate": None, "extra": 1})
        assert read_csv(tmp_path) == [["N_s", "L2_err", "L2_rate"], ["8", "1.25000000000e-01", ""]]
        assert db.get_rows(run_id) == [{"N_s": 8, "L2_err": 0.125, "L2_rate": None}]

    def test_raster_sampling(self, unit_disk, small_space, tmp_path):
        X, Y = raster_grid(unit_disk, 9)
        assert X.shape == (9, 9)
        assert X.min() == pytest.approx(-1.0) and Y.max() == pytest.approx(1.0, abs=1e-3)
        V = sample_field(unit_disk, small_space, FieldCoeffs(0, np.full(small_space.dim0, 2.0)), X, Y)
        assert np.isnan(V[0, 0])
        assert V[4, 4] == pytest.approx(2.0)
        path = tmp_path / "snap.txt"
        write_raster(str(path), X, Y, V)
        lines = path.read_text().splitlines()
        assert lines[0] == "# x y value"
        assert len(lines) == 82

    def test_roughness(self):
        X, Y = np.meshgrid(np.linspace(-1, 1, 21), np.linspace(-1, 1, 21))
        assert roughness(X, Y, 3 * X + Y, np.zeros(2)) == pytest.approx(0.0, abs=1e-12)
        checker = np.where((np.arange(21)[:, None] + np.arange(21)[None, :]) % 2, 1.0, -1.0)
        assert roughness(X, Y, checker, np.zeros(2)) == pytest.approx(4.0)


class TestMain:
    def test_invalid_configuration(self, tmp_path):
        assert main(["--degree", "1", "--kind", "c1", "--out", str(tmp_path)]) == 1

    def test_verify_run(self, tmp_path):
        out = str(tmp_path / "verify")
        assert main(["--problem", "verify", "--out", out]) == 0
        rows = read_csv(out)
        assert rows[0] == ["suite", "status", "detail"]
        assert {r[1] for r in rows[1:]} == {"PASS"}
        report = (tmp_path / "verify" / "verify.txt").read_text()
        assert report.rstrip().endswith("0 failed")
        runs = ResultsDatabase(os.path.join(out, "polar_results.db")).get_recent_runs()
        assert runs[0]["problem"] == "verify" and runs[0]["status"] == "ok"

    def test_poisson_run(self, tmp_path):
        out = str(tmp_path)
        assert main(["--problem", "poisson", "--ns", "4,8", "--out", out, "--db", str(tmp_path / "p.db")]) == 0
        rows = read_csv(out)
        assert rows[0] == ["N_s", "N_theta", "dofs", "L2_err", "H1_err", "L2_rate", "H1_rate", "cg_iters"]
        assert [r[0] for r in rows[1:]] == ["4", "8"]
        assert rows[1][5] == ""
        assert float(rows[2][5]) > 0
        assert float(rows[2][3]) < float(rows[1][3])

    def test_wave_demo(self, tmp_path):
        out = str(tmp_path)
        assert main(["--problem", "maxwell-wave", "--ns", "4", "--times", "0,0.02", "--raster", "12",
                     "--out", out]) == 0
        assert (tmp_path / "wave_ns4_t0.000.txt").exists()
        assert (tmp_path / "wave_ns4_t0.020.txt").exists()
        rows = read_csv(out)
        assert len(rows) == 3
        assert float(rows[1][3]) > 0

    def test_bessel_study(self, tmp_path):
        out = str(tmp_path)
        assert main(["--problem", "maxwell-bessel", "--ns", "4,8", "--final-time", "0.01", "--timings",
                     "--out", out]) == 0
        rows = read_csv(out)
        assert rows[0][-1] == "seconds"
        assert len(rows) == 3
        assert all(float(r[5]) > 0 for r in rows[1:])

    def test_db_flag_wins_over_environment(self, tmp_path, monkeypatch):
        env_db = tmp_path / "env.db"
        flag_db = tmp_path / "flag.db"
        monkeypatch.setenv("DB_PATH", str(env_db))
        assert main(["--problem", "poisson", "--ns", "4", "--out", str(tmp_path), "--db", str(flag_db)]) == 0
        assert ResultsDatabase(str(flag_db)).get_recent_runs()[0]["problem"] == "poisson"
        assert not env_db.exists()

    def test_unexpected_error_returns_failure(self, tmp_path, monkeypatch):
        def broken(cfg, table_factory):
            raise ValueError("dimension mismatch")

        monkeypatch.setitem(cli.STUDIES, "poisson", broken)
        out = str(tmp_path)
        assert main(["--problem", "poisson", "--ns", "4", "--out", out]) == 1
        runs = ResultsDatabase(os.path.join(out, "polar_results.db")).get_recent_runs()
        assert runs[0]["status"] == "error"

    def test_poisson_error_is_measured_against_projected_solution(self, tmp_path):
        assert main(["--problem", "poisson", "--ns", "4", "--out", str(tmp_path)]) == 0
        reported = float(read_csv(str(tmp_path))[1][3])

        phi_exact, source = poisson_manufactured_solution()
        F = build_shifted_disk_map(2, 4, 8, 0.2)
        sp = F.space
        quad = QuadratureGrid(sp, F)
        G = grad_matrix(sp)
        P0 = ConformingProjector(sp, "c1", F.variant, dirichlet=True).matrix(0)
        pb = PoissonProblem(F, "c1", source=source)
        phi, _ = solve_poisson(pb, sp, G, P0, mass_matrix(0, sp, F, quad), mass_matrix(1, sp, F, quad),
                               load_vector(0, quad, source))
        reference = project_polar(GeometricDofGrid(sp), 0, F, phi_exact)
        assert reported == pytest.approx(l2_error(0, phi, reference, quad), rel=1e-8)


@pytest.mark.slow
class TestConvergenceStudies:
    def test_poisson_rates(self, tmp_path):
        assert main(["--problem", "poisson", "--degree", "2", "--ns", "8,16,32,64", "--kind", "c1",
                     "--out", str(tmp_path)]) == 0
        last = read_csv(str(tmp_path))[-1]
        assert float(last[5]) == pytest.approx(3.89, abs=0.5)
        assert float(last[6]) == pytest.approx(3.77, abs=0.5)

    def test_bessel_rates(self, tmp_path):
        assert main(["--problem", "maxwell-bessel", "--degree", "2", "--ns", "8,16,32", "--mode", "3,2",
                     "--final-time", "0.1", "--out", str(tmp_path)]) == 0
        last = read_csv(str(tmp_path))[-1]
        assert float(last[7]) == pytest.approx(2.02, abs=0.5)
        assert float(last[8]) == pytest.approx(2.05, abs=0.5)
