import csv
import logging
import math
import os
import time
from dataclasses import asdict
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from assembly import QuadratureGrid, h1_error, l2_error, l2_error_to_field, load_vector, mass_matrix
from config import RunConfig, load_config
from conforming import ConformingProjector
from database import ResultsDatabase
from derham import FieldCoeffs, TensorDeRham, eval_points, grad_matrix
from errors import PolarFEECError
from geometry import PolarMapping, build_shifted_disk_map, pushforward_eval
from projection import GeometricDofGrid, project_polar
from solvers import (BesselMode, MaxwellState, MaxwellSystem, PoissonProblem, bessel_exact,
                     gaussian_pulse_fields, gaussian_pulse_initial, poisson_manufactured_solution,
                     solve_poisson, suzuki_yoshida4)
from splines import TWO_PI
from verify import FAIL, run_suites, write_report

logger = logging.getLogger(__name__)

CSV_NAME = "results.csv"
ROUGHNESS_RADIUS = 0.2
COARSE_OSCILLATION_NS = 8


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, int, np.integer)):
        return str(int(value))
    return "%.11e" % float(value)


class ResultsTable:
    """results.csv writer; each row is flushed immediately and mirrored to the results database."""

    def __init__(self, path: str, columns: Sequence[str], db: Optional[ResultsDatabase] = None,
                 run_id: Optional[int] = None):
        self.path = path
        self.columns = list(columns)
        self.db = db
        self.run_id = run_id
        self.rows: List[Dict[str, Any]] = []
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(self.columns)

    def add(self, row: Dict[str, Any]) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_cell(row.get(c)) for c in self.columns])
        self.rows.append(row)
        if self.db is not None and self.run_id is not None:
            self.db.add_row(self.run_id, {c: row.get(c) for c in self.columns})


def convergence_rate(prev_err: Optional[float], err: float, prev_ns: Optional[int], ns: int) -> Optional[float]:
    """Observed order between two grids; log2(err(N) / err(2N)) for doubled grids."""
    if prev_err is None or prev_err <= 0 or err <= 0 or prev_ns is None or prev_ns == ns:
        return None
    return math.log(prev_err / err) / math.log(ns / prev_ns)


def _domain(cfg: RunConfig, ns: int):
    F = build_shifted_disk_map(cfg.degree, ns, cfg.ntheta(ns), cfg.pole_shift)
    return F, F.space


def _with_timing(cfg: RunConfig, columns: List[str]) -> List[str]:
    return columns + ["seconds"] if cfg.timings else columns


def run_poisson_study(cfg: RunConfig, table_factory: Callable[[List[str]], ResultsTable]) -> List[Dict[str, Any]]:
    columns = _with_timing(cfg, ["N_s", "N_theta", "dofs", "L2_err", "H1_err", "L2_rate", "H1_rate", "cg_iters"])
    table = table_factory(columns)
    phi_exact, source = poisson_manufactured_solution()
    prev = None
    for ns in cfg.grids:
        start = time.perf_counter()
        F, sp = _domain(cfg, ns)
        quad = QuadratureGrid(sp, F)
        G = grad_matrix(sp)
        projector = ConformingProjector(sp, cfg.kind, F.variant, dirichlet=True)
        M0 = mass_matrix(0, sp, F, quad, cfg.threads)
        M1 = mass_matrix(1, sp, F, quad, cfg.threads)
        pb = PoissonProblem(F, cfg.kind, alpha=cfg.alpha, source=source, exact=phi_exact)
        rhs = load_vector(0, quad, source)
        phi_h, info = solve_poisson(pb, sp, G, projector.matrix(0), M0, M1, rhs,
                                    tol=cfg.cg_tol, maxiter=cfg.cg_maxiter)

        reference = project_polar(GeometricDofGrid(sp), 0, F, phi_exact)
        row = {
            "N_s": ns, "N_theta": sp.n_theta, "dofs": sp.dim0,
            "L2_err": l2_error(0, phi_h, reference, quad),
            "H1_err": h1_error(phi_h, reference, quad, G),
            "cg_iters": info.iterations,
        }
        row["L2_rate"] = convergence_rate(prev and prev["L2_err"], row["L2_err"], prev and prev["N_s"], ns)
        row["H1_rate"] = convergence_rate(prev and prev["H1_err"], row["H1_err"], prev and prev["N_s"], ns)
        row["seconds"] = time.perf_counter() - start
        table.add(row)
        logger.info(f"Poisson N_s={ns}: L2={row['L2_err']:.3e} H1={row['H1_err']:.3e} "
                    f"rates=({row['L2_rate']}, {row['H1_rate']})")
        prev = row
    return table.rows


def _integrate_bessel(system: MaxwellSystem, grid: GeometricDofGrid, mode: BesselMode, final_time: float,
                      dt: float) -> MaxwellState:
    F = system.F
    e0 = system.projector.apply(1, project_polar(grid, 1, F, lambda x, y: bessel_exact(mode, 0.0, x, y)[0]))
    b0 = system.projector.apply(2, project_polar(grid, 2, F, lambda x, y: bessel_exact(mode, 0.0, x, y)[1]))
    n_steps = max(1, int(math.ceil(final_time / dt - 1e-9)))
    state = MaxwellState(E=e0, B=b0, t=0.0, dt=final_time / n_steps)
    state = suzuki_yoshida4(state, system, n_steps)
    logger.info(f"Integrated {n_steps} SY4 steps to t={state.t:.4g}; "
                f"E conformity defect {system.conformity_defect(state):.3e}")
    return state


def _bessel_errors(state: MaxwellState, quad: QuadratureGrid, mode: BesselMode, t: float):
    e_err = l2_error_to_field(1, state.E, quad, lambda x, y: bessel_exact(mode, t, x, y)[0])
    b_err = l2_error_to_field(2, state.B, quad, lambda x, y: bessel_exact(mode, t, x, y)[1])
    return e_err, b_err


def run_maxwell_bessel_study(cfg: RunConfig,
                             table_factory: Callable[[List[str]], ResultsTable]) -> List[Dict[str, Any]]:
    columns = ["N_s", "N_theta", "dofs", "dt", "steps", "E_err", "B_err", "E_rate", "B_rate"]
    if cfg.dt_halving:
        columns += ["E_dt_change", "B_dt_change"]
    table = table_factory(_with_timing(cfg, columns))
    mode = BesselMode.from_indices(*cfg.mode)
    logger.info(f"Bessel mode n={mode.n} m={mode.m} k={mode.k:.12f}")
    prev = None
    for ns in cfg.grids:
        start = time.perf_counter()
        F, sp = _domain(cfg, ns)
        quad = QuadratureGrid(sp, F)
        system = MaxwellSystem(sp, F, cfg.kind, quad, cfg.threads)
        grid = GeometricDofGrid(sp)
        dt = cfg.dt or system.default_time_step()
        state = _integrate_bessel(system, grid, mode, cfg.final_time, dt)
        e_err, b_err = _bessel_errors(state, quad, mode, cfg.final_time)
        row = {"N_s": ns, "N_theta": sp.n_theta, "dofs": sp.dim1, "dt": state.dt,
               "steps": int(round(cfg.final_time / state.dt)), "E_err": e_err, "B_err": b_err}
        row["E_rate"] = convergence_rate(prev and prev["E_err"], e_err, prev and prev["N_s"], ns)
        row["B_rate"] = convergence_rate(prev and prev["B_err"], b_err, prev and prev["N_s"], ns)
        if cfg.dt_halving:
            half = _integrate_bessel(system, grid, mode, cfg.final_time, 0.5 * state.dt)
            e_half, b_half = _bessel_errors(half, quad, mode, cfg.final_time)
            row["E_dt_change"] = abs(e_half - e_err) / e_err
            row["B_dt_change"] = abs(b_half - b_err) / b_err
            if max(row["E_dt_change"], row["B_dt_change"]) > 0.05:
                logger.warning(f"N_s={ns}: halving dt changes errors by more than 5%; time error not negligible")
        row["seconds"] = time.perf_counter() - start
        table.add(row)
        logger.info(f"Maxwell N_s={ns}: E={e_err:.3e} B={b_err:.3e}")
        prev = row
    return table.rows


def raster_grid(F: PolarMapping, n: int):
    """Uniform n x n grid over the bounding box of the mapped domain."""
    theta = np.linspace(0.0, TWO_PI, 4 * n, endpoint=False)
    bx, by = F.evaluate(np.full_like(theta, F.length), theta)
    xs = np.linspace(min(bx.min(), F.x0[0]), max(bx.max(), F.x0[0]), n)
    ys = np.linspace(min(by.min(), F.x0[1]), max(by.max(), F.x0[1]), n)
    return np.meshgrid(xs, ys, indexing="xy")


def sample_field(F: PolarMapping, sp: TensorDeRham, coeffs: FieldCoeffs, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Physical values of a scalar field (level 0 or 2) at raster points, NaN outside the domain."""
    s, t = F.inverse(X, Y)
    values = np.full(s.shape, np.nan)
    inside = ~np.isnan(s)
    s_in = np.maximum(s[inside], 1e-12 * F.length)
    logical = eval_points(sp, coeffs, s_in, t[inside])
    values[inside] = pushforward_eval(coeffs.level, F, logical, s_in, t[inside])
    return values.reshape(X.shape)


def write_raster(path: str, X: np.ndarray, Y: np.ndarray, V: np.ndarray) -> None:
    np.savetxt(path, np.column_stack([X.ravel(), Y.ravel(), V.ravel()]), fmt="%.11e", header="x y value")


def roughness(X: np.ndarray, Y: np.ndarray, V: np.ndarray, center: np.ndarray,
              radius: float = ROUGHNESS_RADIUS) -> float:
    """Largest absolute second difference of the raster near ``center``."""
    near = np.hypot(X - center[0], Y - center[1]) <= radius
    worst = 0.0
    for axis in (0, 1):
        lo, mid, hi = (np.take(V, np.arange(k, V.shape[axis] - 2 + k), axis=axis) for k in range(3))
        mask = np.take(near, np.arange(1, V.shape[axis] - 1), axis=axis)
        second = np.abs(lo - 2 * mid + hi)[mask]
        second = second[np.isfinite(second)]
        if second.size:
            worst = max(worst, float(second.max()))
    return worst


def run_wave_demo(cfg: RunConfig, table_factory: Callable[[List[str]], ResultsTable]) -> List[Dict[str, Any]]:
    table = table_factory(_with_timing(cfg, ["N_s", "N_theta", "time", "energy", "B_max", "roughness",
                                              "curl_defect"]))
    _, b_exact = gaussian_pulse_fields(cfg.sigma)
    for ns in cfg.grids:
        start = time.perf_counter()
        F, sp = _domain(cfg, ns)
        if ns <= COARSE_OSCILLATION_NS:
            logger.warning(f"N_s={ns}: spurious oscillations possible around the pole")
        quad = QuadratureGrid(sp, F)
        system = MaxwellSystem(sp, F, cfg.kind, quad, cfg.threads)
        grid = GeometricDofGrid(sp)
        e0, b0 = gaussian_pulse_initial(cfg.sigma, grid, F, system.projector)
        curl_defect = float(np.linalg.norm(b0.data - system.CP1 @ e0.data) / np.linalg.norm(b0.data))
        logger.info(f"N_s={ns}: |B0 - C P1 E0| / |B0| = {curl_defect:.3e}")
        dt = cfg.dt or system.default_time_step()
        state = MaxwellState(E=e0, B=b0, t=0.0, dt=dt)
        X, Y = raster_grid(F, cfg.raster)
        for target in sorted(cfg.times):
            remaining = target - state.t
            if remaining > 1e-12:
                n_steps = int(math.ceil(remaining / dt - 1e-9))
                state = suzuki_yoshida4(state, system, n_steps, remaining / n_steps)
            V = sample_field(F, sp, state.B, X, Y)
            path = os.path.join(cfg.out, f"wave_ns{ns}_t{target:.3f}.txt")
            write_raster(path, X, Y, V)
            row = {"N_s": ns, "N_theta": sp.n_theta, "time": target, "energy": system.energy(state),
                   "B_max": float(np.nanmax(np.abs(V))), "roughness": roughness(X, Y, V, F.x0),
                   "curl_defect": curl_defect, "seconds": time.perf_counter() - start}
            if target == 0.0:
                initial = l2_error_to_field(2, state.B, quad, b_exact)
                logger.info(f"N_s={ns}: initial B matches the pulse curl to {initial:.3e}")
            table.add(row)
            logger.info(f"Wrote snapshot {path}")
    return table.rows


def run_verify(cfg: RunConfig, table_factory: Callable[[List[str]], ResultsTable]) -> List[Dict[str, Any]]:
    table = table_factory(["suite", "status", "detail"])
    results = run_suites(cfg)
    write_report(results, os.path.join(cfg.out, "verify.txt"))
    for r in results:
        table.add({"suite": r.name, "status": r.status, "detail": r.detail})
    return [asdict(r) for r in results]


STUDIES = {
    "poisson": run_poisson_study,
    "maxwell-bessel": run_maxwell_bessel_study,
    "maxwell-wave": run_wave_demo,
    "verify": run_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = load_config(argv)
    except ValueError as e:
        logger.error(f"Invalid configuration: {e}")
        return 1
    logging.getLogger().setLevel(cfg.log_level)
    os.makedirs(cfg.out, exist_ok=True)

    db = ResultsDatabase(cfg.db_path or os.path.join(cfg.out, "polar_results.db"))
    run_id = db.start_run(cfg.problem, asdict(cfg))

    def table_factory(columns: List[str]) -> ResultsTable:
        return ResultsTable(os.path.join(cfg.out, CSV_NAME), columns, db, run_id)

    logger.info(f"Running {cfg.problem} study p={cfg.degree} N_s={cfg.grids} kind={cfg.kind}")
    try:
        rows = STUDIES[cfg.problem](cfg, table_factory)
    except PolarFEECError as e:
        logger.error(f"Run failed: {e}")
        if run_id is not None:
            db.finish_run(run_id, "error")
        return 1
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as e:
        logger.error(f"Run aborted by unexpected {type(e).__name__}: {e}")
        if run_id is not None:
            db.finish_run(run_id, "error")
        return 1

    failed = cfg.problem == "verify" and any(r["status"] == FAIL for r in rows)
    if run_id is not None:
        db.finish_run(run_id, "failed" if failed else "ok")
    logger.info(f"Finished {cfg.problem}: {len(rows)} rows in {cfg.out}")
    return 1 if failed else 0
