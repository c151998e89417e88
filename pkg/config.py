import argparse
import logging
import os
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

PROBLEMS = ("poisson", "maxwell-bessel", "maxwell-wave", "verify")

DEFAULT_NS = {
    "poisson": [8, 16, 32, 64],
    "maxwell-bessel": [8, 16, 32],
    "maxwell-wave": [8, 16, 32],
    "verify": [4],
}


def _int_list(text: str) -> List[int]:
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _float_list(text: str) -> List[float]:
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _mode(text: str) -> Tuple[int, int]:
    values = _int_list(text)
    if len(values) != 2:
        raise ValueError(f"Mode must be given as n,m, got {text!r}")
    return values[0], values[1]


@dataclass
class RunConfig:
    problem: str = "verify"
    degree: int = 2
    ns: Optional[List[int]] = None
    ntheta_factor: int = 2
    pole_shift: float = 0.2
    kind: str = "c1"
    alpha: float = 1.0
    cg_tol: float = 1e-12
    cg_maxiter: int = 20000
    dt: Optional[float] = None
    threads: int = 1
    out: str = "results"
    times: List[float] = field(default_factory=lambda: [0.0, 2.5, 5.0, 7.5])
    final_time: float = 0.1
    mode: Tuple[int, int] = (3, 2)
    sigma: float = 0.1
    map_file: Optional[str] = None
    db_path: Optional[str] = None
    dt_halving: bool = False
    raster: int = 256
    timings: bool = False
    log_level: str = "INFO"

    @property
    def grids(self) -> List[int]:
        return list(self.ns) if self.ns else list(DEFAULT_NS[self.problem])

    def ntheta(self, ns: int) -> int:
        return self.ntheta_factor * ns

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ValueError(f"POLAR_PROBLEM must be one of {', '.join(PROBLEMS)}, got {self.problem!r}")
        if self.degree < 1:
            raise ValueError(f"POLAR_DEGREE must be positive, got {self.degree}")
        if any(n < 1 for n in self.grids):
            raise ValueError(f"POLAR_NS entries must be positive, got {self.grids}")
        if self.ntheta_factor < 1:
            raise ValueError(f"POLAR_NTHETA_FACTOR must be positive, got {self.ntheta_factor}")
        if self.kind.lower() not in ("c0", "c1"):
            raise ValueError(f"POLAR_KIND must be c0 or c1, got {self.kind!r}")
        if self.kind.lower() == "c1" and self.degree < 2:
            raise ValueError("POLAR_KIND=c1 requires POLAR_DEGREE >= 2")
        if not abs(self.pole_shift) < 0.5:
            raise ValueError(f"POLAR_POLE_SHIFT must satisfy |D| < 1/2, got {self.pole_shift}")
        if self.alpha <= 0:
            raise ValueError(f"POLAR_ALPHA must be positive, got {self.alpha}")
        if self.cg_tol <= 0:
            raise ValueError(f"POLAR_CG_TOL must be positive, got {self.cg_tol}")
        if self.cg_maxiter < 1:
            raise ValueError(f"POLAR_CG_MAXITER must be positive, got {self.cg_maxiter}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError(f"POLAR_DT must be positive, got {self.dt}")
        if self.threads < 1:
            raise ValueError(f"POLAR_THREADS must be positive, got {self.threads}")
        if self.final_time <= 0:
            raise ValueError(f"Final time must be positive, got {self.final_time}")
        if self.sigma <= 0:
            raise ValueError(f"Pulse width must be positive, got {self.sigma}")
        if self.mode[0] < 0 or self.mode[1] < 1:
            raise ValueError(f"Bessel mode needs n >= 0 and m >= 1, got {self.mode}")
        if any(t < 0 for t in self.times):
            raise ValueError(f"Snapshot times must be non-negative, got {self.times}")
        if self.raster < 2:
            raise ValueError(f"Raster size must be at least 2, got {self.raster}")
        return self


def config_from_env() -> RunConfig:
    """Defaults from the environment (and a .env file if present)."""
    load_dotenv()
    cfg = RunConfig()
    try:
        cfg.problem = os.getenv('POLAR_PROBLEM', cfg.problem)
        cfg.degree = int(os.getenv('POLAR_DEGREE', cfg.degree))
        ns_env = os.getenv('POLAR_NS', '')
        cfg.ns = _int_list(ns_env) if ns_env else None
        cfg.ntheta_factor = int(os.getenv('POLAR_NTHETA_FACTOR', cfg.ntheta_factor))
        cfg.pole_shift = float(os.getenv('POLAR_POLE_SHIFT', cfg.pole_shift))
        cfg.kind = os.getenv('POLAR_KIND', cfg.kind)
        cfg.alpha = float(os.getenv('POLAR_ALPHA', cfg.alpha))
        cfg.cg_tol = float(os.getenv('POLAR_CG_TOL', cfg.cg_tol))
        cfg.cg_maxiter = int(os.getenv('POLAR_CG_MAXITER', cfg.cg_maxiter))
        dt_env = os.getenv('POLAR_DT', '')
        cfg.dt = float(dt_env) if dt_env else None
        cfg.threads = int(os.getenv('POLAR_THREADS', cfg.threads))
    except ValueError as e:
        raise ValueError(f"Invalid POLAR_* environment value: {e}") from e
    cfg.out = os.getenv('POLAR_OUT', cfg.out)
    cfg.log_level = os.getenv('POLAR_LOG_LEVEL', cfg.log_level).upper()
    cfg.db_path = os.getenv('DB_PATH') or None
    return cfg


def build_parser(defaults: RunConfig) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Polar broken-FEEC spline studies: Poisson and Maxwell convergence, wave demo, invariant checks.")
    parser.add_argument("--problem", choices=PROBLEMS, default=defaults.problem)
    parser.add_argument("--degree", type=int, default=defaults.degree, help="spline degree p")
    parser.add_argument("--ns", type=_int_list, default=defaults.ns,
                        help="comma-separated radial cell counts N_s")
    parser.add_argument("--ntheta-factor", type=int, default=defaults.ntheta_factor,
                        help="N_theta = factor * N_s")
    parser.add_argument("--pole-shift", type=float, default=defaults.pole_shift, help="pole offset D")
    parser.add_argument("--kind", choices=("c0", "c1"), type=str.lower, default=defaults.kind)
    parser.add_argument("--alpha", type=float, default=defaults.alpha, help="Poisson stabilization")
    parser.add_argument("--cg-tol", type=float, default=defaults.cg_tol)
    parser.add_argument("--cg-maxiter", type=int, default=defaults.cg_maxiter)
    parser.add_argument("--dt", type=float, default=defaults.dt, help="time step (default: automatic)")
    parser.add_argument("--threads", type=int, default=defaults.threads)
    parser.add_argument("--out", default=defaults.out, help="output directory")
    parser.add_argument("--times", type=_float_list, default=defaults.times,
                        help="wave demo snapshot times")
    parser.add_argument("--final-time", type=float, default=defaults.final_time)
    parser.add_argument("--mode", type=_mode, default=defaults.mode, help="Bessel mode n,m")
    parser.add_argument("--sigma", type=float, default=defaults.sigma, help="Gaussian pulse width")
    parser.add_argument("--map-file", default=defaults.map_file, help="mapping checked by verify")
    parser.add_argument("--db", dest="db_path", default=defaults.db_path, help="results database path")
    parser.add_argument("--dt-halving", action="store_true", default=defaults.dt_halving,
                        help="rerun the Bessel study with dt/2")
    parser.add_argument("--raster", type=int, default=defaults.raster, help="snapshot raster size")
    parser.add_argument("--timings", action="store_true", default=defaults.timings,
                        help="add wall-clock seconds to results.csv")
    parser.add_argument("--log-level", default=defaults.log_level, type=str.upper)
    return parser


def load_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Environment defaults overridden by command-line flags, validated."""
    defaults = config_from_env()
    args = build_parser(defaults).parse_args(argv)
    cfg = RunConfig(**{f.name: getattr(args, f.name) for f in fields(RunConfig)})
    logger.debug(f"Loaded configuration: {cfg}")
    return cfg.validate()
