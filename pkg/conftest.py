import numpy as np
import pytest

from derham import build_derham
from geometry import AnalyticalPolarMapping, build_shifted_disk_map

ENV_KEYS = (
    "POLAR_PROBLEM", "POLAR_DEGREE", "POLAR_NS", "POLAR_NTHETA_FACTOR", "POLAR_POLE_SHIFT", "POLAR_KIND",
    "POLAR_ALPHA", "POLAR_CG_TOL", "POLAR_CG_MAXITER", "POLAR_DT", "POLAR_THREADS", "POLAR_OUT",
    "POLAR_LOG_LEVEL", "DB_PATH",
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def disk_map():
    """Shifted-disk spline map, p=2, N_s=4, N_theta=8."""
    return build_shifted_disk_map(2, 4, 8, pole_shift=0.2)


@pytest.fixture(scope="session")
def disk_map_p3():
    return build_shifted_disk_map(3, 4, 12, pole_shift=0.2)


@pytest.fixture(scope="session")
def space(disk_map):
    return disk_map.space


@pytest.fixture(scope="session")
def unit_disk():
    return AnalyticalPolarMapping()


@pytest.fixture(scope="session")
def small_space():
    """p=2, N_s=3, N_theta=8: n_s=5 radial B-splines."""
    return build_derham(2, 3, 8)
