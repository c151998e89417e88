"""Reference solvers: broken-FEEC Poisson and time-dependent Maxwell.

Poisson:  ((G P0)^T M1 (G P0) + alpha (I - P0)^T M0 (I - P0)) phi = P0^T f
Maxwell:  leap-frog on (E, B) with regularized mass matrices, composed into
          the fourth-order Suzuki-Yoshida triple jump.
"""
import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import newton
from scipy.sparse.linalg import LinearOperator, cg, eigsh, splu
from scipy.special import jnp_zeros, jv, jvp

from assembly import QuadratureGrid, load_vector, mass_matrix, min_edge_length, regularized_mass
from conforming import ConformingProjector, ConformityKind
from derham import FieldCoeffs, TensorDeRham, curl_matrix
from errors import InvalidInputError, IterativeSolverError
from geometry import PolarMapping
from operators import SparseOperator
from projection import GeometricDofGrid, project_polar

logger = logging.getLogger(__name__)

SY_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
SY_W0 = 1.0 - 2.0 * SY_W1


def poisson_manufactured_solution() -> Tuple[Callable, Callable]:
    """phi = sin(7 pi (1 - r^2) / 2) and f = -Laplace(phi)."""
    def phi(x, y):
        return np.sin(3.5 * np.pi * (1.0 - x ** 2 - y ** 2))

    def source(x, y):
        r2 = x ** 2 + y ** 2
        u = 3.5 * np.pi * (1.0 - r2)
        return 14.0 * np.pi * np.cos(u) + 49.0 * np.pi ** 2 * r2 * np.sin(u)

    return phi, source


@dataclass
class PoissonProblem:
    F: PolarMapping
    kind: ConformityKind
    alpha: float = 1.0
    source: Optional[Callable] = None
    exact: Optional[Callable] = None

    def __post_init__(self):
        self.kind = ConformityKind.parse(self.kind)
        if self.alpha <= 0:
            raise InvalidInputError(f"Stabilization alpha must be positive, got {self.alpha}")


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    seconds: float


def poisson_matrix(G: SparseOperator, P0: SparseOperator, M0: SparseOperator, M1: SparseOperator,
                   alpha: float) -> SparseOperator:
    gp = G @ P0
    complement = SparseOperator.identity(P0.shape[0]) - P0
    return gp.T @ M1 @ gp + alpha * (complement.T @ M0 @ complement)


def _jacobi(A: SparseOperator) -> LinearOperator:
    inv_diag = 1.0 / A.diagonal()
    return LinearOperator(A.shape, matvec=lambda v: inv_diag * np.ravel(v))


def solve_poisson(pb: PoissonProblem, sp: TensorDeRham, G: SparseOperator, P0: SparseOperator,
                  M0: SparseOperator, M1: SparseOperator, rhs: np.ndarray, tol: float = 1e-12,
                  maxiter: int = 20000, preconditioner: Optional[str] = None) -> Tuple[FieldCoeffs, SolveInfo]:
    """CG solve of the stabilized broken-FEEC Poisson system; rhs holds the moments of f."""
    start = time.perf_counter()
    A = poisson_matrix(G, P0, M0, M1, pb.alpha)
    b = P0.T @ np.asarray(rhs, dtype=float)
    counter = {"n": 0}

    def count(_):
        counter["n"] += 1

    M = _jacobi(A) if preconditioner == "jacobi" else None
    phi, info = cg(A.matrix, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    b_norm = np.linalg.norm(b)
    residual = float(np.linalg.norm(b - A @ phi) / b_norm) if b_norm > 0 else 0.0
    if info != 0:
        raise IterativeSolverError(f"CG did not converge in {counter['n']} iterations, residual {residual:.3e}",
                                   residual=residual, iterations=counter["n"])
    seconds = time.perf_counter() - start
    defect = np.linalg.norm(phi - P0 @ phi) / max(np.linalg.norm(phi), 1e-300)
    logger.info(f"Poisson CG converged: dim={sp.dim0} iterations={counter['n']} "
                f"residual={residual:.2e} conformity defect={defect:.2e}")
    return FieldCoeffs(0, phi), SolveInfo(counter["n"], residual, seconds)


@dataclass(frozen=True)
class MaxwellState:
    E: FieldCoeffs
    B: FieldCoeffs
    t: float = 0.0
    dt: float = 0.0


class MaxwellSystem:
    """Operators of the semi-discrete Maxwell system with perfectly conducting boundary.

    ``current`` is an optional physical source J(t, x, y) -> (jx, jy).
    """

    def __init__(self, sp: TensorDeRham, F: PolarMapping, kind, quad: Optional[QuadratureGrid] = None,
                 threads: int = 1, current: Optional[Callable] = None, dirichlet: bool = True):
        self.sp = sp
        self.F = F
        self.quad = quad or QuadratureGrid(sp, F)
        self.projector = ConformingProjector(sp, kind, F.variant, dirichlet=dirichlet)
        self.P1 = self.projector.matrix(1)
        self.P2 = self.projector.matrix(2)
        self.CP1 = curl_matrix(sp) @ self.P1
        self.M1 = regularized_mass(mass_matrix(1, sp, F, self.quad, threads), self.P1)
        self.M2 = regularized_mass(mass_matrix(2, sp, F, self.quad, threads), self.P2)
        self._lu = splu(self.M1.matrix.tocsc())
        self.current = current

    def solve_m1(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def current_moments(self, t0: float, t1: float) -> Optional[np.ndarray]:
        """Moments of J averaged over [t0, t1] by two-point Gauss in time."""
        if self.current is None:
            return None
        mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0) / np.sqrt(3.0)
        total = np.zeros(self.sp.dim1)
        for tq in (mid - half, mid + half):
            total += load_vector(1, self.quad, lambda x, y: self.current(tq, x, y))
        return 0.5 * total

    def energy(self, state: MaxwellState) -> float:
        e, b = state.E.data, state.B.data
        return 0.5 * float(e @ (self.M1 @ e) + b @ (self.M2 @ b))

    def modified_energy(self, state: MaxwellState, dt: float) -> float:
        """Quantity conserved exactly by the leap-frog step of size dt without sources."""
        e, b = state.E.data, state.B.data
        ce = self.CP1 @ e
        return 0.5 * float(e @ (self.M1 @ e) + (b - 0.5 * dt * ce) @ (self.M2 @ (b + 0.5 * dt * ce)))

    def conformity_defect(self, state: MaxwellState) -> float:
        e = state.E.data
        norm = np.linalg.norm(e)
        return float(np.linalg.norm(e - self.P1 @ e) / norm) if norm > 0 else 0.0

    def stable_time_step(self, safety: float = 0.9) -> float:
        """Largest stable step of the triple jump, from the top generalized eigenvalue."""
        K = self.CP1.T @ self.M2 @ self.CP1
        m_inv = LinearOperator(self.M1.shape, matvec=self.solve_m1)
        lam = eigsh(K.matrix, k=1, M=self.M1.matrix, Minv=m_inv, which="LM",
                    return_eigenvectors=False, tol=1e-6)[0]
        return safety * 2.0 / (abs(SY_W0) * np.sqrt(lam))

    def default_time_step(self) -> float:
        dt = min(0.5 * min_edge_length(self.F, self.sp), self.stable_time_step())
        logger.info(f"Selected time step dt={dt:.4e}")
        return dt


def maxwell_leapfrog_step(state: MaxwellState, system: MaxwellSystem, dt: Optional[float] = None,
                          j_source: Optional[np.ndarray] = None) -> MaxwellState:
    """Half step in B, full step in E, half step in B; j_source holds current moments."""
    dt = state.dt if dt is None else dt
    e, b = state.E.data, state.B.data
    b_half = b - 0.5 * dt * (system.CP1 @ e)
    rhs = system.CP1.T @ (system.M2 @ b_half)
    if j_source is not None:
        rhs = rhs - system.P1.T @ j_source
    e_new = e + dt * system.solve_m1(rhs)
    b_new = b_half - 0.5 * dt * (system.CP1 @ e_new)
    return replace(state, E=FieldCoeffs(1, e_new), B=FieldCoeffs(2, b_new), t=state.t + dt)


def suzuki_yoshida4(state: MaxwellState, system: MaxwellSystem, n_steps: int,
                    dt: Optional[float] = None) -> MaxwellState:
    dt = state.dt if dt is None else dt
    if dt == 0:
        raise InvalidInputError("Time step must be nonzero")
    state = replace(state, dt=dt)
    for _ in range(n_steps):
        for w in (SY_W1, SY_W0, SY_W1):
            sub = w * dt
            moments = system.current_moments(state.t, state.t + sub)
            state = maxwell_leapfrog_step(state, system, sub, moments)
        state = replace(state, dt=dt)
    return state


@dataclass(frozen=True)
class BesselMode:
    n: int
    m: int
    k: float

    @property
    def omega(self) -> float:
        return self.k

    @classmethod
    def from_indices(cls, n: int, m: int) -> "BesselMode":
        return cls(n=n, m=m, k=bessel_derivative_root(n, m))


def bessel_derivative_root(n: int, m: int, tol: float = 1e-12) -> float:
    """m-th positive root of J_n'."""
    if n < 0 or m < 1:
        raise InvalidInputError(f"Need n >= 0 and m >= 1, got n={n}, m={m}")
    guess = float(jnp_zeros(n, m)[-1])
    root = float(newton(lambda x: jvp(n, x), guess, fprime=lambda x: jvp(n, x, 2), tol=1e-15, maxiter=50))
    if abs(jvp(n, root)) > tol:
        raise IterativeSolverError(f"Bessel root j'_{n},{m} did not converge: J_n'={jvp(n, root):.3e}")
    return root


def bessel_exact(mode: BesselMode, t: float, x, y) -> Tuple[np.ndarray, np.ndarray]:
    """Real part of the Bessel-Fourier mode on the unit disk centred at the origin: (E, B)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k, w = mode.n, mode.k, mode.omega
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    kr = k * r
    # n J_n(z) / z = (J_{n-1}(z) + J_{n+1}(z)) / 2, regular at z = 0
    jn_over = 0.5 * (jv(n - 1, kr) + jv(n + 1, kr))
    djn = jvp(n, kr)
    sn, cn = np.sin(n * phi), np.cos(n * phi)
    amp = -np.sin(w * t)
    ex = amp * (jn_over * sn * np.cos(phi) - djn * cn * np.sin(phi))
    ey = amp * (jn_over * sn * np.sin(phi) + djn * cn * np.cos(phi))
    b = np.cos(w * t) * jv(n, kr) * cn
    return np.array([ex, ey]), b


def gaussian_pulse_fields(sigma: float = 0.1) -> Tuple[Callable, Callable]:
    """E0 = (y, -x) exp(-|x|^2 / 2 sigma^2) and its curl B0."""
    if sigma <= 0:
        raise InvalidInputError(f"Pulse width must be positive, got {sigma}")

    def e0(x, y):
        g = np.exp(-(x ** 2 + y ** 2) / (2 * sigma ** 2))
        return y * g, -x * g

    def b0(x, y):
        r2 = x ** 2 + y ** 2
        return np.exp(-r2 / (2 * sigma ** 2)) * (r2 / sigma ** 2 - 2.0)

    return e0, b0


def gaussian_pulse_initial(sigma: float, grid: GeometricDofGrid, F: PolarMapping,
                           projector: ConformingProjector) -> Tuple[FieldCoeffs, FieldCoeffs]:
    e0, b0 = gaussian_pulse_fields(sigma)
    E = projector.apply(1, project_polar(grid, 1, F, e0))
    B = projector.apply(2, project_polar(grid, 2, F, b0))
    return E, B
