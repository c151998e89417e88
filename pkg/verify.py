"""Invariant suites run by ``--problem verify``.

Each suite returns a SuiteResult with status PASS, FAIL or SKIPPED. Suites
run at the configured sizes on the shifted-disk spline map; the
singularity suite checks the mapping file given with --map-file instead
when one is set.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from assembly import (QuadratureGrid, annulus_norm_squared, load_vector, mass_matrix, regularized_mass,
                      theoretical_log_slope)
from config import RunConfig
from conforming import (ConformingProjector, ConformityKind, is_conforming, p_block, pole_parameters,
                        pu0_apply, pu0_matrix, pu1_apply, pu1_matrix, pv0_apply, pv0_matrix, pv1_apply,
                        pv1_matrix, pv2_apply, pv2_matrix)
from derham import (FieldCoeffs, TensorDeRham, curl_matrix, eval_points, grad_matrix, periodic_difference,
                    radial_difference)
from errors import PolarFEECError
from geometry import (PolarMapping, SplinePolarMapping, build_shifted_disk_map, extrapolate_to_zero,
                      load_mapping, pushforward_eval, verify_first_order_singularity)
from projection import GeometricDofGrid, project_polar
from solvers import (SY_W0, SY_W1, MaxwellState, MaxwellSystem, PoissonProblem, maxwell_leapfrog_step,
                     poisson_manufactured_solution, solve_poisson)
from splines import TWO_PI, basis_matrix, regular_angles, segment_quadrature, trigonometric_identities_residual

logger = logging.getLogger(__name__)

PASS = "PASS"
FAIL = "FAIL"
SKIPPED = "SKIPPED"

ALGEBRA_TOL = 1e-13


@dataclass
class SuiteResult:
    name: str
    status: str
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.status == FAIL


class VerifyContext:
    """Spaces, mapping and random source shared by the suites."""

    def __init__(self, cfg: RunConfig, seed: int = 0):
        self.cfg = cfg
        self.p = cfg.degree
        self.n_cells = cfg.grids[0]
        self.n_theta = cfg.ntheta(self.n_cells)
        self.F: SplinePolarMapping = build_shifted_disk_map(self.p, self.n_cells, self.n_theta, cfg.pole_shift)
        self.sp: TensorDeRham = self.F.space
        self.rng = np.random.default_rng(seed)
        self.kinds = [ConformityKind.V] + ([ConformityKind.U] if self.p >= 2 else [])
        self.G = grad_matrix(self.sp)
        self.C = curl_matrix(self.sp)
        self._quad = None

    @property
    def quad(self) -> QuadratureGrid:
        if self._quad is None:
            self._quad = QuadratureGrid(self.sp, self.F, n_quad=2 * self.p + 2)
        return self._quad

    def random(self, level: int) -> np.ndarray:
        return self.rng.standard_normal(self.sp.dim(level))


SuiteFn = Callable[[VerifyContext], SuiteResult]
SUITES: List[Tuple[str, SuiteFn]] = []


def suite(name: str):
    def register(fn: SuiteFn) -> SuiteFn:
        SUITES.append((name, fn))
        return fn
    return register


def _check(name: str, errors: List[str], detail: str = "") -> SuiteResult:
    if errors:
        return SuiteResult(name, FAIL, "; ".join(errors))
    return SuiteResult(name, PASS, detail)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(1.0, np.linalg.norm(b)))


@suite("partition_of_unity")
def check_partition_of_unity(ctx: VerifyContext) -> SuiteResult:
    errors = []
    for kv in (ctx.sp.kv_s, ctx.sp.kv_theta):
        x = ctx.rng.uniform(0.0, kv.length, 200)
        residual = np.abs(np.asarray(basis_matrix(kv, x, "B").sum(axis=1)).ravel() - 1.0).max()
        if residual > ALGEBRA_TOL:
            errors.append(f"{'periodic' if kv.periodic else 'open'} B-spline sum off by {residual:.2e}")
    kv_t = ctx.sp.kv_theta
    theta = ctx.rng.uniform(0.0, TWO_PI, 200)
    m_sum = np.asarray(basis_matrix(kv_t, theta, "M").sum(axis=1)).ravel()
    residual = np.abs(m_sum * kv_t.spacing - 1.0).max()
    if residual > ALGEBRA_TOL:
        errors.append(f"periodic M-splines do not sum to 1/dtheta: {residual:.2e}")
    return _check("partition_of_unity", errors)


@suite("derivative_identity")
def check_derivative_identity(ctx: VerifyContext) -> SuiteResult:
    errors = []
    h = 1e-7
    for kv, diff in ((ctx.sp.kv_s, radial_difference), (ctx.sp.kv_theta, periodic_difference)):
        margin = 1e-3 * kv.length
        x = ctx.rng.uniform(margin, kv.length - margin, 100)
        db = basis_matrix(kv, x, "dB").toarray()
        structural = (basis_matrix(kv, x, "M") @ diff(kv.dim)).toarray()
        if np.abs(db - structural).max() > ALGEBRA_TOL * max(1.0, np.abs(db).max()):
            errors.append(f"dB differs from M-spline differences on the {'periodic' if kv.periodic else 'open'} space")
        fd = (basis_matrix(kv, x + h, "B") - basis_matrix(kv, x - h, "B")).toarray() / (2 * h)
        if np.abs(fd - db).max() > 1e-5 * max(1.0, np.abs(db).max()):
            errors.append(f"dB departs from central differences by {np.abs(fd - db).max():.2e}")
    return _check("derivative_identity", errors)


@suite("m_integrals")
def check_m_integrals(ctx: VerifyContext) -> SuiteResult:
    errors = []
    for kv in (ctx.sp.kv_s, ctx.sp.kv_theta):
        pts, wts = segment_quadrature(kv, 0.0, kv.length, kv.degree + 2)
        integrals = wts @ basis_matrix(kv, pts, "M").toarray()
        residual = np.abs(integrals - 1.0).max()
        if residual > 1e-12:
            errors.append(f"M-spline integrals off by {residual:.2e}")
    return _check("m_integrals", errors)


@suite("discrete_trigonometry")
def check_discrete_trigonometry(ctx: VerifyContext) -> SuiteResult:
    if not ctx.sp.assumption1_ok:
        return SuiteResult("discrete_trigonometry", SKIPPED, f"n_theta={ctx.n_theta} is not 4n' with n' >= p")
    residual = trigonometric_identities_residual(ctx.n_theta)
    errors = [] if residual <= 1e-12 * ctx.n_theta else [f"residual {residual:.2e}"]
    return _check("discrete_trigonometry", errors, f"residual {residual:.2e}")


@suite("complex_property")
def check_complex_property(ctx: VerifyContext) -> SuiteResult:
    errors = []
    for _ in range(10):
        x = ctx.random(0)
        if np.linalg.norm(ctx.C @ (ctx.G @ x)) > ALGEBRA_TOL * np.linalg.norm(x):
            errors.append("C G x != 0")
            break
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        P0, P1 = proj.matrix(0), proj.matrix(1)
        x = ctx.random(0)
        residual = np.linalg.norm(ctx.C @ (P1 @ (ctx.G @ (P0 @ x))))
        if residual > ALGEBRA_TOL * np.linalg.norm(x):
            errors.append(f"C P1 G P0 != 0 for kind {kind.value}: {residual:.2e}")
    return _check("complex_property", errors)


_MATRIX_FREE = {
    (ConformityKind.V, 0): (pv0_apply, pv0_matrix),
    (ConformityKind.V, 1): (pv1_apply, pv1_matrix),
    (ConformityKind.V, 2): (pv2_apply, pv2_matrix),
    (ConformityKind.U, 0): (pu0_apply, pu0_matrix),
    (ConformityKind.U, 1): (pu1_apply, pu1_matrix),
    (ConformityKind.U, 2): (pv2_apply, pv2_matrix),
}


@suite("idempotence")
def check_idempotence(ctx: VerifyContext) -> SuiteResult:
    errors = []
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        for level in (0, 1, 2):
            x = ctx.random(level)
            px = proj.apply(level, x)
            if _rel(proj.apply(level, px), px) > ALGEBRA_TOL:
                errors.append(f"P{level} kind {kind.value} not idempotent")
            if _rel(proj.matrix(level) @ x, px) > 1e-14:
                errors.append(f"P{level} kind {kind.value}: matrix and matrix-free forms disagree")
            apply_fn, matrix_fn = _MATRIX_FREE[(kind, level)]
            args = (ctx.F.variant,) if kind is ConformityKind.U and level < 2 else ()
            if _rel(matrix_fn(ctx.sp, *args) @ x, apply_fn(ctx.sp, x, *args)) > 1e-14:
                errors.append(f"standalone P{level} kind {kind.value} forms disagree")
    return _check("idempotence", errors)


@suite("characterization")
def check_characterization(ctx: VerifyContext) -> SuiteResult:
    errors = []
    n_samples = 200
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        for level in (0, 1, 2):
            for _ in range(n_samples):
                px = proj.apply(level, ctx.random(level))
                ok, _ = is_conforming(kind, level, px, ctx.sp, 1e-12, ctx.F.variant)
                if not ok:
                    errors.append(f"P{level} kind {kind.value} output outside the characterized set")
                    break
                if _rel(proj.apply(level, px), px) > ALGEBRA_TOL:
                    errors.append(f"characterized level-{level} vector is not a fixed point")
                    break
    if ConformityKind.U in ctx.kinds:
        errors.extend(_pole_value_errors(ctx))
    return _check("characterization", errors, f"{n_samples} samples per level and kind")


def _pole_value_errors(ctx: VerifyContext) -> List[str]:
    """Physical gradient (level 0) and vector (level 1) at the pole against the ring formulas."""
    proj = ConformingProjector(ctx.sp, ConformityKind.U, ctx.F.variant)
    eps = ctx.F.length * np.array([1e-5, 2e-5, 4e-5])
    theta = regular_angles(7) + 0.1
    phi = proj.apply(0, FieldCoeffs(0, ctx.random(0)))
    vec = proj.apply(1, FieldCoeffs(1, ctx.random(1)))
    params0 = pole_parameters(0, phi, ctx.sp)
    params1 = pole_parameters(1, vec, ctx.sp)
    checks = [
        ("pole gradient", FieldCoeffs(1, ctx.G @ phi.data), np.array([params0.gamma1, params0.gamma2])),
        ("pole vector", vec, np.array([params1.eta1, params1.eta2])),
    ]
    errors = []
    for label, field, ring_value in checks:
        samples = []
        for e in eps:
            s = np.full_like(theta, e)
            samples.append(pushforward_eval(1, ctx.F, eval_points(ctx.sp, field, s, theta), s, theta))
        limit = extrapolate_to_zero(eps, np.array(samples))
        expected = ring_value / ctx.F.rho1
        err = np.abs(limit - expected[:, None]).max() / max(1.0, np.abs(expected).max())
        if err > 1e-6:
            errors.append(f"{label} departs from ring formula by {err:.2e}")
    return errors


@suite("commutation")
def check_commutation(ctx: VerifyContext) -> SuiteResult:
    errors = []
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        P0, P1, P2 = proj.matrix(0), proj.matrix(1), proj.matrix(2)
        phi = ctx.random(0).reshape(ctx.sp.n_s, ctx.sp.n_theta)
        phi[0] = phi[0, 0]
        phi = phi.ravel()
        if _rel(P1 @ (ctx.G @ phi), ctx.G @ (P0 @ phi)) > ALGEBRA_TOL:
            errors.append(f"P1 G != G P0 for kind {kind.value}")
        v = ctx.random(1)
        v[ctx.sp.dim1_s:ctx.sp.dim1_s + ctx.sp.n_theta] = 0.0
        if _rel(P2 @ (ctx.C @ v), ctx.C @ (P1 @ v)) > ALGEBRA_TOL:
            errors.append(f"P2 C != C P1 for kind {kind.value}")
    return _check("commutation", errors)


@suite("p_block_projector")
def check_p_block(ctx: VerifyContext) -> SuiteResult:
    if not ctx.sp.assumption1_ok:
        return SuiteResult("p_block_projector", SKIPPED, f"n_theta={ctx.n_theta} is not 4n' with n' >= p")
    block = p_block(ctx.n_theta)
    residual = np.abs(block @ block - block).max()
    errors = [] if residual <= ALGEBRA_TOL else [f"p^2 - p = {residual:.2e}"]
    return _check("p_block_projector", errors)


@suite("singularity")
def check_singularity(ctx: VerifyContext) -> SuiteResult:
    F: PolarMapping = ctx.F
    source = "shifted disk"
    if ctx.cfg.map_file:
        source = ctx.cfg.map_file
        F = load_mapping(ctx.cfg.map_file, strict=False)
    profile = verify_first_order_singularity(F)
    if not profile.passed:
        return SuiteResult("singularity", FAIL, f"{source}: " + "; ".join(profile.messages))
    return SuiteResult("singularity", PASS, f"{source}: min D={profile.D.min():.4g} D_*={profile.D_star:.4g}")


def _poly_scalar(x, y):
    return x ** 2 + x * y - y


def _poly_gradient(x, y):
    return 2 * x + y, x - 1.0


def _poly_vector(x, y):
    return -y ** 2, x * y


def _poly_curl(x, y):
    return 3.0 * y


@suite("commuting_diagram")
def check_commuting_diagram(ctx: VerifyContext) -> SuiteResult:
    grid = GeometricDofGrid(ctx.sp, n_quad=2 * ctx.p + 2)
    errors = []
    phi = project_polar(grid, 0, ctx.F, _poly_scalar)
    grad = project_polar(grid, 1, ctx.F, _poly_gradient)
    vec = project_polar(grid, 1, ctx.F, _poly_vector)
    curl = project_polar(grid, 2, ctx.F, _poly_curl)
    worst = 0.0
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        lhs = proj.apply(1, grad).data
        rhs = ctx.G @ proj.apply(0, phi).data
        err_grad = np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)
        lhs = proj.apply(2, curl).data
        rhs = ctx.C @ proj.apply(1, vec).data
        err_curl = np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)
        worst = max(worst, err_grad, err_curl)
        if err_grad > 1e-9:
            errors.append(f"gradient diagram defect {err_grad:.2e} for kind {kind.value}")
        if err_curl > 1e-9:
            errors.append(f"curl diagram defect {err_curl:.2e} for kind {kind.value}")
    return _check("commuting_diagram", errors, f"max defect {worst:.2e}")


@suite("mass_preservation")
def check_mass_preservation(ctx: VerifyContext) -> SuiteResult:
    grid = GeometricDofGrid(ctx.sp, n_quad=2 * ctx.p + 2)
    proj = ConformingProjector(ctx.sp, ConformityKind.V, ctx.F.variant)
    errors = []
    worst = 0.0
    for _ in range(20):
        a = ctx.rng.uniform(-1.0, 1.0, 6)

        def f(x, y, a=a):
            return a[0] + a[1] * x + a[2] * y + a[3] * x ** 2 + a[4] * x * y + a[5] * y ** 2

        # M-splines integrate to one, so the integral of a 2-form is its coefficient sum
        projected = float(proj.apply(2, project_polar(grid, 2, ctx.F, f)).data.sum())
        exact = ctx.quad.integrate(f(ctx.quad.x, ctx.quad.y))
        err = abs(projected - exact)
        worst = max(worst, err)
        if err > 1e-10 * max(1.0, abs(exact)):
            errors.append(f"integral changed by {err:.2e}")
            break
    return _check("mass_preservation", errors, f"max change {worst:.2e}")


@suite("mass_matrices")
def check_mass_matrices(ctx: VerifyContext) -> SuiteResult:
    errors = []
    masses = {level: mass_matrix(level, ctx.sp, ctx.F, ctx.quad) for level in (0, 1, 2)}
    for level, M in masses.items():
        if M.asymmetry() > ALGEBRA_TOL * np.abs(M.matrix.data).max():
            errors.append(f"M{level} not symmetric")
    for kind in ctx.kinds:
        proj = ConformingProjector(ctx.sp, kind, ctx.F.variant)
        for level in (1, 2):
            reg = regularized_mass(masses[level], proj.matrix(level))
            low = np.linalg.eigvalsh(reg.toarray()).min()
            if low <= 0.0:
                errors.append(f"regularized M{level} kind {kind.value} not positive: {low:.2e}")
    return _check("mass_matrices", errors)


@suite("non_conformity_witness")
def check_non_conformity(ctx: VerifyContext) -> SuiteResult:
    h1 = ctx.sp.kv_s.breaks[1]
    eps = h1 * 10.0 ** -np.arange(1, 6)
    norms = np.array([annulus_norm_squared(ctx.F, ctx.sp, 0, e) for e in eps])
    slopes = np.diff(norms) / np.log(10.0)
    expected = theoretical_log_slope(ctx.F, ctx.sp, 0)
    errors = []
    if np.any(slopes <= 0):
        errors.append("annulus norm does not grow as eps decreases")
    if abs(slopes[-1] - expected) > 0.1 * expected:
        errors.append(f"log slope {slopes[-1]:.4g} vs expected {expected:.4g}")
    return _check("non_conformity_witness", errors, f"slope {slopes[-1]:.4g}, expected {expected:.4g}")


@suite("stabilization_independence")
def check_stabilization(ctx: VerifyContext) -> SuiteResult:
    _, source = poisson_manufactured_solution()
    kind = ConformityKind.parse(ctx.cfg.kind) if ctx.p >= 2 else ConformityKind.V
    proj = ConformingProjector(ctx.sp, kind, ctx.F.variant, dirichlet=True)
    P0 = proj.matrix(0)
    M0 = mass_matrix(0, ctx.sp, ctx.F, ctx.quad)
    M1 = mass_matrix(1, ctx.sp, ctx.F, ctx.quad)
    rhs = load_vector(0, ctx.quad, source)
    solutions = []
    for alpha in (0.1, 1.0, 10.0):
        pb = PoissonProblem(ctx.F, kind, alpha=alpha, source=source)
        phi, _ = solve_poisson(pb, ctx.sp, ctx.G, P0, M0, M1, rhs, tol=ctx.cfg.cg_tol,
                               maxiter=ctx.cfg.cg_maxiter)
        solutions.append(phi.data)
    spread = max(np.linalg.norm(s - solutions[1]) / np.linalg.norm(solutions[1]) for s in solutions)
    errors = [] if spread < 1e-8 else [f"solutions differ by {spread:.2e}"]
    return _check("stabilization_independence", errors, f"max difference {spread:.2e}")


@suite("leapfrog_structure")
def check_leapfrog(ctx: VerifyContext) -> SuiteResult:
    errors = []
    if abs(2 * SY_W1 + SY_W0 - 1.0) > 1e-15 or abs(2 * SY_W1 ** 3 + SY_W0 ** 3) > 1e-14:
        errors.append("Suzuki-Yoshida order conditions violated")
    system = MaxwellSystem(ctx.sp, ctx.F, ctx.kinds[-1], ctx.quad)
    dt = system.default_time_step()
    start = MaxwellState(E=FieldCoeffs(1, system.P1 @ ctx.random(1)),
                         B=FieldCoeffs(2, system.P2 @ ctx.random(2)), dt=dt)
    back = maxwell_leapfrog_step(maxwell_leapfrog_step(start, system, dt), system, -dt)
    defect = max(_rel(back.E.data, start.E.data), _rel(back.B.data, start.B.data))
    if defect > 1e-11:
        errors.append(f"step pair not reversible: {defect:.2e}")
    energy0 = system.modified_energy(start, dt)
    state = start
    for _ in range(50):
        state = maxwell_leapfrog_step(state, system, dt)
    drift = abs(system.modified_energy(state, dt) - energy0) / energy0
    if drift > 1e-10:
        errors.append(f"modified energy drift {drift:.2e}")
    logger.info(f"Leap-frog conformity defect after 50 steps: {system.conformity_defect(state):.3e}")
    return _check("leapfrog_structure", errors, f"reversibility {defect:.2e}, energy drift {drift:.2e}")


def run_suites(cfg: RunConfig, names: Optional[List[str]] = None) -> List[SuiteResult]:
    """Run the registered suites (or the named subset) and log each outcome."""
    ctx = VerifyContext(cfg)
    results = []
    for name, fn in SUITES:
        if names is not None and name not in names:
            continue
        try:
            result = fn(ctx)
        except (PolarFEECError, OSError, RuntimeError, ValueError, np.linalg.LinAlgError, ArithmeticError) as e:
            result = SuiteResult(name, FAIL, f"{type(e).__name__}: {e}")
        if result.status == FAIL:
            logger.error(f"Suite {name} FAILED: {result.detail}")
        else:
            logger.info(f"Suite {name} {result.status} {result.detail}".rstrip())
        results.append(result)
    return results


def write_report(results: List[SuiteResult], path: str) -> None:
    n_fail = sum(r.failed for r in results)
    with open(path, "w") as fh:
        for r in results:
            fh.write(f"{r.name:<28} {r.status:<8} {r.detail}".rstrip() + "\n")
        fh.write(f"# {len(results)} suites, {n_fail} failed\n")
    logger.info(f"Verify report written to {path}")
