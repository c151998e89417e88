"""Polar mappings F: [0, L] x [0, 2 pi) -> Omega with F(0, theta) = x0.

Two variants are provided: the analytical polar map x0 + s (cos, sin) and
spline maps x0 + sum_ij P_ij B_i(s) B_j(theta) whose first two control
rings have the polar form P_0j = 0, P_1j = rho1 (cos theta_j, sin theta_j).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from derham import TensorDeRham, build_derham
from errors import GeometryError, InvalidInputError, PoleSingularityError
from operators import KroneckerSolver
from splines import (TWO_PI, basis_matrix, eval_M, greville_points, interpolation_matrix,
                     regular_angles)

logger = logging.getLogger(__name__)


def _flatten(s, theta):
    s_b, t_b = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(theta, dtype=float))
    return s_b.shape, s_b.ravel(), t_b.ravel()


class PolarMapping:
    variant = "abstract"

    def __init__(self, x0: Sequence[float], length: float):
        self.x0 = np.asarray(x0, dtype=float).reshape(2)
        self.length = float(length)

    # Subclasses implement the flat-array kernels below.
    def _evaluate(self, s: np.ndarray, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _jacobian(self, s: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, s, theta) -> Tuple[np.ndarray, np.ndarray]:
        shape, s_f, t_f = _flatten(s, theta)
        x, y = self._evaluate(s_f, t_f)
        return x.reshape(shape), y.reshape(shape)

    def jacobian(self, s, theta) -> Tuple[np.ndarray, np.ndarray]:
        """J with J[..., a, b] = d x_a / d (s, theta)_b, and det J."""
        shape, s_f, t_f = _flatten(s, theta)
        jac = self._jacobian(s_f, t_f)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        return jac.reshape(shape + (2, 2)), det.reshape(shape)

    def evaluate_grid(self, s_pts, theta_pts) -> Tuple[np.ndarray, np.ndarray]:
        s_g, t_g = np.meshgrid(np.asarray(s_pts, float), np.asarray(theta_pts, float), indexing="ij")
        return self.evaluate(s_g, t_g)

    def jacobian_grid(self, s_pts, theta_pts) -> Tuple[np.ndarray, np.ndarray]:
        s_g, t_g = np.meshgrid(np.asarray(s_pts, float), np.asarray(theta_pts, float), indexing="ij")
        return self.jacobian(s_g, t_g)

    def inverse(self, x, y, max_iter: int = 60, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
        """Logical coordinates of physical points, NaN where the point lies outside the image."""
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        s_seed = np.linspace(0.0, self.length, 65)
        t_seed = np.linspace(0.0, TWO_PI, 129)[:-1]
        xs, ys = self.evaluate_grid(s_seed, t_seed)
        tree = cKDTree(np.column_stack([xs.ravel(), ys.ravel()]))
        _, nearest = tree.query(np.column_stack([x, y]))
        s = np.maximum(s_seed[nearest // len(t_seed)], 1e-6 * self.length)
        t = t_seed[nearest % len(t_seed)]
        floor = 1e-10 * self.length
        for _ in range(max_iter):
            fx, fy = self._evaluate(s, t)
            rx, ry = fx - x, fy - y
            if np.max(np.hypot(rx, ry)) < tol:
                break
            jac = self._jacobian(s, t)
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            det = np.where(np.abs(det) < 1e-300, 1e-300, det)
            ds = (jac[:, 1, 1] * rx - jac[:, 0, 1] * ry) / det
            dt = (-jac[:, 1, 0] * rx + jac[:, 0, 0] * ry) / det
            s = s - ds
            t = t - dt
            flipped = s < 0
            t[flipped] += np.pi
            s = np.clip(np.abs(s), floor, self.length)
            t = np.mod(t, TWO_PI)
        fx, fy = self._evaluate(s, t)
        scale = max(1.0, float(np.abs(self.x0).max()))
        outside = np.hypot(fx - x, fy - y) > 1e-8 * scale
        s[outside] = np.nan
        t[outside] = np.nan
        return s, t


class AnalyticalPolarMapping(PolarMapping):
    variant = "analytical"

    def __init__(self, x0: Sequence[float] = (0.0, 0.0), length: float = 1.0):
        super().__init__(x0, length)

    def _evaluate(self, s, theta):
        return self.x0[0] + s * np.cos(theta), self.x0[1] + s * np.sin(theta)

    def _jacobian(self, s, theta):
        c, sn = np.cos(theta), np.sin(theta)
        jac = np.empty((len(s), 2, 2))
        jac[:, 0, 0] = c
        jac[:, 0, 1] = -s * sn
        jac[:, 1, 0] = sn
        jac[:, 1, 1] = s * c
        return jac

    def inverse(self, x, y, max_iter: int = 0, tol: float = 0.0):
        dx = np.asarray(x, dtype=float).ravel() - self.x0[0]
        dy = np.asarray(y, dtype=float).ravel() - self.x0[1]
        s = np.hypot(dx, dy)
        t = np.mod(np.arctan2(dy, dx), TWO_PI)
        outside = s > self.length * (1 + 1e-14)
        s[outside] = np.nan
        t[outside] = np.nan
        return s, t


def _row_contract(u, coeffs: np.ndarray, v) -> np.ndarray:
    return np.asarray(v.multiply(u @ coeffs).sum(axis=1)).ravel()


class SplinePolarMapping(PolarMapping):
    """Spline mapping on the level-0 space of ``space``; control points are offsets from x0."""
    variant = "spline"

    def __init__(self, space: TensorDeRham, control_points: np.ndarray,
                 x0: Sequence[float] = (0.0, 0.0), strict: bool = True):
        super().__init__(x0, space.length)
        pts = np.asarray(control_points, dtype=float)
        if pts.shape != (space.n_s, space.n_theta, 2):
            raise GeometryError(f"Control points must have shape {(space.n_s, space.n_theta, 2)}, got {pts.shape}")
        self.space = space
        self.control_points = pts
        self.rho1 = float(np.mean(np.hypot(pts[1, :, 0], pts[1, :, 1])))
        self.ring_deviation = self._ring_deviation()
        if strict and self.ring_deviation > 1e-12 * max(1.0, self.rho1):
            raise GeometryError(f"Control rings 0 and 1 are not in polar form (deviation {self.ring_deviation:.3e})")
        if self.rho1 <= 0.0:
            raise GeometryError("First control ring collapses onto the pole")

    def _ring_deviation(self) -> float:
        pts = self.control_points
        th = regular_angles(self.space.n_theta)
        ring1 = self.rho1 * np.column_stack([np.cos(th), np.sin(th)])
        return float(max(np.abs(pts[0]).max(), np.abs(pts[1] - ring1).max()))

    def _evaluate(self, s, theta):
        b_s = basis_matrix(self.space.kv_s, s, "B")
        b_t = basis_matrix(self.space.kv_theta, theta, "B")
        x = _row_contract(b_s, self.control_points[:, :, 0], b_t)
        y = _row_contract(b_s, self.control_points[:, :, 1], b_t)
        return self.x0[0] + x, self.x0[1] + y

    def _jacobian(self, s, theta):
        b_s = basis_matrix(self.space.kv_s, s, "B")
        b_t = basis_matrix(self.space.kv_theta, theta, "B")
        db_s = basis_matrix(self.space.kv_s, s, "dB")
        db_t = basis_matrix(self.space.kv_theta, theta, "dB")
        jac = np.empty((len(s), 2, 2))
        for a in range(2):
            c = self.control_points[:, :, a]
            jac[:, a, 0] = _row_contract(db_s, c, b_t)
            jac[:, a, 1] = _row_contract(b_s, c, db_t)
        return jac

    def evaluate_grid(self, s_pts, theta_pts):
        b_s = basis_matrix(self.space.kv_s, s_pts, "B")
        b_t = basis_matrix(self.space.kv_theta, theta_pts, "B")
        out = [np.asarray(b_t @ (b_s @ self.control_points[:, :, a]).T).T + self.x0[a] for a in range(2)]
        return out[0], out[1]

    def jacobian_grid(self, s_pts, theta_pts):
        b_s = basis_matrix(self.space.kv_s, s_pts, "B")
        b_t = basis_matrix(self.space.kv_theta, theta_pts, "B")
        db_s = basis_matrix(self.space.kv_s, s_pts, "dB")
        db_t = basis_matrix(self.space.kv_theta, theta_pts, "dB")
        jac = np.empty((b_s.shape[0], b_t.shape[0], 2, 2))
        for a in range(2):
            c = self.control_points[:, :, a]
            jac[:, :, a, 0] = np.asarray(b_t @ (db_s @ c).T).T
            jac[:, :, a, 1] = np.asarray(db_t @ (b_s @ c).T).T
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        return jac, det

    def pole_profile(self, theta) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Closed-form C, S and their theta-derivatives from the first control ring."""
        kv_t = self.space.kv_theta
        mu = self.rho1 * eval_M(self.space.kv_s, 0.0).values[0]
        th = regular_angles(self.space.n_theta)
        b_t = basis_matrix(kv_t, theta, "B")
        db_t = basis_matrix(kv_t, theta, "dB")
        return (mu * (b_t @ np.cos(th)), mu * (b_t @ np.sin(th)),
                mu * (db_t @ np.cos(th)), mu * (db_t @ np.sin(th)))


def eval_map(F: PolarMapping, s: float, theta: float) -> np.ndarray:
    x, y = F.evaluate(s, theta)
    return np.array([float(x), float(y)])


def jacobian(F: PolarMapping, s: float, theta: float) -> Tuple[np.ndarray, float]:
    jac, det = F.jacobian(s, theta)
    return jac, float(det)


@dataclass
class SingularityProfile:
    theta: np.ndarray
    C: np.ndarray
    S: np.ndarray
    dC: np.ndarray
    dS: np.ndarray
    D: np.ndarray
    D_star: float
    limit_consistency: float
    closed_form_error: Optional[float] = None
    messages: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.messages


def extrapolate_to_zero(s_vals: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Polynomial extrapolation to s = 0 through samples[k] taken at s_vals[k]."""
    out = np.zeros_like(samples[0])
    for k, s_k in enumerate(s_vals):
        others = np.delete(s_vals, k)
        out = out + samples[k] * np.prod(-others / (s_k - others))
    return out


def pole_limits(F: PolarMapping, s_vals: np.ndarray, theta: np.ndarray):
    """Limits as s -> 0 of the first Jacobian column and of the second column divided by s."""
    col1, col2 = [], []
    for s in s_vals:
        jac, _ = F.jacobian(np.full_like(theta, s), theta)
        col1.append(jac[:, :, 0])
        col2.append(jac[:, :, 1] / s)
    return extrapolate_to_zero(s_vals, np.array(col1)), extrapolate_to_zero(s_vals, np.array(col2))


def verify_first_order_singularity(F: PolarMapping, n_theta_samples: int = 64,
                                   s_samples: Sequence[float] = (1e-3, 2e-3, 4e-3),
                                   n_check: int = 32, tol: float = 1e-6) -> SingularityProfile:
    """Extract C, S, D = C S' - S C' from the Jacobian near the pole and check positivity.

    The empirical lower bound D_* = min det J / s over a verification grid is
    reported; a non-positive value or D <= 0 anywhere marks the mapping invalid.
    """
    theta = TWO_PI * np.arange(n_theta_samples) / n_theta_samples
    s_vals = F.length * np.asarray(s_samples, dtype=float)
    lim1, lim2 = pole_limits(F, s_vals, theta)
    alt1, alt2 = pole_limits(F, np.concatenate([[0.5 * s_vals[0]], s_vals[:-1]]), theta)
    consistency = float(max(np.abs(lim1 - alt1).max(), np.abs(lim2 - alt2).max()))
    C, S = lim1[:, 0], lim1[:, 1]
    dC, dS = lim2[:, 0], lim2[:, 1]
    D = C * dS - S * dC

    s_check = F.length * np.arange(1, n_check + 1) / n_check
    _, det = F.jacobian_grid(s_check, theta)
    d_star = float(min((det / s_check[:, None]).min(), D.min()))

    messages = []
    scale = max(1.0, float(np.abs(lim1).max()), float(np.abs(lim2).max()))
    if consistency > tol * scale:
        messages.append(f"pole limits inconsistent: {consistency:.3e}")
    if D.min() <= 0.0:
        messages.append(f"D(theta) not positive: min {D.min():.3e}")
    if d_star <= 0.0:
        messages.append(f"det J / s not bounded below by a positive constant: min {d_star:.3e}")

    closed_form_error = None
    if isinstance(F, SplinePolarMapping):
        cf = F.pole_profile(theta)
        closed_form_error = float(max(np.abs(a - b).max() for a, b in zip(cf, (C, S, dC, dS))))
        if closed_form_error > tol * scale:
            messages.append(f"pole profile departs from closed form: {closed_form_error:.3e}")
    profile = SingularityProfile(theta=theta, C=C, S=S, dC=dC, dS=dS, D=D, D_star=d_star,
                                 limit_consistency=consistency, closed_form_error=closed_form_error,
                                 messages=messages)
    if profile.passed:
        logger.info(f"Pole singularity verified: min D={D.min():.4g}, D_*={d_star:.4g}")
    else:
        logger.warning(f"Pole singularity check failed: {'; '.join(messages)}")
    return profile


def pushforward_eval(level: int, F: PolarMapping, value, s, theta):
    """Physical value at F(s, theta) of a logical level-form value (level 1 value has shape (2, ...))."""
    if level == 0:
        return np.asarray(value, dtype=float)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr == 0.0):
        raise PoleSingularityError(f"Level-{level} pushforward is singular at s = 0")
    jac, det = F.jacobian(s, theta)
    if level == 2:
        return np.asarray(value, dtype=float) / det
    if level == 1:
        vs, vt = value[0], value[1]
        return np.array([(jac[..., 1, 1] * vs - jac[..., 1, 0] * vt) / det,
                         (-jac[..., 0, 1] * vs + jac[..., 0, 0] * vt) / det])
    raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")


def pullback_eval(level: int, F: PolarMapping, physical_field: Callable, s, theta):
    """Logical value at (s, theta) of the pulled-back physical field."""
    x, y = F.evaluate(s, theta)
    if level == 0:
        return np.asarray(physical_field(x, y), dtype=float) * np.ones_like(x)
    jac, det = F.jacobian(s, theta)
    if level == 2:
        return det * np.asarray(physical_field(x, y), dtype=float)
    if level == 1:
        vx, vy = physical_field(x, y)
        return np.array([jac[..., 0, 0] * vx + jac[..., 1, 0] * vy,
                         jac[..., 0, 1] * vx + jac[..., 1, 1] * vy])
    raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")


def build_shifted_disk_map(p: int, n_cells_s: int, n_theta: int, pole_shift: float = 0.2,
                           snap_pole_rings: bool = True) -> SplinePolarMapping:
    """Spline interpolant of x0 - D (s^2, 0) + s (cos, sin) with x0 = (D, 0) at the Greville grid.

    With ``snap_pole_rings`` the first ring is moved onto x0 and the second
    onto the best-fit circle rho1 (cos theta_j, sin theta_j).
    """
    if not -0.5 < pole_shift < 0.5:
        raise InvalidInputError(f"Pole shift must lie in (-1/2, 1/2), got {pole_shift}")
    sp = build_derham(p, n_cells_s, n_theta)
    z_s = greville_points(sp.kv_s)
    z_t = greville_points(sp.kv_theta)
    s_g, t_g = np.meshgrid(z_s, z_t, indexing="ij")
    off_x = -pole_shift * s_g ** 2 + s_g * np.cos(t_g)
    off_y = s_g * np.sin(t_g)
    solver = KroneckerSolver(interpolation_matrix(sp.kv_s, z_s), interpolation_matrix(sp.kv_theta, z_t))
    pts = np.stack([solver.solve(off_x.ravel()).reshape(sp.n_s, sp.n_theta),
                    solver.solve(off_y.ravel()).reshape(sp.n_s, sp.n_theta)], axis=-1)
    if snap_pole_rings:
        pts[0] = 0.0
        rho1 = float(np.mean(np.hypot(pts[1, :, 0], pts[1, :, 1])))
        th = regular_angles(sp.n_theta)
        pts[1] = rho1 * np.column_stack([np.cos(th), np.sin(th)])
    logger.info(f"Built shifted-disk map D={pole_shift} p={p} N_s={n_cells_s} N_theta={n_theta}")
    return SplinePolarMapping(sp, pts, x0=(pole_shift, 0.0), strict=snap_pole_rings)


def save_mapping(path: str, F: SplinePolarMapping) -> None:
    sp = F.space
    with open(path, "w") as fh:
        fh.write(f"{sp.p} {sp.kv_s.n_cells} {sp.n_theta} {F.x0[0]:.17g} {F.x0[1]:.17g} {sp.length:.17g}\n")
        fh.write("# breaks " + " ".join(f"{b:.17g}" for b in sp.kv_s.breaks) + "\n")
        for i in range(sp.n_s):
            for j in range(sp.n_theta):
                px, py = F.control_points[i, j]
                fh.write(f"{i} {j} {px:.17g} {py:.17g}\n")
    logger.info(f"Saved mapping control points to {path}")


def load_mapping(path: str, strict: bool = True) -> SplinePolarMapping:
    with open(path) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise GeometryError(f"Empty mapping file {path}")
    try:
        head = lines[0].split()
        p, n_cells, n_theta = int(head[0]), int(head[1]), int(head[2])
        x0 = (float(head[3]), float(head[4]))
        length = float(head[5])
    except (IndexError, ValueError) as e:
        raise GeometryError(f"Malformed mapping header in {path}: {e}") from e
    breaks = None
    rows = []
    for line in lines[1:]:
        if line.startswith("# breaks"):
            breaks = [float(v) for v in line.split()[2:]]
        elif not line.startswith("#"):
            rows.append(line.split())
    sp = build_derham(p, n_cells, n_theta, length, breakpoints=breaks)
    pts = np.zeros((sp.n_s, sp.n_theta, 2))
    for i, j, px, py in rows:
        pts[int(i), int(j)] = (float(px), float(py))
    return SplinePolarMapping(sp, pts, x0=x0, strict=strict)
