"""Mapped-quadrature assembly: mass matrices, regularized mass, load vectors and error norms."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as spa

from derham import FieldCoeffs, TensorDeRham, eval_on_grid
from errors import InvalidInputError
from geometry import PolarMapping, pole_limits
from operators import SparseOperator
from splines import KnotVector, basis_matrix

logger = logging.getLogger(__name__)

DROP_TOL = 1e-15


def _cell_gauss(breaks: np.ndarray, n_quad: int) -> Tuple[np.ndarray, np.ndarray]:
    x_ref, w_ref = np.polynomial.legendre.leggauss(n_quad)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    pts = (lo + half)[:, None] + half[:, None] * x_ref[None, :]
    return pts.ravel(), (half[:, None] * w_ref[None, :]).ravel()


class QuadratureGrid:
    """Tensor Gauss grid over the logical cells with cached mapping data.

    ``pole_grading`` splits the first radial cell geometrically toward s = 0
    that many times; no point ever sits on s = 0.
    """

    def __init__(self, sp: TensorDeRham, F: PolarMapping, n_quad: Optional[int] = None, pole_grading: int = 0):
        self.sp = sp
        self.F = F
        self.n_quad = n_quad or sp.p + 2
        breaks_s = sp.kv_s.breaks
        if pole_grading > 0:
            graded = breaks_s[1] * 0.5 ** np.arange(pole_grading, 0, -1)
            breaks_s = np.concatenate([[0.0], graded, breaks_s[1:]])
        self.s_pts, self.s_wts = _cell_gauss(breaks_s, self.n_quad)
        self.theta_pts, self.theta_wts = _cell_gauss(sp.kv_theta.breaks, self.n_quad)

        self.b_s = basis_matrix(sp.kv_s, self.s_pts, "B")
        self.m_s = basis_matrix(sp.kv_s, self.s_pts, "M")
        self.b_t = basis_matrix(sp.kv_theta, self.theta_pts, "B")
        self.m_t = basis_matrix(sp.kv_theta, self.theta_pts, "M")

        self.x, self.y = F.evaluate_grid(self.s_pts, self.theta_pts)
        self.jac, self.det = F.jacobian_grid(self.s_pts, self.theta_pts)
        self.jac_inv = np.linalg.inv(self.jac)
        self.weights = self.s_wts[:, None] * self.theta_wts[None, :]
        if np.any(self.det <= 0):
            logger.warning(f"Mapping Jacobian is not positive at {int(np.sum(self.det <= 0))} quadrature points")

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.s_pts), len(self.theta_pts)

    def area(self) -> float:
        return float(np.sum(self.weights * self.det))

    def pushforward(self, level: int, values: np.ndarray) -> np.ndarray:
        """Physical values of logical level-form values sampled on the grid."""
        if level == 0:
            return values
        if level == 2:
            return values / self.det
        return np.einsum("ijba,bij->aij", self.jac_inv, values)

    def physical_values(self, coeffs: FieldCoeffs) -> np.ndarray:
        return self.pushforward(coeffs.level, eval_on_grid(self.sp, coeffs, self.s_pts, self.theta_pts))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * self.det * values))


def _tensor_mass(us, ut, vs, vt, weights: np.ndarray, threads: int = 1) -> spa.csr_matrix:
    """Sum over grid points of w[q, r] (us[q] kron ut[r])^T (vs[q] kron vt[r])."""
    us, vs = us.tocsr(), vs.tocsr()
    ut_t = ut.T.tocsr()
    n_ut, n_vt = ut.shape[1], vt.shape[1]

    def chunk(q_range):
        rows, cols, vals = [], [], []
        for q in q_range:
            u_row, v_row = us.getrow(q), vs.getrow(q)
            if u_row.nnz == 0 or v_row.nnz == 0:
                continue
            outer = (u_row.T @ v_row).tocoo()
            a_q = (ut_t @ spa.diags(weights[q]) @ vt).tocoo()
            rows.append((outer.row[:, None] * n_ut + a_q.row[None, :]).ravel())
            cols.append((outer.col[:, None] * n_vt + a_q.col[None, :]).ravel())
            vals.append((outer.data[:, None] * a_q.data[None, :]).ravel())
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    chunks = np.array_split(np.arange(us.shape[0]), max(1, threads))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, chunks))
    else:
        parts = [chunk(c) for c in chunks]
    # merge in chunk order so sums are reproducible
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    shape = (us.shape[1] * n_ut, vs.shape[1] * n_vt)
    return spa.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def mass_matrix(level: int, sp: TensorDeRham, F: PolarMapping, quad: Optional[QuadratureGrid] = None,
                threads: int = 1) -> SparseOperator:
    """Mass matrix of the pushed-forward level-form basis."""
    if quad is None:
        quad = QuadratureGrid(sp, F)
    w = quad.weights
    if level == 0:
        mat = _tensor_mass(quad.b_s, quad.b_t, quad.b_s, quad.b_t, w * quad.det, threads)
    elif level == 2:
        mat = _tensor_mass(quad.m_s, quad.m_t, quad.m_s, quad.m_t, w / quad.det, threads)
    elif level == 1:
        ginv = np.einsum("ijac,ijbc->ijab", quad.jac_inv, quad.jac_inv) * (w * quad.det)[:, :, None, None]
        ss = _tensor_mass(quad.m_s, quad.b_t, quad.m_s, quad.b_t, ginv[:, :, 0, 0], threads)
        st = _tensor_mass(quad.m_s, quad.b_t, quad.b_s, quad.m_t, ginv[:, :, 0, 1], threads)
        tt = _tensor_mass(quad.b_s, quad.m_t, quad.b_s, quad.m_t, ginv[:, :, 1, 1], threads)
        mat = spa.bmat([[ss, st], [st.T, tt]], format="csr")
    else:
        raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")
    op = SparseOperator(mat, drop_tol=DROP_TOL)
    logger.info(f"Assembled level-{level} mass matrix {op.shape} nnz={op.nnz}")
    return op


def regularized_mass(M: SparseOperator, P: SparseOperator) -> SparseOperator:
    """P^T M P + (I - P)^T (I - P)."""
    complement = SparseOperator.identity(P.shape[0]) - P
    return P.T @ M @ P + complement.T @ complement


def _moments(us, ut, values: np.ndarray) -> np.ndarray:
    """us^T @ values @ ut for sparse factor tables, flattened in coefficient order."""
    return np.asarray(ut.T @ np.asarray(us.T @ values).T).T.ravel()


def load_vector(level: int, quad: QuadratureGrid, g: Callable) -> np.ndarray:
    """Moments of a physical field g(x, y) against the pushed-forward level-form basis."""
    w = quad.weights
    if level == 0:
        vals = np.broadcast_to(np.asarray(g(quad.x, quad.y), dtype=float), quad.shape)
        return _moments(quad.b_s, quad.b_t, w * quad.det * vals)
    if level == 1:
        gx, gy = g(quad.x, quad.y)
        phys = np.array([np.broadcast_to(gx, quad.shape), np.broadcast_to(gy, quad.shape)], dtype=float)
        logical = np.einsum("ijab,bij->aij", quad.jac_inv, phys) * (w * quad.det)
        return np.concatenate([_moments(quad.m_s, quad.b_t, logical[0]),
                               _moments(quad.b_s, quad.m_t, logical[1])])
    if level == 2:
        vals = np.broadcast_to(np.asarray(g(quad.x, quad.y), dtype=float), quad.shape)
        return _moments(quad.m_s, quad.m_t, w * vals)
    raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")


def _norm_sq(values: np.ndarray, quad: QuadratureGrid) -> float:
    sq = values ** 2 if values.ndim == 2 else np.sum(values ** 2, axis=0)
    return quad.integrate(sq)


def _relative(num: float, den: float) -> float:
    if den <= 0.0:
        raise InvalidInputError("Reference field has zero norm")
    return float(np.sqrt(num / den))


def l2_error(level: int, a: FieldCoeffs, b: FieldCoeffs, quad: QuadratureGrid) -> float:
    """Relative L2 distance ||a - b|| / ||b|| over the mapped domain."""
    diff = FieldCoeffs(level, a.data - b.data)
    return _relative(_norm_sq(quad.physical_values(diff), quad), _norm_sq(quad.physical_values(b), quad))


def h1_error(a: FieldCoeffs, b: FieldCoeffs, quad: QuadratureGrid, G: SparseOperator) -> float:
    diff = a.data - b.data

    def h1_sq(c: np.ndarray) -> float:
        value = _norm_sq(quad.physical_values(FieldCoeffs(0, c)), quad)
        return value + _norm_sq(quad.physical_values(FieldCoeffs(1, G @ c)), quad)

    return _relative(h1_sq(diff), h1_sq(b.data))


def l2_error_to_field(level: int, coeffs: FieldCoeffs, quad: QuadratureGrid, exact: Callable) -> float:
    """Relative L2 distance between a discrete field and a physical field g(x, y)."""
    approx = quad.physical_values(coeffs)
    ref = np.asarray(exact(quad.x, quad.y), dtype=float)
    ref = np.broadcast_to(ref, approx.shape)
    return _relative(_norm_sq(approx - ref, quad), _norm_sq(ref, quad))


def l2_error_coeffs(a: np.ndarray, b: np.ndarray, M: SparseOperator) -> float:
    diff = np.asarray(a) - np.asarray(b)
    return _relative(float(diff @ (M @ diff)), float(np.asarray(b) @ (M @ np.asarray(b))))


def min_edge_length(F: PolarMapping, sp: TensorDeRham) -> float:
    """Smallest physical length of the mapped breakpoint grid edges, ignoring the collapsed pole ring."""
    breaks_s = sp.kv_s.breaks
    breaks_t = np.append(sp.kv_theta.breaks[:-1], 2 * np.pi)
    x, y = F.evaluate_grid(breaks_s, breaks_t)
    radial = np.hypot(np.diff(x, axis=0), np.diff(y, axis=0))
    angular = np.hypot(np.diff(x[1:], axis=1), np.diff(y[1:], axis=1))
    return float(min(radial.min(), angular.min()))


def _graded_radial_rule(eps: float, stop: float, n_quad: int) -> Tuple[np.ndarray, np.ndarray]:
    n_pieces = int(np.ceil(4 * np.log10(stop / eps))) + 4
    return _cell_gauss(np.geomspace(eps, stop, n_pieces + 1), n_quad)


def _theta_rule(kv: KnotVector, n_quad: int) -> Tuple[np.ndarray, np.ndarray]:
    return _cell_gauss(kv.breaks, n_quad)


def annulus_norm_squared(F: PolarMapping, sp: TensorDeRham, j: int, eps: float, n_quad: int = 8) -> float:
    """Squared L2 norm over s in [eps, L] of the pushforward of the level-1 basis (0, B_0 M_j)."""
    if not 0.0 < eps < sp.kv_s.breaks[1]:
        raise InvalidInputError(f"eps must lie inside the first radial cell, got {eps}")
    s_pts, s_wts = _graded_radial_rule(eps, sp.kv_s.breaks[1], n_quad)
    t_pts, t_wts = _theta_rule(sp.kv_theta, n_quad)
    b0 = basis_matrix(sp.kv_s, s_pts, "B").toarray()[:, 0]
    mj = basis_matrix(sp.kv_theta, t_pts, "M").toarray()[:, j % sp.n_theta]
    jac, det = F.jacobian_grid(s_pts, t_pts)
    v_t = b0[:, None] * mj[None, :]
    # J^{-T} (0, v_t) = v_t (-J10, J00) / det
    sq = v_t ** 2 * (jac[..., 1, 0] ** 2 + jac[..., 0, 0] ** 2) / det ** 2
    return float(np.sum(s_wts[:, None] * t_wts[None, :] * sq * det))


def theoretical_log_slope(F: PolarMapping, sp: TensorDeRham, j: int, n_quad: int = 8) -> float:
    """Coefficient of log(1/eps) in annulus_norm_squared as eps -> 0."""
    t_pts, t_wts = _theta_rule(sp.kv_theta, n_quad)
    lim1, lim2 = pole_limits(F, F.length * np.array([1e-4, 2e-4, 4e-4]), t_pts)
    c, s = lim1[:, 0], lim1[:, 1]
    d = c * lim2[:, 1] - s * lim2[:, 0]
    mj = basis_matrix(sp.kv_theta, t_pts, "M").toarray()[:, j % sp.n_theta]
    return float(np.sum(t_wts * mj ** 2 * (c ** 2 + s ** 2) / d))
