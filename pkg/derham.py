"""Tensor-product spline de Rham complex on the logical annulus [0, L] x [0, 2 pi).

    W0 = B (x) B_per,   W1 = (M (x) B_per, B (x) M_per),   W2 = M (x) M_per

Coefficients are flattened row-major with the radial index first,
mu = i * n_theta + j. Level-1 vectors store the s-component block before
the theta-component block.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as spa

from errors import InvalidInputError
from operators import SparseOperator
from splines import KnotVector, basis_matrix, make_open_knots, make_periodic_knots

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TensorDeRham:
    kv_s: KnotVector
    kv_theta: KnotVector

    @property
    def p(self) -> int:
        return self.kv_s.degree

    @property
    def length(self) -> float:
        return self.kv_s.length

    @property
    def n_s(self) -> int:
        return self.kv_s.dim

    @property
    def n_theta(self) -> int:
        return self.kv_theta.dim

    @property
    def dim0(self) -> int:
        return self.n_s * self.n_theta

    @property
    def dim1_s(self) -> int:
        return (self.n_s - 1) * self.n_theta

    @property
    def dim1_theta(self) -> int:
        return self.n_s * self.n_theta

    @property
    def dim1(self) -> int:
        return self.dim1_s + self.dim1_theta

    @property
    def dim2(self) -> int:
        return (self.n_s - 1) * self.n_theta

    @property
    def assumption1_ok(self) -> bool:
        return self.kv_theta.assumption1_ok

    def dim(self, level: int) -> int:
        if level not in (0, 1, 2):
            raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")
        return (self.dim0, self.dim1, self.dim2)[level]

    def index0(self, i: int, j: int) -> int:
        return i * self.n_theta + j % self.n_theta

    def index1_s(self, i: int, j: int) -> int:
        return i * self.n_theta + j % self.n_theta

    def index1_theta(self, i: int, j: int) -> int:
        return self.dim1_s + i * self.n_theta + j % self.n_theta

    def index2(self, i: int, j: int) -> int:
        return i * self.n_theta + j % self.n_theta


@dataclass(frozen=True, eq=False)
class FieldCoeffs:
    """Coefficients of one member of W^level."""
    level: int
    data: np.ndarray

    def __post_init__(self):
        if self.level not in (0, 1, 2):
            raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {self.level}")
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float).ravel())

    def check(self, sp: TensorDeRham) -> "FieldCoeffs":
        if len(self.data) != sp.dim(self.level):
            raise InvalidInputError(
                f"Level-{self.level} coefficients have length {len(self.data)}, expected {sp.dim(self.level)}")
        return self

    def blocks(self, sp: TensorDeRham):
        """Ring-indexed views: (n_s, n_theta) for level 0, (s-block, theta-block) for level 1."""
        self.check(sp)
        if self.level == 0:
            return self.data.reshape(sp.n_s, sp.n_theta)
        if self.level == 2:
            return self.data.reshape(sp.n_s - 1, sp.n_theta)
        return (self.data[:sp.dim1_s].reshape(sp.n_s - 1, sp.n_theta),
                self.data[sp.dim1_s:].reshape(sp.n_s, sp.n_theta))

    def with_data(self, data: np.ndarray) -> "FieldCoeffs":
        return FieldCoeffs(self.level, data)


def build_derham(p: int, n_cells_s: int, n_theta: int, length: float = 1.0,
                 breakpoints: Optional[Sequence[float]] = None) -> TensorDeRham:
    """Spaces with n_s = N_s + p radial and n_theta angular B-splines."""
    if n_cells_s < 1:
        raise InvalidInputError(f"Need at least one radial cell, got {n_cells_s}")
    if length <= 0:
        raise InvalidInputError(f"Radial length must be positive, got {length}")
    if breakpoints is None:
        breakpoints = np.linspace(0.0, length, n_cells_s + 1)
    elif len(breakpoints) != n_cells_s + 1:
        raise InvalidInputError(f"Expected {n_cells_s + 1} breakpoints, got {len(breakpoints)}")
    if p < 2:
        logger.warning(f"Degree p={p} supports only the C0 polar sequence")
    sp = TensorDeRham(kv_s=make_open_knots(p, breakpoints), kv_theta=make_periodic_knots(p, n_theta))
    logger.debug(f"Built de Rham spaces p={p} n_s={sp.n_s} n_theta={sp.n_theta} dims=({sp.dim0}, {sp.dim1}, {sp.dim2})")
    return sp


def periodic_difference(n: int) -> spa.csr_matrix:
    """Circulant forward difference: row k holds -1 at k and +1 at k+1 mod n."""
    rows = np.concatenate([np.arange(n), np.arange(n)])
    cols = np.concatenate([np.arange(n), (np.arange(n) + 1) % n])
    vals = np.concatenate([-np.ones(n), np.ones(n)])
    return spa.csr_matrix((vals, (rows, cols)), shape=(n, n))


def radial_difference(n: int) -> spa.csr_matrix:
    """Forward difference of shape (n-1, n)."""
    return spa.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")


def grad_matrix(sp: TensorDeRham) -> SparseOperator:
    d_s = radial_difference(sp.n_s)
    d_t = periodic_difference(sp.n_theta)
    g_s = spa.kron(d_s, spa.identity(sp.n_theta))
    g_t = spa.kron(spa.identity(sp.n_s), d_t)
    return SparseOperator(spa.vstack([g_s, g_t]))


def curl_matrix(sp: TensorDeRham) -> SparseOperator:
    d_s = radial_difference(sp.n_s)
    d_t = periodic_difference(sp.n_theta)
    c_s = -spa.kron(spa.identity(sp.n_s - 1), d_t)
    c_t = spa.kron(d_s, spa.identity(sp.n_theta))
    return SparseOperator(spa.hstack([c_s, c_t]))


def _factor_tables(sp: TensorDeRham, level: int, s, theta):
    """Univariate (radial, angular) basis tables for each component of the level."""
    b_s, b_t = basis_matrix(sp.kv_s, s, "B"), basis_matrix(sp.kv_theta, theta, "B")
    if level == 0:
        return [(b_s, b_t)]
    m_s, m_t = basis_matrix(sp.kv_s, s, "M"), basis_matrix(sp.kv_theta, theta, "M")
    if level == 2:
        return [(m_s, m_t)]
    return [(m_s, b_t), (b_s, m_t)]


def _component_arrays(sp: TensorDeRham, coeffs: FieldCoeffs):
    blocks = coeffs.blocks(sp)
    return list(blocks) if coeffs.level == 1 else [blocks]


def eval_points(sp: TensorDeRham, coeffs: FieldCoeffs, s, theta) -> np.ndarray:
    """Evaluate at scattered points; level 1 returns shape (2, npts)."""
    s = np.atleast_1d(np.asarray(s, dtype=float)).ravel()
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).ravel()
    out = []
    for (u, v), c in zip(_factor_tables(sp, coeffs.level, s, theta), _component_arrays(sp, coeffs)):
        uc = u @ c
        out.append(np.asarray(v.multiply(uc).sum(axis=1)).ravel())
    return np.array(out) if coeffs.level == 1 else out[0]


def eval_on_grid(sp: TensorDeRham, coeffs: FieldCoeffs, s_pts, theta_pts) -> np.ndarray:
    """Evaluate on the tensor grid s_pts x theta_pts; level 1 returns shape (2, ns, nt)."""
    out = []
    for (u, v), c in zip(_factor_tables(sp, coeffs.level, s_pts, theta_pts), _component_arrays(sp, coeffs)):
        uc = u @ c
        out.append(np.asarray(v @ uc.T).T)
    return np.array(out) if coeffs.level == 1 else out[0]


def eval_logical(sp: TensorDeRham, coeffs: FieldCoeffs, s: float, theta: float) -> Union[float, np.ndarray]:
    """Value of the spline field at one logical point: scalar, or a 2-vector for level 1."""
    value = eval_points(sp, coeffs, [s], [theta])
    if coeffs.level == 1:
        return value[:, 0]
    return float(value[0])


def logical_gradient_grid(sp: TensorDeRham, coeffs: FieldCoeffs, s_pts, theta_pts) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (d/ds, d/dtheta) of a level-0 field on a tensor grid, from derivative tables."""
    c = coeffs.blocks(sp)
    b_s, b_t = basis_matrix(sp.kv_s, s_pts, "B"), basis_matrix(sp.kv_theta, theta_pts, "B")
    db_s, db_t = basis_matrix(sp.kv_s, s_pts, "dB"), basis_matrix(sp.kv_theta, theta_pts, "dB")
    d_s = np.asarray(b_t @ (db_s @ c).T).T
    d_t = np.asarray(db_t @ (b_s @ c).T).T
    return d_s, d_t
