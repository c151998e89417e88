"""Local conforming projections onto the polar subspaces.

Kind V keeps fields in H1 / H(curl) / L2 after pushforward, kind U in
C1 / C0 / L2. Both act only on the two innermost coefficient rings; the
matrix forms and matrix-free forms below implement the same maps.

For the U kind the ring-1 treatment depends on the mapping: spline maps
use the angular block p_jk = (2/n) cos(theta_j - theta_k), the analytical
polar map locks ring 1 to the pole value, which amounts to replacing the
block by zero.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as spa

from derham import FieldCoeffs, TensorDeRham, periodic_difference
from errors import InvalidInputError
from operators import SparseOperator
from splines import regular_angles

logger = logging.getLogger(__name__)

ArrayOrField = Union[np.ndarray, FieldCoeffs]


class ConformityKind(Enum):
    V = "V"
    U = "U"

    @classmethod
    def parse(cls, value) -> "ConformityKind":
        if isinstance(value, cls):
            return value
        aliases = {"v": cls.V, "c0": cls.V, "u": cls.U, "c1": cls.U}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidInputError(f"Unknown conformity kind {value!r}; use c0/V or c1/U")


@dataclass(frozen=True)
class PoleParameters:
    gamma0: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    eta1: Optional[float] = None
    eta2: Optional[float] = None


def p_block(n_theta: int) -> np.ndarray:
    th = regular_angles(n_theta)
    return (2.0 / n_theta) * np.cos(th[:, None] - th[None, :])


def _pole_block(n_theta: int, mapping_variant: str) -> np.ndarray:
    if mapping_variant == "spline":
        return p_block(n_theta)
    if mapping_variant == "analytical":
        return np.zeros((n_theta, n_theta))
    raise InvalidInputError(f"Unknown mapping variant {mapping_variant!r}")


def _data(x: ArrayOrField) -> np.ndarray:
    return np.array(x.data if isinstance(x, FieldCoeffs) else x, dtype=float).ravel()


def _wrap(template: ArrayOrField, level: int, data: np.ndarray) -> ArrayOrField:
    if isinstance(template, FieldCoeffs):
        return FieldCoeffs(level, data)
    return data


def _check_len(sp: TensorDeRham, level: int, x: np.ndarray) -> None:
    if len(x) != sp.dim(level):
        raise InvalidInputError(f"Level-{level} vector has length {len(x)}, expected {sp.dim(level)}")


def _first_fourier(ring: np.ndarray) -> Tuple[float, float]:
    th = regular_angles(len(ring))
    n = len(ring)
    return float(2.0 / n * ring @ np.cos(th)), float(2.0 / n * ring @ np.sin(th))


# matrix-free transforms on flat coefficient arrays

def _pv0(sp: TensorDeRham, x: np.ndarray) -> np.ndarray:
    c = x.reshape(sp.n_s, sp.n_theta)
    c[0] = c[0].mean()
    return x


def _pu0(sp: TensorDeRham, x: np.ndarray, block: np.ndarray) -> np.ndarray:
    c = x.reshape(sp.n_s, sp.n_theta)
    mean = c[0].mean()
    c[1] = mean + block @ c[1]
    c[0] = mean
    return x


def _p1(sp: TensorDeRham, x: np.ndarray, block: Optional[np.ndarray]) -> np.ndarray:
    """Level-1 projection; block None gives the V kind."""
    vs = x[:sp.dim1_s].reshape(sp.n_s - 1, sp.n_theta)
    vt = x[sp.dim1_s:].reshape(sp.n_s, sp.n_theta)
    if block is not None:
        ring0 = vs[0].copy()
        vs[0] = block @ ring0
        vs[1] = vs[1] - vs[0] + ring0
    vt[0] = 0.0
    vt[1] = np.roll(vs[0], -1) - vs[0]
    return x


def _p2(sp: TensorDeRham, x: np.ndarray) -> np.ndarray:
    f = x.reshape(sp.n_s - 1, sp.n_theta)
    f[1] = f[1] + f[0]
    f[0] = 0.0
    return x


def _dirichlet(sp: TensorDeRham, level: int, x: np.ndarray) -> np.ndarray:
    if level == 0:
        x.reshape(sp.n_s, sp.n_theta)[-1] = 0.0
    elif level == 1:
        x[sp.dim1_s:].reshape(sp.n_s, sp.n_theta)[-1] = 0.0
    return x


def pv0_apply(sp: TensorDeRham, coeffs: ArrayOrField) -> ArrayOrField:
    x = _data(coeffs)
    _check_len(sp, 0, x)
    return _wrap(coeffs, 0, _pv0(sp, x))


def pv1_apply(sp: TensorDeRham, coeffs: ArrayOrField) -> ArrayOrField:
    x = _data(coeffs)
    _check_len(sp, 1, x)
    return _wrap(coeffs, 1, _p1(sp, x, None))


def pv2_apply(sp: TensorDeRham, coeffs: ArrayOrField) -> ArrayOrField:
    x = _data(coeffs)
    _check_len(sp, 2, x)
    return _wrap(coeffs, 2, _p2(sp, x))


def pu0_apply(sp: TensorDeRham, coeffs: ArrayOrField, mapping_variant: str = "spline") -> ArrayOrField:
    x = _data(coeffs)
    _check_len(sp, 0, x)
    return _wrap(coeffs, 0, _pu0(sp, x, _pole_block(sp.n_theta, mapping_variant)))


def pu1_apply(sp: TensorDeRham, coeffs: ArrayOrField, mapping_variant: str = "spline") -> ArrayOrField:
    x = _data(coeffs)
    _check_len(sp, 1, x)
    return _wrap(coeffs, 1, _p1(sp, x, _pole_block(sp.n_theta, mapping_variant)))


pu2_apply = pv2_apply


# matrix forms, assembled from ring embeddings

def _embed(total: int, offset: int, n: int) -> spa.csr_matrix:
    """Columns of the identity for indices offset .. offset+n-1, shape (total, n)."""
    return spa.csr_matrix((np.ones(n), (offset + np.arange(n), np.arange(n))), shape=(total, n))


def pv0_matrix(sp: TensorDeRham) -> SparseOperator:
    n = sp.n_theta
    r0 = _embed(sp.dim0, 0, n)
    mean = spa.csr_matrix(np.full((n, n), 1.0 / n))
    return SparseOperator(spa.identity(sp.dim0) - r0 @ r0.T + r0 @ mean @ r0.T)


def pu0_matrix(sp: TensorDeRham, mapping_variant: str = "spline") -> SparseOperator:
    n = sp.n_theta
    r0, r1 = _embed(sp.dim0, 0, n), _embed(sp.dim0, n, n)
    mean = spa.csr_matrix(np.full((n, n), 1.0 / n))
    block = spa.csr_matrix(_pole_block(n, mapping_variant))
    mat = (spa.identity(sp.dim0) - r0 @ r0.T - r1 @ r1.T
           + r0 @ mean @ r0.T + r1 @ mean @ r0.T + r1 @ block @ r1.T)
    return SparseOperator(mat)


def _p1_matrix(sp: TensorDeRham, block: Optional[np.ndarray]) -> spa.csr_matrix:
    n = sp.n_theta
    s0, s1 = _embed(sp.dim1, 0, n), _embed(sp.dim1, n, n)
    t0, t1 = _embed(sp.dim1, sp.dim1_s, n), _embed(sp.dim1, sp.dim1_s + n, n)
    d = periodic_difference(n)
    mat = spa.identity(sp.dim1) - t0 @ t0.T - t1 @ t1.T
    if block is None:
        return mat + t1 @ d @ s0.T
    pb = spa.csr_matrix(block)
    mat = mat - s0 @ s0.T + s0 @ pb @ s0.T + s1 @ (spa.identity(n) - pb) @ s0.T
    return mat + t1 @ d @ pb @ s0.T


def pv1_matrix(sp: TensorDeRham) -> SparseOperator:
    return SparseOperator(_p1_matrix(sp, None))


def pu1_matrix(sp: TensorDeRham, mapping_variant: str = "spline") -> SparseOperator:
    return SparseOperator(_p1_matrix(sp, _pole_block(sp.n_theta, mapping_variant)))


def pv2_matrix(sp: TensorDeRham) -> SparseOperator:
    n = sp.n_theta
    q0, q1 = _embed(sp.dim2, 0, n), _embed(sp.dim2, n, n)
    return SparseOperator(spa.identity(sp.dim2) - q0 @ q0.T + q1 @ q0.T)


pu2_matrix = pv2_matrix


def dirichlet_matrix(sp: TensorDeRham, level: int) -> SparseOperator:
    """Zeroes the outer ring of level 0, the outer theta-component ring of level 1."""
    if level == 2:
        return SparseOperator.identity(sp.dim2)
    n = sp.n_theta
    offset = (sp.n_s - 1) * n if level == 0 else sp.dim1_s + (sp.n_s - 1) * n
    e = _embed(sp.dim(level), offset, n)
    return SparseOperator(spa.identity(sp.dim(level)) - e @ e.T)


def pole_parameters(level: int, coeffs: ArrayOrField, sp: TensorDeRham) -> PoleParameters:
    """Pole value/gradient (level 0) or pole vector (level 1) encoded in the inner rings."""
    x = _data(coeffs)
    _check_len(sp, level, x)
    if level == 0:
        c = x.reshape(sp.n_s, sp.n_theta)
        g1, g2 = _first_fourier(c[1])
        return PoleParameters(gamma0=float(c[0].mean()), gamma1=g1, gamma2=g2)
    if level == 1:
        e1, e2 = _first_fourier(x[:sp.dim1_s].reshape(sp.n_s - 1, sp.n_theta)[0])
        return PoleParameters(eta1=e1, eta2=e2)
    return PoleParameters()


def is_conforming(kind, level: int, coeffs: ArrayOrField, sp: TensorDeRham, tol: float = 1e-12,
                  mapping_variant: str = "spline") -> Tuple[bool, PoleParameters]:
    """Check the ring-0/ring-1 characterization of the V or U subspace."""
    if tol <= 0:
        raise InvalidInputError(f"Tolerance must be positive, got {tol}")
    kind = ConformityKind.parse(kind)
    x = _data(coeffs)
    _check_len(sp, level, x)
    params = pole_parameters(level, x, sp)
    bound = tol * max(1.0, float(np.abs(x).max()) if len(x) else 1.0)
    th = regular_angles(sp.n_theta)

    if level == 0:
        c = x.reshape(sp.n_s, sp.n_theta)
        ok = np.abs(c[0] - params.gamma0).max() <= bound
        if kind is ConformityKind.U:
            if mapping_variant == "analytical":
                ring1 = np.full(sp.n_theta, params.gamma0)
            else:
                ring1 = params.gamma0 + params.gamma1 * np.cos(th) + params.gamma2 * np.sin(th)
            ok = ok and np.abs(c[1] - ring1).max() <= bound
        return bool(ok), params

    if level == 1:
        vs = x[:sp.dim1_s].reshape(sp.n_s - 1, sp.n_theta)
        vt = x[sp.dim1_s:].reshape(sp.n_s, sp.n_theta)
        ok = (np.abs(vt[0]).max() <= bound
              and np.abs(vt[1] - (np.roll(vs[0], -1) - vs[0])).max() <= bound)
        if kind is ConformityKind.U:
            if mapping_variant == "analytical":
                ring0 = np.zeros(sp.n_theta)
            else:
                ring0 = params.eta1 * np.cos(th) + params.eta2 * np.sin(th)
            ok = ok and np.abs(vs[0] - ring0).max() <= bound
        return bool(ok), params

    f = x.reshape(sp.n_s - 1, sp.n_theta)
    return bool(np.abs(f[0]).max() <= bound), params


class ConformingProjector:
    """P^0, P^1, P^2 of one kind, optionally composed with the outer-boundary projection."""

    def __init__(self, sp: TensorDeRham, kind, mapping_variant: str = "spline", dirichlet: bool = False):
        self.sp = sp
        self.kind = ConformityKind.parse(kind)
        self.mapping_variant = mapping_variant
        self.dirichlet = dirichlet
        if sp.n_s < 3:
            raise InvalidInputError(f"Polar projections need at least 3 radial B-splines, got {sp.n_s}")
        if self.kind is ConformityKind.U:
            if sp.p < 2:
                raise InvalidInputError(f"C1 polar projections need degree p >= 2, got {sp.p}")
            if not sp.assumption1_ok:
                logger.warning(f"n_theta={sp.n_theta} violates the angular grid condition; "
                               f"the C1 pole block is not guaranteed to be a projector")
            if mapping_variant == "analytical":
                logger.warning("C1 projection for the analytical polar map uses the locked ring-1 extension")
        self._block = _pole_block(sp.n_theta, mapping_variant) if self.kind is ConformityKind.U else None
        self._matrices: Dict[int, SparseOperator] = {}

    def apply(self, level: int, coeffs: ArrayOrField) -> ArrayOrField:
        x = _data(coeffs)
        _check_len(self.sp, level, x)
        if level == 0:
            x = _pv0(self.sp, x) if self._block is None else _pu0(self.sp, x, self._block)
        elif level == 1:
            x = _p1(self.sp, x, self._block)
        else:
            x = _p2(self.sp, x)
        if self.dirichlet:
            x = _dirichlet(self.sp, level, x)
        return _wrap(coeffs, level, x)

    def matrix(self, level: int) -> SparseOperator:
        if level not in self._matrices:
            if level == 0:
                mat = pv0_matrix(self.sp) if self._block is None else pu0_matrix(self.sp, self.mapping_variant)
            elif level == 1:
                mat = SparseOperator(_p1_matrix(self.sp, self._block))
            elif level == 2:
                mat = pv2_matrix(self.sp)
            else:
                raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")
            if self.dirichlet:
                mat = dirichlet_matrix(self.sp, level) @ mat
            self._matrices[level] = mat
        return self._matrices[level]

    def is_conforming(self, level: int, coeffs: ArrayOrField, tol: float = 1e-12) -> bool:
        ok, _ = is_conforming(self.kind, level, coeffs, self.sp, tol, self.mapping_variant)
        return ok
