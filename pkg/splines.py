"""Univariate B-splines and M-splines on open and periodic knot vectors.

Open knot vectors live on [0, L] with (p+1)-fold end knots. Periodic knot
vectors are uniform on [0, 2pi) with theta_j = 2 pi j / n_theta and the
periodic B-spline of index j supported on [theta_j, theta_{j+p+1}].

M-splines are the derivative-normalized splines of degree p-1,

    M_i = p / (t_{i+p+1} - t_{i+1}) * B^{p-1}_{i+1},

so that B_i' = M_{i-1} - M_i. Open M-splines integrate to one, periodic
M-splines sum to 1/dtheta.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as spa

from errors import DomainError, InvalidInputError
from operators import SparseOperator

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
_DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Degree, knot sequence and flavor of a univariate spline space.

    For the periodic flavor ``knots`` holds the uniform knots extended by
    ``degree`` knots on each side, ``dtheta * arange(-p, n_theta + p + 1)``.
    """
    degree: int
    knots: np.ndarray
    periodic: bool
    length: float
    assumption1_ok: bool = True

    @property
    def breaks(self) -> np.ndarray:
        if self.periodic:
            return self.knots[self.degree:len(self.knots) - self.degree]
        return np.unique(self.knots)

    @property
    def n_cells(self) -> int:
        return len(self.breaks) - 1

    @property
    def dim(self) -> int:
        """Number of B-splines."""
        if self.periodic:
            return self.n_cells
        return len(self.knots) - self.degree - 1

    @property
    def dim_m(self) -> int:
        """Number of M-splines."""
        return self.dim if self.periodic else self.dim - 1

    @property
    def spacing(self) -> float:
        if not self.periodic:
            raise InvalidInputError("Uniform spacing is only defined for periodic knot vectors")
        return self.length / self.n_cells

    def quasi_uniform(self, ratio: float = 4.0) -> bool:
        spans = np.diff(self.breaks)
        return bool(spans.max() <= ratio * spans.min())


@dataclass(frozen=True)
class SplineBasisEval:
    """Nonzero basis values at one point; index first_index + k, wrapped for periodic spaces."""
    first_index: int
    values: np.ndarray
    dim: int
    periodic: bool

    def indices(self) -> np.ndarray:
        idx = self.first_index + np.arange(len(self.values))
        return np.mod(idx, self.dim) if self.periodic else idx


def make_open_knots(p: int, breakpoints: Sequence[float]) -> KnotVector:
    """
    Open knot vector with (p+1)-fold repeated end points.

    Parameters
    ----------
    p : int
        Spline degree, p >= 1.

    breakpoints : sequence of float
        Strictly increasing breakpoints 0 = b_0 < ... < b_N = L.

    Returns
    -------
    KnotVector
        Knot vector of dimension N + p.
    """
    if p < 1:
        raise InvalidInputError(f"Spline degree must be >= 1, got {p}")
    b = np.asarray(breakpoints, dtype=float)
    if b.ndim != 1 or len(b) < 2:
        raise InvalidInputError("At least two breakpoints are required")
    if not np.all(np.diff(b) > 0):
        raise InvalidInputError(f"Breakpoints must be strictly increasing: {b}")
    if b[0] != 0.0:
        raise InvalidInputError(f"First breakpoint must be 0, got {b[0]}")
    knots = np.concatenate([np.full(p, b[0]), b, np.full(p, b[-1])])
    kv = KnotVector(degree=p, knots=knots, periodic=False, length=float(b[-1]))
    if not kv.quasi_uniform():
        logger.warning("Radial breakpoints are far from quasi-uniform (span ratio > 4)")
    return kv


def make_uniform_open_knots(p: int, n_cells: int, length: float = 1.0) -> KnotVector:
    if n_cells < 1:
        raise InvalidInputError(f"Number of cells must be >= 1, got {n_cells}")
    return make_open_knots(p, np.linspace(0.0, length, n_cells + 1))


def make_periodic_knots(p: int, n_theta: int) -> KnotVector:
    """Uniform periodic knots theta_j = 2 pi j / n_theta.

    ``assumption1_ok`` records whether n_theta = 4 n' with n' >= p, the
    condition under which the discrete trigonometric identities hold and
    the C1 pole projections are exact projectors.
    """
    if p < 1:
        raise InvalidInputError(f"Spline degree must be >= 1, got {p}")
    if n_theta <= p:
        raise InvalidInputError(f"Need n_theta > p for periodic splines, got n_theta={n_theta}, p={p}")
    dtheta = TWO_PI / n_theta
    knots = dtheta * np.arange(-p, n_theta + p + 1)
    ok = n_theta % 4 == 0 and n_theta >= 4 * p
    if not ok:
        logger.warning(f"n_theta={n_theta} is not of the form 4n' with n' >= p={p}; "
                       f"discrete trigonometric identities are not guaranteed")
    return KnotVector(degree=p, knots=knots, periodic=True, length=TWO_PI, assumption1_ok=ok)


def regular_angles(n_theta: int) -> np.ndarray:
    return TWO_PI * np.arange(n_theta) / n_theta


def trigonometric_identities_residual(n_theta: int) -> float:
    """Largest residual of the discrete trigonometric identities on the regular angles."""
    th = regular_angles(n_theta)
    c, s = np.cos(th), np.sin(th)
    res = [
        abs(np.cos(2 * th).sum()), abs(c.sum()), abs(np.sin(2 * th).sum()), abs(s.sum()),
        abs((2 * c ** 2).sum() - n_theta), abs((2 * s ** 2).sum() - n_theta),
    ]
    kernel = np.cos(th[:, None] - th[None, :])
    res.append(np.abs(2 * c @ kernel - n_theta * c).max())
    res.append(np.abs(2 * s @ kernel - n_theta * s).max())
    return float(max(res))


def _cox_de_boor(knots: np.ndarray, degree: int, x: np.ndarray, spans: np.ndarray) -> np.ndarray:
    """Nonzero B-spline values at each x, shape (len(x), degree + 1)."""
    npts = x.size
    values = np.zeros((npts, degree + 1))
    values[:, 0] = 1.0
    left = np.zeros((npts, degree + 1))
    right = np.zeros((npts, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            temp = values[:, r] / (right[:, r + 1] + left[:, j - r])
            values[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        values[:, j] = saved
    return values


def _find_spans(knots: np.ndarray, degree: int, x: np.ndarray) -> np.ndarray:
    n = len(knots) - degree - 1
    spans = np.searchsorted(knots, x, side="right") - 1
    return np.clip(spans, degree, n - 1)


def _prepare_points(kv: KnotVector, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if kv.periodic:
        return np.mod(x, TWO_PI)
    tol = _DOMAIN_TOL * max(1.0, kv.length)
    if np.any(x < -tol) or np.any(x > kv.length + tol):
        bad = x[(x < -tol) | (x > kv.length + tol)][0]
        raise DomainError(f"Point {bad} lies outside [0, {kv.length}]")
    return np.clip(x, 0.0, kv.length)


def _periodic_table(kv: KnotVector, x: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    n = kv.n_cells
    dtheta = kv.spacing
    ext = dtheta * np.arange(-degree, n + degree + 1)
    r = np.clip(np.floor(x / dtheta).astype(int), 0, n - 1)
    values = _cox_de_boor(ext, degree, x, r + degree)
    # B^p_j and M_j both start at j = r - p on the span [theta_r, theta_{r+1})
    return r - kv.degree, values


def _table(kv: KnotVector, x: np.ndarray, kind: str) -> Tuple[np.ndarray, np.ndarray]:
    """First (unwrapped) index per point and the nonzero values for kind B, M or dB."""
    p = kv.degree
    if kind == "B":
        if kv.periodic:
            return _periodic_table(kv, x, p)
        spans = _find_spans(kv.knots, p, x)
        return spans - p, _cox_de_boor(kv.knots, p, x, spans)
    if kind == "M":
        if kv.periodic:
            first, values = _periodic_table(kv, x, p - 1)
            return first, values / kv.spacing
        reduced = kv.knots[1:-1]
        spans = _find_spans(reduced, p - 1, x)
        first = spans - (p - 1)
        values = _cox_de_boor(reduced, p - 1, x, spans)
        idx = first[:, None] + np.arange(p)[None, :]
        scale = p / (reduced[idx + p] - reduced[idx])
        return first, values * scale
    if kind == "dB":
        first_b, _ = _table(kv, x, "B")
        first_m, m_vals = _table(kv, x, "M")
        if not np.array_equal(first_b, first_m):
            raise DomainError("Inconsistent B/M spans; knot vector is malformed")
        zeros = np.zeros((x.size, 1))
        return first_b, np.hstack([zeros, m_vals]) - np.hstack([m_vals, zeros])
    raise InvalidInputError(f"Unknown basis kind {kind!r}")


def basis_matrix(kv: KnotVector, x, kind: str = "B") -> spa.csr_matrix:
    """
    Evaluate a whole basis at many points.

    Parameters
    ----------
    kv : KnotVector
        Univariate spline space.

    x : array_like
        Evaluation points (periodic points are wrapped mod 2 pi).

    kind : {"B", "M", "dB"}
        B-splines, M-splines or B-spline derivatives.

    Returns
    -------
    scipy.sparse.csr_matrix
        Matrix of shape (len(x), dim) with entry [q, i] = basis_i(x_q).
    """
    pts = _prepare_points(kv, x)
    first, values = _table(kv, pts, kind)
    ncols = kv.dim_m if kind == "M" else kv.dim
    idx = first[:, None] + np.arange(values.shape[1])[None, :]
    if kv.periodic:
        idx = np.mod(idx, ncols)
    rows = np.repeat(np.arange(pts.size), values.shape[1])
    return spa.csr_matrix((values.ravel(), (rows, idx.ravel())), shape=(pts.size, ncols))


def _single(kv: KnotVector, x: float, kind: str) -> SplineBasisEval:
    pts = _prepare_points(kv, x)
    first, values = _table(kv, pts, kind)
    dim = kv.dim_m if kind == "M" else kv.dim
    start = int(first[0] % dim) if kv.periodic else int(first[0])
    return SplineBasisEval(first_index=start, values=values[0].copy(), dim=dim, periodic=kv.periodic)


def eval_B(kv: KnotVector, x: float) -> SplineBasisEval:
    return _single(kv, x, "B")


def eval_M(kv: KnotVector, x: float) -> SplineBasisEval:
    return _single(kv, x, "M")


def eval_B_derivative(kv: KnotVector, x: float) -> SplineBasisEval:
    return _single(kv, x, "dB")


def greville_points(kv: KnotVector) -> np.ndarray:
    """Knot averages; periodic points are wrapped into [0, 2 pi) and sorted."""
    p = kv.degree
    t = kv.knots
    if not kv.periodic:
        return np.array([t[i + 1:i + p + 1].mean() for i in range(kv.dim)])
    dtheta = kv.spacing
    zeta = dtheta * np.arange(kv.dim) + 0.5 * (p + 1) * dtheta
    zeta = np.mod(zeta, TWO_PI)
    zeta[np.isclose(zeta, TWO_PI, rtol=0.0, atol=1e-12)] = 0.0
    return np.sort(zeta)


def segment_quadrature(kv: KnotVector, a: float, b: float, n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [a, b], split at the knots inside."""
    if kv.periodic:
        h = kv.spacing
        inner = h * np.arange(np.ceil(a / h), np.floor(b / h) + 1)
    else:
        inner = kv.breaks
    cuts = np.concatenate([[a], inner[(inner > a) & (inner < b)], [b]])
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-14])]
    x_ref, w_ref = np.polynomial.legendre.leggauss(n_points)
    lo, hi = cuts[:-1], cuts[1:]
    half = 0.5 * (hi - lo)
    points = (lo + half)[:, None] + half[:, None] * x_ref[None, :]
    weights = half[:, None] * w_ref[None, :]
    return points.ravel(), weights.ravel()


def _edges(kv: KnotVector, nodes: np.ndarray) -> np.ndarray:
    if kv.periodic:
        ends = np.append(nodes[1:], nodes[0] + TWO_PI)
        return np.column_stack([nodes, ends])
    return np.column_stack([nodes[:-1], nodes[1:]])


def interpolation_matrix(kv: KnotVector, nodes: Sequence[float]) -> SparseOperator:
    """Collocation matrix A[i, j] = B_j(node_i)."""
    nodes = np.asarray(nodes, dtype=float)
    if len(nodes) != kv.dim:
        raise InvalidInputError(f"Need {kv.dim} interpolation nodes, got {len(nodes)}")
    return SparseOperator(basis_matrix(kv, nodes, "B"))


def histopolation_matrix(kv: KnotVector, nodes: Sequence[float], n_points: Optional[int] = None) -> SparseOperator:
    """
    Histopolation matrix H[i, j] = integral of M_j over edge i.

    Parameters
    ----------
    kv : KnotVector
        Univariate spline space.

    nodes : sequence of float
        Edge end points; edge i joins nodes i and i+1, the periodic flavor
        closes the last edge across 2 pi.

    n_points : int, optional
        Gauss-Legendre points per knot-span segment, default p + 2.
    """
    nodes = np.asarray(nodes, dtype=float)
    if len(nodes) != kv.dim:
        raise InvalidInputError(f"Need {kv.dim} histopolation nodes, got {len(nodes)}")
    nq = n_points or kv.degree + 2
    rows = []
    for a, b in _edges(kv, nodes):
        pts, wts = segment_quadrature(kv, a, b, nq)
        rows.append(spa.csr_matrix(wts[None, :] @ basis_matrix(kv, pts, "M")))
    return SparseOperator(spa.vstack(rows), drop_tol=1e-15)


def edge_quadrature(kv: KnotVector, nodes: Sequence[float],
                    n_points: Optional[int] = None) -> Tuple[spa.csr_matrix, np.ndarray]:
    """Integration weights W with (W @ g(points))[i] = integral of g over edge i, and the points."""
    nodes = np.asarray(nodes, dtype=float)
    nq = n_points or kv.degree + 2
    pts_all, rows, cols, vals = [], [], [], []
    offset = 0
    for i, (a, b) in enumerate(_edges(kv, nodes)):
        pts, wts = segment_quadrature(kv, a, b, nq)
        pts_all.append(pts)
        rows.extend([i] * len(pts))
        cols.extend(range(offset, offset + len(pts)))
        vals.extend(wts)
        offset += len(pts)
    n_edges = len(nodes) if kv.periodic else len(nodes) - 1
    weights = spa.csr_matrix((vals, (rows, cols)), shape=(n_edges, offset))
    return weights, np.concatenate(pts_all)
