"""Commuting geometric projections.

Degrees of freedom are point values at the Greville nodes (level 0), line
integrals along the edges joining consecutive nodes (level 1) and
integrals over the cells they span (level 2). Every collocation matrix is
a Kronecker product of univariate interpolation/histopolation matrices
and is inverted by a KroneckerSolver.
"""
import logging
from typing import Callable, Optional

import numpy as np

from conforming import ConformingProjector
from derham import FieldCoeffs, TensorDeRham
from errors import InvalidInputError
from geometry import PolarMapping, pullback_eval
from operators import KroneckerSolver, SparseOperator
from splines import TWO_PI, edge_quadrature, greville_points, histopolation_matrix, interpolation_matrix

logger = logging.getLogger(__name__)

__all__ = ["GeometricDofGrid", "KroneckerSolver", "logical_dofs", "project_logical",
           "project_polar", "project_conforming"]


class GeometricDofGrid:
    def __init__(self, sp: TensorDeRham, n_quad: Optional[int] = None):
        self.sp = sp
        self.n_quad = n_quad or sp.p + 2
        self.nodes_s = greville_points(sp.kv_s)
        self.nodes_theta = greville_points(sp.kv_theta)
        self.edge_weights_s, self.edge_points_s = edge_quadrature(sp.kv_s, self.nodes_s, self.n_quad)
        self.edge_weights_theta, edge_pts = edge_quadrature(sp.kv_theta, self.nodes_theta, self.n_quad)
        self.edge_points_theta = np.mod(edge_pts, TWO_PI)

        interp_s = interpolation_matrix(sp.kv_s, self.nodes_s)
        interp_t = interpolation_matrix(sp.kv_theta, self.nodes_theta)
        histo_s = histopolation_matrix(sp.kv_s, self.nodes_s, self.n_quad)
        histo_t = histopolation_matrix(sp.kv_theta, self.nodes_theta, self.n_quad)
        self.collocation = {
            0: [SparseOperator.kron(interp_s, interp_t)],
            1: [SparseOperator.kron(histo_s, interp_t), SparseOperator.kron(interp_s, histo_t)],
            2: [SparseOperator.kron(histo_s, histo_t)],
        }
        self._solvers = {level: [KroneckerSolver.from_operator(op) for op in ops]
                         for level, ops in self.collocation.items()}

    @property
    def edge_lengths_s(self) -> np.ndarray:
        return np.asarray(self.edge_weights_s.sum(axis=1)).ravel()

    @property
    def edge_lengths_theta(self) -> np.ndarray:
        return np.asarray(self.edge_weights_theta.sum(axis=1)).ravel()

    def solve(self, level: int, dofs: np.ndarray) -> np.ndarray:
        if level == 1:
            n = self.sp.dim1_s
            return np.concatenate([self._solvers[1][0].solve(dofs[:n]), self._solvers[1][1].solve(dofs[n:])])
        return self._solvers[level][0].solve(dofs)


def _on_grid(f: Callable, s_pts: np.ndarray, theta_pts: np.ndarray):
    s_g, t_g = np.meshgrid(s_pts, theta_pts, indexing="ij")
    return f(s_g, t_g), s_g.shape


def logical_dofs(grid: GeometricDofGrid, level: int, f: Callable) -> np.ndarray:
    """Geometric degrees of freedom of a logical field f(s, theta); level-1 fields return (f_s, f_theta)."""
    if level == 0:
        vals, shape = _on_grid(f, grid.nodes_s, grid.nodes_theta)
        return np.broadcast_to(np.asarray(vals, dtype=float), shape).ravel()
    if level == 1:
        vals, shape = _on_grid(f, grid.edge_points_s, grid.nodes_theta)
        dofs_s = grid.edge_weights_s @ np.broadcast_to(np.asarray(vals[0], dtype=float), shape)
        vals, shape = _on_grid(f, grid.nodes_s, grid.edge_points_theta)
        dofs_t = (grid.edge_weights_theta @ np.broadcast_to(np.asarray(vals[1], dtype=float), shape).T).T
        return np.concatenate([np.ravel(dofs_s), np.ravel(dofs_t)])
    if level == 2:
        vals, shape = _on_grid(f, grid.edge_points_s, grid.edge_points_theta)
        inner = grid.edge_weights_s @ np.broadcast_to(np.asarray(vals, dtype=float), shape)
        return np.ravel((grid.edge_weights_theta @ inner.T).T)
    raise InvalidInputError(f"De Rham level must be 0, 1 or 2, got {level}")


def project_logical(grid: GeometricDofGrid, level: int, f: Callable) -> FieldCoeffs:
    return FieldCoeffs(level, grid.solve(level, logical_dofs(grid, level, f)))


def project_polar(grid: GeometricDofGrid, level: int, F: PolarMapping, g: Callable) -> FieldCoeffs:
    """Coefficients of the polar projection of the physical field g(x, y)."""
    return project_logical(grid, level, lambda s, t: pullback_eval(level, F, g, s, t))


def project_conforming(grid: GeometricDofGrid, level: int, kind, F: PolarMapping, g: Callable,
                       projector: Optional[ConformingProjector] = None) -> FieldCoeffs:
    if projector is None:
        projector = ConformingProjector(grid.sp, kind, F.variant)
    return projector.apply(level, project_polar(grid, level, F, g))
