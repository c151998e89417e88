"""Sparse operator plumbing shared by all modules.

SparseOperator wraps a scipy CSR matrix (duplicates summed, explicit zeros
removed) and may carry the two univariate factors of a Kronecker product.
KroneckerSolver inverts such products with two sparse LU factorizations.
"""
import logging
from typing import Iterator, Optional, Tuple, Union

import numpy as np
import scipy.sparse as spa
from scipy.sparse.linalg import splu

from errors import InvalidInputError, NodeAdmissibilityError

logger = logging.getLogger(__name__)


class SparseOperator:
    """Immutable sparse matrix with an optional Kronecker tag."""

    def __init__(self, matrix, kron_factors: Optional[Tuple["SparseOperator", "SparseOperator"]] = None,
                 drop_tol: float = 0.0):
        mat = spa.csr_matrix(matrix, dtype=float)
        mat.sum_duplicates()
        if drop_tol > 0.0 and mat.nnz:
            cutoff = drop_tol * np.abs(mat.data).max()
            mat.data[np.abs(mat.data) < cutoff] = 0.0
        mat.eliminate_zeros()
        mat.sort_indices()
        self._matrix = mat
        if kron_factors is not None:
            a, b = kron_factors
            if (a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]) != mat.shape:
                raise InvalidInputError(f"Kronecker factors {a.shape} x {b.shape} do not match {mat.shape}")
        self.kron_factors = kron_factors

    @classmethod
    def kron(cls, a: "SparseOperator", b: "SparseOperator") -> "SparseOperator":
        return cls(spa.kron(a.matrix, b.matrix, format="csr"), kron_factors=(a, b))

    @classmethod
    def identity(cls, n: int) -> "SparseOperator":
        return cls(spa.identity(n, format="csr"))

    @classmethod
    def from_triplets(cls, rows, cols, values, shape: Tuple[int, int]) -> "SparseOperator":
        return cls(spa.coo_matrix((values, (rows, cols)), shape=shape))

    @property
    def matrix(self) -> spa.csr_matrix:
        return self._matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self._matrix.shape

    @property
    def nnz(self) -> int:
        return self._matrix.nnz

    @property
    def T(self) -> "SparseOperator":
        factors = None
        if self.kron_factors is not None:
            factors = (self.kron_factors[0].T, self.kron_factors[1].T)
        return SparseOperator(self._matrix.T, kron_factors=factors)

    def __matmul__(self, other: Union["SparseOperator", np.ndarray]):
        if isinstance(other, SparseOperator):
            return SparseOperator(self._matrix @ other.matrix)
        return self._matrix @ np.asarray(other)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self._matrix + other.matrix)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self._matrix - other.matrix)

    def __rmul__(self, scalar: float) -> "SparseOperator":
        return SparseOperator(float(scalar) * self._matrix)

    def __neg__(self) -> "SparseOperator":
        return SparseOperator(-self._matrix)

    def dot(self, x: np.ndarray) -> np.ndarray:
        return self._matrix @ np.asarray(x)

    def toarray(self) -> np.ndarray:
        return self._matrix.toarray()

    def diagonal(self) -> np.ndarray:
        return self._matrix.diagonal()

    def asymmetry(self) -> float:
        """Largest entry of |A - A^T|."""
        diff = self._matrix - self._matrix.T
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def triplets(self) -> Iterator[Tuple[int, int, float]]:
        coo = self._matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            yield int(coo.row[k]), int(coo.col[k]), float(coo.data[k])

    def dump(self, path: str) -> None:
        """Write "row col value" lines with 17 significant digits."""
        with open(path, "w") as fh:
            fh.write(f"# {self.shape[0]} {self.shape[1]}\n")
            for r, c, v in self.triplets():
                fh.write(f"{r} {c} {v:.17g}\n")
        logger.info(f"Wrote {self.nnz} triplets to {path}")

    @classmethod
    def load(cls, path: str) -> "SparseOperator":
        rows, cols, vals = [], [], []
        shape = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    n_rows, n_cols = line[1:].split()
                    shape = (int(n_rows), int(n_cols))
                    continue
                r, c, v = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(float(v))
        if shape is None:
            raise InvalidInputError(f"Missing shape header in {path}")
        return cls.from_triplets(rows, cols, vals, shape)

    def __repr__(self) -> str:
        tag = " kron" if self.kron_factors is not None else ""
        return f"SparseOperator(shape={self.shape}, nnz={self.nnz}{tag})"


def _factorize(op: SparseOperator):
    if op.shape[0] != op.shape[1]:
        raise NodeAdmissibilityError(f"Collocation matrix is not square: {op.shape}")
    try:
        return splu(op.matrix.tocsc())
    except RuntimeError as e:
        raise NodeAdmissibilityError(f"Singular collocation matrix {op.shape}: {e}") from e


class KroneckerSolver:
    """Solves (A kron B) x = r through univariate LU factors of A and B."""

    def __init__(self, a: SparseOperator, b: SparseOperator):
        self.a = a
        self.b = b
        self._lu_a = _factorize(a)
        self._lu_b = _factorize(b)

    @classmethod
    def from_operator(cls, op: SparseOperator) -> "KroneckerSolver":
        if op.kron_factors is None:
            raise InvalidInputError("Operator carries no Kronecker factorization")
        return cls(*op.kron_factors)

    @property
    def shape(self) -> Tuple[int, int]:
        n = self.a.shape[0] * self.b.shape[0]
        return n, n

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n1, n2 = self.a.shape[0], self.b.shape[0]
        r = np.asarray(rhs, dtype=float).reshape(n1, n2)
        y = self._lu_a.solve(r)
        x = self._lu_b.solve(np.ascontiguousarray(y.T)).T
        return np.ascontiguousarray(x).ravel()
