import numpy as np
import pytest

from derham import (FieldCoeffs, build_derham, curl_matrix, eval_logical, eval_on_grid, eval_points, grad_matrix,
                    logical_gradient_grid, periodic_difference)
from errors import InvalidInputError


class TestSpaces:
    def test_dimensions(self, small_space):
        sp = small_space
        assert (sp.p, sp.n_s, sp.n_theta) == (2, 5, 8)
        assert (sp.dim0, sp.dim1_s, sp.dim1_theta, sp.dim1, sp.dim2) == (40, 32, 40, 72, 32)
        assert [sp.dim(level) for level in (0, 1, 2)] == [40, 72, 32]
        with pytest.raises(InvalidInputError):
            sp.dim(3)

    def test_indices(self, small_space):
        sp = small_space
        assert sp.index0(1, 9) == 9
        assert sp.index1_s(0, 3) == 3
        assert sp.index1_theta(0, 0) == sp.dim1_s
        assert sp.index2(3, 7) == 31

    def test_custom_breakpoints(self):
        sp = build_derham(2, 2, 8, length=2.0, breakpoints=[0.0, 0.8, 2.0])
        assert sp.length == 2.0
        np.testing.assert_allclose(sp.kv_s.breaks, [0.0, 0.8, 2.0])
        with pytest.raises(InvalidInputError):
            build_derham(2, 3, 8, breakpoints=[0.0, 1.0])

    def test_field_coeffs_checked(self, small_space):
        with pytest.raises(InvalidInputError):
            FieldCoeffs(0, np.zeros(3)).check(small_space)
        with pytest.raises(InvalidInputError):
            FieldCoeffs(4, np.zeros(3))
        vs, vt = FieldCoeffs(1, np.arange(72.0)).blocks(small_space)
        assert vs.shape == (4, 8) and vt.shape == (5, 8)
        assert vt[0, 0] == 32.0


class TestDifferentialOperators:
    def test_periodic_difference(self):
        d = periodic_difference(4).toarray()
        np.testing.assert_array_equal(d @ np.array([1.0, 2.0, 4.0, 8.0]), [1.0, 2.0, 4.0, -7.0])

    def test_complex_property(self, small_space, rng):
        G, C = grad_matrix(small_space), curl_matrix(small_space)
        assert (C @ G).nnz == 0
        x = rng.standard_normal(small_space.dim0)
        assert np.linalg.norm(C @ (G @ x)) < 1e-13 * np.linalg.norm(x)

    def test_gradient_kills_constants(self, small_space):
        G = grad_matrix(small_space)
        np.testing.assert_array_equal(G @ np.full(small_space.dim0, 3.0), 0.0)

    def test_gradient_matches_analytic_derivatives(self, small_space, rng):
        sp = small_space
        phi = FieldCoeffs(0, rng.standard_normal(sp.dim0))
        grad = FieldCoeffs(1, grad_matrix(sp) @ phi.data)
        s_pts = np.linspace(0.0, 1.0, 7)
        t_pts = np.linspace(0.0, 6.0, 9)
        vals = eval_on_grid(sp, grad, s_pts, t_pts)
        d_s, d_t = logical_gradient_grid(sp, phi, s_pts, t_pts)
        np.testing.assert_allclose(vals[0], d_s, atol=1e-12)
        np.testing.assert_allclose(vals[1], d_t, atol=1e-12)

    def test_curl_matches_finite_differences(self, rng):
        sp = build_derham(3, 3, 8)
        v = FieldCoeffs(1, rng.standard_normal(sp.dim1))
        f = FieldCoeffs(2, curl_matrix(sp) @ v.data)
        s = rng.uniform(0.1, 0.9, 20)
        t = rng.uniform(0.1, 6.0, 20)
        h = 1e-6
        dvt_ds = (eval_points(sp, v, s + h, t)[1] - eval_points(sp, v, s - h, t)[1]) / (2 * h)
        dvs_dt = (eval_points(sp, v, s, t + h)[0] - eval_points(sp, v, s, t - h)[0]) / (2 * h)
        np.testing.assert_allclose(eval_points(sp, f, s, t), dvt_ds - dvs_dt, atol=1e-5)


class TestEvaluation:
    def test_scalar_and_vector_points(self, small_space, rng):
        sp = small_space
        phi = FieldCoeffs(0, np.ones(sp.dim0))
        assert eval_logical(sp, phi, 0.3, 1.0) == pytest.approx(1.0)
        v = FieldCoeffs(1, rng.standard_normal(sp.dim1))
        value = eval_logical(sp, v, 0.3, 1.0)
        assert value.shape == (2,)
        np.testing.assert_allclose(value, eval_points(sp, v, [0.3], [1.0])[:, 0])

    def test_grid_matches_points(self, small_space, rng):
        sp = small_space
        f = FieldCoeffs(2, rng.standard_normal(sp.dim2))
        s_pts, t_pts = np.array([0.0, 0.4, 1.0]), np.array([0.2, 3.0])
        grid = eval_on_grid(sp, f, s_pts, t_pts)
        s_g, t_g = np.meshgrid(s_pts, t_pts, indexing="ij")
        np.testing.assert_allclose(grid.ravel(), eval_points(sp, f, s_g.ravel(), t_g.ravel()), atol=1e-13)
