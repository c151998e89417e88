import logging

import numpy as np
import pytest

from conforming import (ConformingProjector, ConformityKind, dirichlet_matrix, is_conforming, p_block,
                        pole_parameters, pu0_apply, pu0_matrix, pu1_apply, pu1_matrix, pv0_apply, pv0_matrix,
                        pv1_apply, pv1_matrix, pv2_apply, pv2_matrix)
from derham import FieldCoeffs, build_derham, curl_matrix, grad_matrix
from errors import InvalidInputError
from splines import regular_angles

KINDS = [ConformityKind.V, ConformityKind.U]


def random_coeffs(sp, level, rng):
    return rng.standard_normal(sp.dim(level))


class TestConformityKind:
    @pytest.mark.parametrize("alias,kind", [("c0", ConformityKind.V), ("V", ConformityKind.V),
                                            ("C1", ConformityKind.U), ("u", ConformityKind.U)])
    def test_parse(self, alias, kind):
        assert ConformityKind.parse(alias) is kind

    def test_unknown(self):
        with pytest.raises(InvalidInputError):
            ConformityKind.parse("c2")


class TestPBlock:
    def test_rank_two_projector(self):
        p = p_block(8)
        np.testing.assert_allclose(p @ p, p, atol=1e-13)
        np.testing.assert_allclose(p, p.T, atol=0)
        assert np.linalg.matrix_rank(p) == 2

    def test_fixes_first_harmonics(self):
        th = regular_angles(12)
        p = p_block(12)
        np.testing.assert_allclose(p @ np.cos(th), np.cos(th), atol=1e-13)
        np.testing.assert_allclose(p @ np.sin(th), np.sin(th), atol=1e-13)
        np.testing.assert_allclose(p @ np.ones(12), 0.0, atol=1e-13)


class TestProjectors:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_idempotent_and_matrix_agrees(self, small_space, kind, level, rng):
        proj = ConformingProjector(small_space, kind)
        x = random_coeffs(small_space, level, rng)
        px = proj.apply(level, x)
        np.testing.assert_allclose(proj.apply(level, px), px, atol=1e-13)
        np.testing.assert_allclose(proj.matrix(level) @ x, px, atol=1e-14)
        assert proj.is_conforming(level, px)

    def test_apply_leaves_input_untouched(self, small_space, rng):
        x = random_coeffs(small_space, 0, rng)
        before = x.copy()
        pu0_apply(small_space, x)
        np.testing.assert_array_equal(x, before)

    def test_field_coeffs_round_trip(self, small_space, rng):
        proj = ConformingProjector(small_space, "c1")
        out = proj.apply(1, FieldCoeffs(1, random_coeffs(small_space, 1, rng)))
        assert isinstance(out, FieldCoeffs) and out.level == 1

    def test_standalone_forms(self, small_space, rng):
        sp = small_space
        pairs = [(pv0_apply, pv0_matrix, 0), (pu0_apply, pu0_matrix, 0), (pv1_apply, pv1_matrix, 1),
                 (pu1_apply, pu1_matrix, 1), (pv2_apply, pv2_matrix, 2)]
        for apply_fn, matrix_fn, level in pairs:
            x = random_coeffs(sp, level, rng)
            np.testing.assert_allclose(matrix_fn(sp) @ x, apply_fn(sp, x), atol=1e-14)

    def test_ring_rules(self, small_space, rng):
        sp = small_space
        n = sp.n_theta
        x = random_coeffs(sp, 0, rng)
        c = pv0_apply(sp, x).reshape(sp.n_s, n)
        np.testing.assert_allclose(c[0], x[:n].mean())
        np.testing.assert_array_equal(c[1:], x.reshape(sp.n_s, n)[1:])

        f = random_coeffs(sp, 2, rng)
        g = pv2_apply(sp, f).reshape(sp.n_s - 1, n)
        np.testing.assert_array_equal(g[0], 0.0)
        np.testing.assert_allclose(g[1], f[:n] + f[n:2 * n])

    def test_ring_one_harmonic_is_fixed(self):
        sp = build_derham(2, 3, 4)
        phi = np.zeros(sp.dim0)
        phi[4:8] = [1.0, 0.0, -1.0, 0.0]
        out = pu0_apply(sp, phi)
        np.testing.assert_allclose(out[4:8], [1.0, 0.0, -1.0, 0.0], atol=1e-15)
        params = pole_parameters(0, out, sp)
        assert params.gamma1 == pytest.approx(1.0)
        assert params.gamma2 == pytest.approx(0.0, abs=1e-15)

    def test_constant_ring_one_collapses_to_pole_value(self, small_space):
        sp = small_space
        phi = np.zeros(sp.dim0)
        phi[:8] = 2.0
        phi[8:16] = 5.0
        out = pu0_apply(sp, phi)
        np.testing.assert_allclose(out[8:16], 2.0, atol=1e-14)

    def test_level_one_pole_vector(self, small_space):
        sp = small_space
        th = regular_angles(sp.n_theta)
        v = np.zeros(sp.dim1)
        v[:8] = np.cos(th)
        start = sp.dim1_s + 8
        v[start:start + 8] = np.roll(np.cos(th), -1) - np.cos(th)
        ok, params = is_conforming("c1", 1, v, sp)
        assert ok
        assert params.eta1 == pytest.approx(1.0)
        assert params.eta2 == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(pu1_apply(sp, v), v, atol=1e-14)

    def test_constant_ring_zero_moves_to_ring_one(self, small_space):
        sp = small_space
        v = np.zeros(sp.dim1)
        v[:8] = 3.0
        out = pu1_apply(sp, v)
        np.testing.assert_allclose(out[:8], 0.0, atol=1e-14)
        np.testing.assert_allclose(out[8:16], 3.0, atol=1e-14)

    def test_analytical_map_locks_ring_one(self, small_space, rng, caplog):
        with caplog.at_level(logging.WARNING):
            proj = ConformingProjector(small_space, "c1", mapping_variant="analytical")
        assert "locked" in caplog.text
        phi = proj.apply(0, random_coeffs(small_space, 0, rng)).reshape(small_space.n_s, -1)
        np.testing.assert_allclose(phi[1], phi[0, 0], atol=1e-14)
        v = proj.apply(1, random_coeffs(small_space, 1, rng))
        np.testing.assert_array_equal(v[:small_space.n_theta], 0.0)
        assert proj.is_conforming(1, v)
        assert not is_conforming("c1", 1, v + 1.0, small_space, mapping_variant="analytical")[0]

    def test_unknown_mapping_variant(self, small_space):
        with pytest.raises(InvalidInputError):
            ConformingProjector(small_space, "c1", mapping_variant="conformal")


class TestCommutation:
    @pytest.mark.parametrize("kind", KINDS)
    def test_gradient_of_conforming_is_conforming(self, small_space, kind, rng):
        proj = ConformingProjector(small_space, kind)
        G = grad_matrix(small_space)
        gphi = G @ (proj.matrix(0) @ random_coeffs(small_space, 0, rng))
        np.testing.assert_allclose(proj.matrix(1) @ gphi, gphi, atol=1e-13)
        assert proj.is_conforming(1, gphi)

    @pytest.mark.parametrize("kind", KINDS)
    def test_curl_of_conforming_is_conforming(self, small_space, kind, rng):
        proj = ConformingProjector(small_space, kind)
        C = curl_matrix(small_space)
        cv = C @ (proj.matrix(1) @ random_coeffs(small_space, 1, rng))
        np.testing.assert_allclose(proj.matrix(2) @ cv, cv, atol=1e-13)


class TestDirichlet:
    def test_outer_rings_zeroed(self, small_space, rng):
        sp = small_space
        proj = ConformingProjector(sp, "c1", dirichlet=True)
        phi = proj.apply(0, random_coeffs(sp, 0, rng)).reshape(sp.n_s, sp.n_theta)
        np.testing.assert_array_equal(phi[-1], 0.0)
        v = proj.apply(1, random_coeffs(sp, 1, rng))
        np.testing.assert_array_equal(v[sp.dim1_s:].reshape(sp.n_s, sp.n_theta)[-1], 0.0)
        x = random_coeffs(sp, 1, rng)
        np.testing.assert_allclose(proj.matrix(1) @ x, proj.apply(1, x), atol=1e-14)

    def test_level_two_untouched(self, small_space):
        assert dirichlet_matrix(small_space, 2).nnz == small_space.dim2


class TestErrors:
    def test_too_few_radial_functions(self):
        sp = build_derham(1, 1, 8)
        with pytest.raises(InvalidInputError):
            ConformingProjector(sp, "c0")

    def test_c1_needs_quadratic_splines(self):
        sp = build_derham(1, 4, 8)
        with pytest.raises(InvalidInputError):
            ConformingProjector(sp, "c1")
        ConformingProjector(sp, "c0")

    def test_wrong_length(self, small_space):
        proj = ConformingProjector(small_space, "c0")
        with pytest.raises(InvalidInputError):
            proj.apply(0, np.zeros(3))
        with pytest.raises(InvalidInputError):
            proj.matrix(3)

    def test_non_positive_tolerance(self, small_space):
        with pytest.raises(InvalidInputError):
            is_conforming("c0", 0, np.zeros(small_space.dim0), small_space, tol=0.0)

    def test_angular_condition_warning(self, caplog):
        sp = build_derham(2, 3, 6)
        with caplog.at_level(logging.WARNING):
            ConformingProjector(sp, "c1")
        assert "angular grid condition" in caplog.text
