import numpy as np
import pytest

from errors import GeometryError, InvalidInputError, PoleSingularityError
from geometry import (AnalyticalPolarMapping, SplinePolarMapping, build_shifted_disk_map, eval_map, jacobian,
                      load_mapping, pole_limits, pullback_eval, pushforward_eval, save_mapping,
                      verify_first_order_singularity)
from splines import TWO_PI


class TestAnalyticalMapping:
    def test_evaluate_and_jacobian(self, unit_disk):
        np.testing.assert_allclose(eval_map(unit_disk, 0.5, np.pi / 2), [0.0, 0.5], atol=1e-15)
        jac, det = jacobian(unit_disk, 0.5, 0.0)
        np.testing.assert_allclose(jac, [[1.0, 0.0], [0.0, 0.5]], atol=1e-15)
        assert det == pytest.approx(0.5)

    def test_pole(self):
        F = AnalyticalPolarMapping(x0=(0.3, -0.1), length=2.0)
        x, y = F.evaluate(np.zeros(5), np.linspace(0, 6, 5))
        np.testing.assert_allclose(x, 0.3)
        np.testing.assert_allclose(y, -0.1)

    def test_inverse(self, unit_disk, rng):
        s = rng.uniform(0.05, 1.0, 10)
        t = rng.uniform(0.0, TWO_PI, 10)
        x, y = unit_disk.evaluate(s, t)
        s2, t2 = unit_disk.inverse(x, y)
        np.testing.assert_allclose(s2, s, atol=1e-13)
        np.testing.assert_allclose(np.cos(t2 - t), 1.0, atol=1e-12)
        s_out, _ = unit_disk.inverse([1.5], [0.0])
        assert np.isnan(s_out[0])

    def test_singularity_profile(self, unit_disk):
        profile = verify_first_order_singularity(unit_disk)
        assert profile.passed
        np.testing.assert_allclose(profile.D, 1.0, atol=1e-8)
        assert profile.closed_form_error is None


class TestShiftedDiskMap:
    def test_pole_and_rings(self, disk_map):
        x, y = disk_map.evaluate(np.zeros(4), np.linspace(0.0, 5.0, 4))
        np.testing.assert_allclose(x, 0.2, atol=1e-15)
        np.testing.assert_allclose(y, 0.0, atol=1e-15)
        assert disk_map.ring_deviation <= 1e-12
        assert disk_map.rho1 > 0
        assert disk_map.variant == "spline"

    def test_boundary_is_close_to_unit_circle(self):
        F = build_shifted_disk_map(2, 4, 32, pole_shift=0.2)
        theta = np.linspace(0.0, TWO_PI, 50)
        x, y = F.evaluate(np.ones_like(theta), theta)
        np.testing.assert_allclose(np.hypot(x, y), 1.0, atol=1e-2)

    def test_pole_shift_range(self):
        with pytest.raises(InvalidInputError):
            build_shifted_disk_map(2, 4, 8, pole_shift=0.6)

    def test_jacobian_matches_finite_differences(self, disk_map, rng):
        s = rng.uniform(0.1, 0.9, 8)
        t = rng.uniform(0.0, TWO_PI, 8)
        jac, det = disk_map.jacobian(s, t)
        h = 1e-6
        xp, yp = disk_map.evaluate(s + h, t)
        xm, ym = disk_map.evaluate(s - h, t)
        np.testing.assert_allclose(jac[:, 0, 0], (xp - xm) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(jac[:, 1, 0], (yp - ym) / (2 * h), atol=1e-6)
        xp, yp = disk_map.evaluate(s, t + h)
        xm, ym = disk_map.evaluate(s, t - h)
        np.testing.assert_allclose(jac[:, 0, 1], (xp - xm) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(jac[:, 1, 1], (yp - ym) / (2 * h), atol=1e-6)
        assert np.all(det > 0)

    def test_grid_variants_match(self, disk_map):
        s_pts, t_pts = np.array([0.0, 0.3, 1.0]), np.array([0.1, 2.0, 4.0])
        xg, yg = disk_map.evaluate_grid(s_pts, t_pts)
        jg, dg = disk_map.jacobian_grid(s_pts, t_pts)
        s_g, t_g = np.meshgrid(s_pts, t_pts, indexing="ij")
        x, y = disk_map.evaluate(s_g, t_g)
        j, d = disk_map.jacobian(s_g, t_g)
        np.testing.assert_allclose(xg, x, atol=1e-14)
        np.testing.assert_allclose(yg, y, atol=1e-14)
        np.testing.assert_allclose(jg, j, atol=1e-13)
        np.testing.assert_allclose(dg, d, atol=1e-13)

    def test_inverse_round_trip(self, disk_map, rng):
        s = rng.uniform(0.05, 0.95, 20)
        t = rng.uniform(0.0, TWO_PI, 20)
        x, y = disk_map.evaluate(s, t)
        s2, t2 = disk_map.inverse(x, y)
        x2, y2 = disk_map.evaluate(s2, t2)
        np.testing.assert_allclose(x2, x, atol=1e-9)
        np.testing.assert_allclose(y2, y, atol=1e-9)
        s_out, t_out = disk_map.inverse([3.0], [3.0])
        assert np.isnan(s_out[0]) and np.isnan(t_out[0])

    def test_singularity_verified(self, disk_map):
        profile = verify_first_order_singularity(disk_map)
        assert profile.passed
        assert profile.D.min() > 0
        assert profile.D_star > 0
        assert profile.closed_form_error < 1e-8

    def test_pole_limits_match_closed_form(self, disk_map):
        theta = np.linspace(0.0, TWO_PI, 16, endpoint=False)
        lim1, lim2 = pole_limits(disk_map, np.array([1e-3, 2e-3, 4e-3]), theta)
        C, S, dC, dS = disk_map.pole_profile(theta)
        np.testing.assert_allclose(lim1[:, 0], C, atol=1e-9)
        np.testing.assert_allclose(lim1[:, 1], S, atol=1e-9)
        np.testing.assert_allclose(lim2[:, 0], dC, atol=1e-9)
        np.testing.assert_allclose(lim2[:, 1], dS, atol=1e-9)

    def test_reflected_map_fails_verification(self, disk_map):
        pts = disk_map.control_points * np.array([1.0, -1.0])
        reflected = SplinePolarMapping(disk_map.space, pts, x0=disk_map.x0, strict=False)
        profile = verify_first_order_singularity(reflected)
        assert not profile.passed
        assert profile.D.max() < 0

    def test_strict_ring_form(self, disk_map):
        pts = disk_map.control_points.copy()
        pts[1, 0] += 0.01
        with pytest.raises(GeometryError):
            SplinePolarMapping(disk_map.space, pts, x0=disk_map.x0)
        relaxed = SplinePolarMapping(disk_map.space, pts, x0=disk_map.x0, strict=False)
        assert relaxed.ring_deviation > 1e-3

    def test_unsnapped_map_is_not_polar(self):
        F = build_shifted_disk_map(2, 4, 8, snap_pole_rings=False)
        assert F.ring_deviation > 0


class TestMappingFiles:
    def test_save_and_load(self, disk_map, tmp_path):
        path = tmp_path / "map.txt"
        save_mapping(str(path), disk_map)
        header = path.read_text().splitlines()[0].split()
        assert header[:3] == ["2", "4", "8"]
        loaded = load_mapping(str(path))
        np.testing.assert_array_equal(loaded.control_points, disk_map.control_points)
        np.testing.assert_array_equal(loaded.x0, disk_map.x0)
        x, y = loaded.evaluate([0.5], [1.0])
        x0, y0 = disk_map.evaluate([0.5], [1.0])
        np.testing.assert_allclose([x[0], y[0]], [x0[0], y0[0]], atol=1e-15)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("2 four 8\n")
        with pytest.raises(GeometryError):
            load_mapping(str(path))
        empty = tmp_path / "empty.txt"
        empty.write_text("")
        with pytest.raises(GeometryError):
            load_mapping(str(empty))


class TestFormTransforms:
    def test_pushforward_rejects_pole(self, disk_map):
        with pytest.raises(PoleSingularityError):
            pushforward_eval(1, disk_map, np.ones((2, 1)), [0.0], [1.0])
        with pytest.raises(PoleSingularityError):
            pushforward_eval(2, disk_map, np.ones(1), [0.0], [1.0])
        assert pushforward_eval(0, disk_map, 2.5, 0.0, 1.0) == 2.5

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_pullback_then_pushforward(self, disk_map, level, rng):
        s = rng.uniform(0.1, 1.0, 6)
        t = rng.uniform(0.0, TWO_PI, 6)
        fields = {
            0: lambda x, y: x * y + 1.0,
            1: lambda x, y: np.array([x ** 2, -y]),
            2: lambda x, y: np.sin(x) + y,
        }
        g = fields[level]
        logical = pullback_eval(level, disk_map, g, s, t)
        physical = pushforward_eval(level, disk_map, logical, s, t)
        x, y = disk_map.evaluate(s, t)
        np.testing.assert_allclose(physical, g(x, y), atol=1e-12)
