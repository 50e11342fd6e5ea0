import math

import numpy as np
import pytest

from dstap.radar.geometry import (ArrayGeometry, CartesianPoint, RangeGrid, cell_center, ground_depression,
                                  make_angle_grid, polar_to_cartesian, steering_matrix, steering_vector)
from dstap.utils.errors import ConfigurationError


def _polar_oracle(r, theta, phi):
    # horizontal projection first, then split it along North/East
    t, p = math.radians(theta), math.radians(phi)
    horiz = r * math.cos(p)
    return horiz * math.cos(t), horiz * math.sin(t), r * math.sin(p)


class TestPolarToCartesian:

    def test_on_axis(self):
        assert polar_to_cartesian(1000, 0, 0) == CartesianPoint(1000.0, 0.0, 0.0)

    def test_quarter_turn(self):
        pt = polar_to_cartesian(1000, 90, 0)
        assert pt.x == pytest.approx(0.0, abs=1e-9)
        assert pt.y == pytest.approx(1000.0, rel=1e-12)
        assert pt.z == 0.0

    def test_reference_point_matches_oracle(self):
        pt = polar_to_cartesian(14336, 25, -4)
        for got, want in zip(pt.as_array(), _polar_oracle(14336, 25, -4)):
            assert got == pytest.approx(want, rel=1e-12)

    def test_norm_equals_range(self):
        rng = np.random.default_rng(0)
        for r, t, p in zip(rng.uniform(0, 2e4, 200), rng.uniform(-180, 180, 200), rng.uniform(-90, 90, 200)):
            assert np.linalg.norm(polar_to_cartesian(r, t, p).as_array()) == pytest.approx(r, rel=1e-12, abs=1e-12)

    def test_negative_range_rejected(self):
        with pytest.raises(ConfigurationError):
            polar_to_cartesian(-1.0, 0, 0)


class TestAngleGrid:

    def test_reference_counts(self):
        g = make_angle_grid((20.0, 30.0), (-4.1, -3.9), 0.4, 0.01)
        assert (g.n_theta, g.n_phi) == (26, 21)

    def test_degenerate_span(self):
        g = make_angle_grid((0.0, 0.0), (0.0, 0.0), 1.0, 1.0)
        assert g.shape == (1, 1)

    def test_non_divisible_span_names_axis(self):
        with pytest.raises(ConfigurationError, match='azimuth'):
            make_angle_grid((20.0, 30.0), (-4.1, -3.9), 0.3, 0.01)
        with pytest.raises(ConfigurationError, match='elevation'):
            make_angle_grid((20.0, 30.0), (-4.1, -3.9), 0.4, 0.03)

    def test_index_round_trip(self):
        g = make_angle_grid((20.0, 30.0), (-4.1, -3.9), 0.4, 0.01)
        for i in range(g.n_theta):
            for j in range(g.n_phi):
                assert g.index_of(g.theta(i), g.phi(j)) == (i, j)
                assert g.theta(i) == g.theta_min + i * g.dtheta
                assert g.phi(j) == g.phi_min + j * g.dphi


class TestRangeGrid:

    def test_bins(self):
        rg = RangeGrid(14260.0, 30.0, 5)
        assert rg.bin_edges(0) == (14260.0, 14290.0)
        assert rg.bin_center(2) == 14335.0
        assert rg.bin_of(14335.0) == 2

    def test_out_of_range_bin(self):
        with pytest.raises(IndexError):
            RangeGrid(0.0, 2.0, 1).bin_center(1)

    def test_ground_depression_reference(self):
        # -4 deg at 1 km height meets the ground near the middle of the reference swath
        phi = ground_depression(RangeGrid(14260.0, 30.0, 5), 1000.0)
        assert np.all((phi > -4.02) & (phi < -3.98))


class TestSteeringVector:

    def test_broadside_all_ones(self):
        a = steering_vector(ArrayGeometry(16, 0.015, 0.03), 0.0, -4.0)
        np.testing.assert_allclose(a, np.ones(16), atol=0)

    def test_half_wavelength_endfire(self):
        a = steering_vector(ArrayGeometry(2, 0.015, 0.03), 90.0, 0.0)
        np.testing.assert_allclose(a, [1.0, -1.0], atol=1e-12)

    def test_matches_elementwise_oracle(self):
        a = steering_vector(ArrayGeometry(16, 0.015, 0.03), 25.0, -4.0)
        for n in range(16):
            want = complex(math.cos(math.pi * n * math.sin(math.radians(25)) * math.cos(math.radians(4))),
                           math.sin(math.pi * n * math.sin(math.radians(25)) * math.cos(math.radians(4))))
            assert abs(a[n] - want) < 1e-12

    def test_unit_modulus_and_conjugate_symmetry(self):
        array = ArrayGeometry(16, 0.015, 0.03)
        for theta in np.linspace(-80, 80, 17):
            a = steering_vector(array, theta, -4.0)
            np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)
            np.testing.assert_allclose(steering_vector(array, -theta, -4.0), a.conj(), atol=1e-12)

    def test_steering_matrix_is_theta_major(self):
        array = ArrayGeometry(16, 0.015, 0.03)
        g = make_angle_grid((20.0, 30.0), (-4.1, -3.9), 0.4, 0.01)
        A = steering_matrix(array, g)
        assert A.shape == (16, 26 * 21)
        np.testing.assert_allclose(A[:, 3 * 21 + 5], steering_vector(array, g.theta(3), g.phi(5)), atol=1e-12)

    def test_invalid_array(self):
        with pytest.raises(ConfigurationError):
            ArrayGeometry(0, 0.015, 0.03)

    def test_from_carrier(self):
        array = ArrayGeometry.from_carrier(16, 0.015, 1e10)
        assert array.wavelength == pytest.approx(0.0299792458)
        assert array.spacing_wavelengths == pytest.approx(0.5, rel=1e-3)


class TestCellCenter:

    def test_trivial_cell(self):
        g = make_angle_grid((0.0, 0.0), (0.0, 0.0), 1.0, 1.0)
        assert cell_center(RangeGrid(0.0, 2.0, 1), g, 0, 0, 0) == CartesianPoint(1.0, 0.0, 0.0)

    def test_reference_cell_composes_primitives(self, reference_scenario):
        rg, g = reference_scenario.range_grid, reference_scenario.angle_grid
        assert cell_center(rg, g, 2, 0, 0) == polar_to_cartesian(rg.bin_center(2), g.theta(0), g.phi(0))

    def test_out_of_range_index(self, reference_scenario):
        with pytest.raises(IndexError):
            cell_center(reference_scenario.range_grid, reference_scenario.angle_grid, 0, 26, 0)

    def test_center_close_to_corner_average(self, reference_scenario):
        rg, g = reference_scenario.range_grid, reference_scenario.angle_grid
        for b, i, j in [(0, 0, 0), (2, 13, 10), (4, 24, 19)]:
            lo, hi = rg.bin_edges(b)
            corners = [polar_to_cartesian(r, g.theta(i) + s * g.dtheta / 2, g.phi(j) + u * g.dphi / 2).as_array()
                       for r in (lo, hi) for s in (-1, 1) for u in (-1, 1)]
            center = cell_center(rg, g, b, i, j).as_array()
            assert np.linalg.norm(center - np.mean(corners, axis=0)) < rg.dr
