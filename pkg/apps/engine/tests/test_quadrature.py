import math

import numpy as np
import pytest

from mixturecraft.errors import InvalidParameter, QuadratureBudget
from mixturecraft.quadrature import (
    composite_rule,
    gauss_legendre,
    integrate_box,
    integrate_interval,
    interval_edges,
    tensor_rule,
)


class TestFixedRules:
    """Gauss-Legendre building blocks"""

    def test_exact_for_degree_fifteen(self):
        nodes, weights = gauss_legendre(8)
        assert np.dot(weights, nodes**14) == pytest.approx(2.0 / 15.0, abs=1e-14)
        assert np.dot(weights, nodes**15) == pytest.approx(0.0, abs=1e-14)

    def test_rule_is_read_only(self):
        nodes, _ = gauss_legendre(4)
        with pytest.raises(ValueError):
            nodes[0] = 0.0

    def test_order_must_be_positive(self):
        with pytest.raises(InvalidParameter):
            gauss_legendre(0)

    def test_composite_rule_integrates_per_row(self):
        edges = np.array([[0.0, 1.0, 2.0], [-1.0, -1.0, 3.0]])
        nodes, weights = composite_rule(edges, 3, 4)
        assert nodes.shape == weights.shape == (2, 2 * 3 * 4)
        np.testing.assert_allclose(np.sum(weights, axis=1), [2.0, 4.0], atol=1e-14)
        np.testing.assert_allclose(np.sum(weights * nodes**2, axis=1), [8.0 / 3.0, 28.0 / 3.0], atol=1e-13)

    def test_interval_edges_keep_interior_breakpoints(self):
        edges = interval_edges(np.array([-2.0, 0.5]), np.array([2.0, 1.0]), np.array([-1.0, 0.0, 3.0]))
        np.testing.assert_array_equal(edges[0], [-2.0, -1.0, 0.0, 2.0])
        assert edges[1, 0] == 0.5 and edges[1, -1] == 1.0
        assert np.all(np.diff(edges, axis=1) >= 0)

    def test_tensor_rule_area(self):
        nodes, weights = tensor_rule([0.0, -1.0], [2.0, 1.0], [(1.0,), ()], 2, 3)
        assert nodes.shape[1] == 2
        assert np.sum(weights) == pytest.approx(4.0)


class TestAdaptiveIntegration:
    """QUADPACK and tensor refinement"""

    def test_interval_gaussian_mass(self):
        value = integrate_interval(lambda y: math.exp(-0.5 * y * y) / math.sqrt(2 * math.pi), -12.0, 12.0)
        assert value == pytest.approx(1.0, abs=1e-9)

    def test_interval_kinks(self):
        value = integrate_interval(abs, -1.0, 3.0, points=[0.0])
        assert value == pytest.approx(5.0, abs=1e-12)

    def test_empty_interval(self):
        assert integrate_interval(abs, 1.0, 1.0) == 0.0

    def test_many_breakpoints_are_grouped(self):
        points = np.linspace(0.0, 10.0, 351)[1:-1]
        value = integrate_interval(lambda y: y - math.floor(y * 35) / 35, 0.0, 10.0, points=points)
        assert value == pytest.approx(10.0 / 70.0, abs=1e-9)

    def test_box_two_dimensional(self):
        def density(pts):
            return np.exp(-0.5 * np.sum(pts**2, axis=1)) / (2 * math.pi)

        value = integrate_box(density, [-9.0, -9.0], [9.0, 9.0], abs_tol=1e-10)
        assert value == pytest.approx(1.0, abs=1e-8)

    def test_box_unsettled_raises(self):
        """A disk indicator cannot reach 1e-12 with axis-aligned panels"""

        def disk(pts):
            return (np.sum(pts**2, axis=1) <= 0.7).astype(float)

        with pytest.raises(QuadratureBudget):
            integrate_box(disk, [-1.0, -1.0], [1.0, 1.0], abs_tol=1e-12)

    def test_box_loose_tolerance_accepts_disk(self):
        def disk(pts):
            return (np.sum(pts**2, axis=1) <= 0.7).astype(float)

        value = integrate_box(disk, [-1.0, -1.0], [1.0, 1.0], abs_tol=1e-2)
        assert value == pytest.approx(math.pi * 0.7, abs=5e-2)

    def test_box_rejects_three_dimensions(self):
        with pytest.raises(InvalidParameter):
            integrate_box(lambda pts: np.ones(len(pts)), [0.0] * 3, [1.0] * 3)
