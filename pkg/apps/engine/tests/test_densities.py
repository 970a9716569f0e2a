import math

import numpy as np
import pytest

from mixturecraft.densities import (
    BUILTINS,
    ContinuityClass,
    builtin_density,
    density_from_ref,
    ess_sup_on_ball,
    eval_density,
    parse_density,
    translate_density,
)
from mixturecraft.errors import DimensionError, InvalidParameter, ParseError, UnknownDensity, ZeroOnBall
from mixturecraft.quadrature import integrate_box

ONE_D = [
    ("gaussian", [0.0, 1.0]),
    ("gaussian", [1.5, 0.4]),
    ("laplace", [0.0, 1.0]),
    ("laplace", [-1.0, 0.5]),
    ("triangular", [-1.0, 0.0, 1.0]),
    ("triangular", [0.0, 0.3, 2.0]),
    ("epanechnikov", [0.0, 1.0]),
    ("uniform", [0.0, 1.0]),
    ("gmm", [0.5, -1.0, 0.5, 0.5, 1.0, 0.5]),
]
TWO_D = [("gaussian2d", [1.0]), ("gaussian2d", [0.5, -0.5, 0.7]), ("triangular2d", [-1.0, 0.0, 1.0])]


class TestBuiltinValues:
    """Point values of the builtin families"""

    def test_standard_normal(self, std_normal):
        """Standard normal at 0 and 1"""
        assert eval_density(std_normal, [0.0]) == pytest.approx(0.3989422804, abs=1e-10)
        assert eval_density(std_normal, [1.0]) == pytest.approx(0.2419707245, abs=1e-10)

    def test_triangle_peak_and_feet(self, unit_triangle):
        """Triangular density is 1 at its mode and 0 at the ends"""
        assert eval_density(unit_triangle, [0.0]) == pytest.approx(1.0)
        assert eval_density(unit_triangle, [1.0]) == 0.0
        assert eval_density(unit_triangle, [-1.0]) == 0.0

    def test_uniform_metadata(self):
        """Uniform density is essentially bounded, not continuous"""
        d = builtin_density("uniform", [0.0, 1.0])
        assert d.continuity_class is ContinuityClass.ESSENTIALLY_BOUNDED
        assert d.ess_bound == 1.0
        assert not d.is_continuous

    def test_laplace_peak(self, std_laplace):
        assert eval_density(std_laplace, [0.0]) == pytest.approx(0.5)

    def test_gaussian2d_peak(self):
        d = builtin_density("gaussian2d", [1.0])
        assert eval_density(d, [0.0, 0.0]) == pytest.approx(1.0 / (2.0 * math.pi))

    def test_vectorized_matches_pointwise(self, std_laplace, rng):
        """Batch evaluation agrees with single-point evaluation"""
        xs = rng.uniform(-5, 5, size=50)
        batch = std_laplace.pdf(xs)
        single = [eval_density(std_laplace, [x]) for x in xs]
        np.testing.assert_allclose(batch, single, rtol=0, atol=1e-15)

    def test_gaussian_tail(self, std_normal):
        assert std_normal.tail_mass(1.96) == pytest.approx(0.04999579, abs=1e-7)
        assert std_normal.tail_mass(0.0) == 1.0


class TestBuiltinErrors:
    """Parameter validation"""

    def test_unknown_family(self):
        with pytest.raises(UnknownDensity):
            builtin_density("cauchy", [0.0, 1.0])

    def test_non_positive_sigma(self):
        with pytest.raises(InvalidParameter):
            builtin_density("gaussian", [0.0, 0.0])

    def test_uniform_needs_ordered_bounds(self):
        with pytest.raises(InvalidParameter):
            builtin_density("uniform", [1.0, 1.0])

    def test_wrong_parameter_count(self):
        with pytest.raises(InvalidParameter):
            builtin_density("laplace", [0.0])

    def test_gmm_weights_must_sum_to_one(self):
        with pytest.raises(InvalidParameter):
            builtin_density("gmm", [0.6, 0.0, 1.0, 0.6, 1.0, 1.0])

    def test_dimension_mismatch(self):
        d = builtin_density("gaussian2d", [1.0])
        with pytest.raises(DimensionError):
            eval_density(d, [0.0])


class TestBuiltinInvariants:
    """Normalization, positivity, Lipschitz and support metadata"""

    @pytest.mark.parametrize("family,params", ONE_D + TWO_D)
    def test_integrates_to_one(self, family, params):
        d = builtin_density(family, params)
        reach = d.reach
        total = integrate_box(d.pdf, [-reach] * d.dim, [reach] * d.dim, d.breakpoints, abs_tol=1e-10)
        assert total == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("family,params", ONE_D + TWO_D)
    def test_nonnegative_and_bounded(self, family, params, rng):
        d = builtin_density(family, params)
        pts = rng.uniform(-d.reach - 1.0, d.reach + 1.0, size=(100_000, d.dim))
        values = d.pdf(pts)
        assert np.all(values >= 0.0)
        assert np.all(values <= d.ess_bound + 1e-12)

    @pytest.mark.parametrize("family,params", [fp for fp in ONE_D + TWO_D if builtin_density(*fp).lipschitz is not None])
    def test_lipschitz_metadata_holds(self, family, params, rng):
        d = builtin_density(family, params)
        x = rng.uniform(-d.reach, d.reach, size=(10_000, d.dim))
        y = x + rng.normal(scale=0.05, size=x.shape)
        gap = np.abs(d.pdf(x) - d.pdf(y))
        assert np.all(gap <= d.lipschitz * np.linalg.norm(x - y, axis=1) + 1e-12)

    @pytest.mark.parametrize("family,params", [fp for fp in ONE_D + TWO_D if builtin_density(*fp).support_radius is not None])
    def test_vanishes_outside_support(self, family, params, rng):
        d = builtin_density(family, params)
        directions = rng.normal(size=(1000, d.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        pts = directions * (d.support_radius + rng.uniform(1e-9, 3.0, size=(1000, 1)))
        assert np.all(d.pdf(pts) == 0.0)

    @pytest.mark.parametrize("family,params", TWO_D)
    def test_planar_builtins_are_products_of_factors(self, family, params, rng):
        d = builtin_density(family, params)
        pts = rng.uniform(-2, 2, size=(200, 2))
        first, second = d.factors
        np.testing.assert_allclose(d.pdf(pts), first.pdf(pts[:, 0]) * second.pdf(pts[:, 1]), rtol=1e-12, atol=1e-15)

    def test_epanechnikov_has_no_lipschitz_metadata(self):
        d = builtin_density("epanechnikov", [0.0, 1.0])
        assert d.lipschitz is None
        assert d.is_continuous

    def test_registry_lists_every_family(self):
        assert set(BUILTINS) == {
            "gaussian",
            "laplace",
            "triangular",
            "epanechnikov",
            "uniform",
            "gmm",
            "gaussian2d",
            "triangular2d",
        }


class TestParsing:
    """family:params syntax and reference documents"""

    def test_parse_density(self):
        d = parse_density("gaussian:0,1")
        assert d.family == "gaussian"
        assert d.params == (0.0, 1.0)

    def test_parse_negative_parameters(self):
        d = parse_density("triangular:-1,0,1")
        assert d.params == (-1.0, 0.0, 1.0)

    @pytest.mark.parametrize("text", ["gaussian", "gaussian:a,b", ":0,1"])
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            parse_density(text)

    def test_unknown_family_in_text(self):
        with pytest.raises(UnknownDensity):
            parse_density("student:3")

    def test_density_from_ref(self):
        d = density_from_ref({"family": "laplace", "params": [0, 1]})
        assert eval_density(d, [0.0]) == pytest.approx(0.5)

    def test_reference_round_trip(self, std_laplace):
        again = density_from_ref(std_laplace.to_ref())
        assert again.params == std_laplace.params


class TestTranslation:
    """x -> f(x - a)"""

    def test_values_move_with_offset(self, std_laplace, rng):
        moved = translate_density(std_laplace, [2.5])
        xs = rng.uniform(-5, 5, size=200)
        np.testing.assert_allclose(moved.pdf(xs + 2.5), std_laplace.pdf(xs), atol=1e-15)

    def test_metadata_moves_with_offset(self, unit_triangle):
        moved = translate_density(unit_triangle, [1.0])
        assert moved.breakpoints == ((0.0, 1.0, 2.0),)
        assert moved.support_radius == pytest.approx(2.0)
        assert moved.lipschitz == unit_triangle.lipschitz

    def test_factors_move_with_offset(self, rng):
        d = translate_density(builtin_density("gaussian2d", [1.0]), [0.5, -1.0])
        pts = rng.uniform(-3, 3, size=(100, 2))
        product = d.factors[0].pdf(pts[:, 0]) * d.factors[1].pdf(pts[:, 1])
        np.testing.assert_allclose(d.pdf(pts), product, rtol=1e-12, atol=1e-15)

    def test_zero_offset_is_identity(self, std_normal):
        assert translate_density(std_normal, [0.0]) is std_normal


class TestEssSupOnBall:
    """Lattice maxima on balls"""

    def test_gaussian(self, std_normal):
        assert ess_sup_on_ball(std_normal, 1.0) == pytest.approx(0.3989422804, abs=1e-10)

    def test_triangle(self, unit_triangle):
        assert ess_sup_on_ball(unit_triangle, 0.5) == pytest.approx(1.0)

    def test_laplace(self, std_laplace):
        assert ess_sup_on_ball(std_laplace, 2.0) == pytest.approx(0.5)

    def test_two_dimensional(self):
        d = builtin_density("gaussian2d", [1.0])
        assert ess_sup_on_ball(d, 1.0) == pytest.approx(1.0 / (2.0 * math.pi))

    def test_zero_on_ball(self):
        with pytest.raises(ZeroOnBall):
            ess_sup_on_ball(builtin_density("uniform", [5.0, 6.0]), 1.0)

    def test_radius_must_be_positive(self, std_normal):
        with pytest.raises(InvalidParameter):
            ess_sup_on_ball(std_normal, 0.0)
