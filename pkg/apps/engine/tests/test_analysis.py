import math

import numpy as np
import pandas as pd
import pytest

from mixturecraft.analysis import (
    LpNorm,
    Mollified,
    SupNorm,
    SweepTable,
    Zero,
    approximate_identity_curve,
    convergence_sweep,
    convolve,
    convolve_at,
    dilation_tail_mass,
    lp_norm_diff,
    lp_tail_bound,
    sup_norm_diff_on_grid,
    young_inequality_check,
)
from mixturecraft.densities import builtin_density
from mixturecraft.errors import DimensionError, InvalidParameter, QuadratureBudget
from mixturecraft.mixture import Mixture, parse_mixture, serialize_mixture
from mixturecraft.schemas import Box, GridSpec, SweepRow


class Disk:
    """Indicator of a disk, whose edge no axis-aligned panel follows."""

    dim = 2
    breakpoints = ((), ())
    reach = 1.0

    def pdf(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return (np.sum(pts**2, axis=1) <= 0.64).astype(float)


def identity_sup_error(k):
    """sup |phi - g_k * phi| for standard normal phi and g, reached at 0"""
    return (1.0 - 1.0 / math.sqrt(1.0 + 1.0 / k**2)) / math.sqrt(2.0 * math.pi)


class TestConvolution:
    """Numerical (g_k * h)(x)"""

    def test_gaussian_self_convolution(self, std_normal):
        assert convolve_at(std_normal, 1.0, std_normal, [0.0], radius=12.0) == pytest.approx(0.2820948, abs=1e-6)

    def test_zero_function(self, std_normal):
        assert convolve_at(std_normal, 1.0, Zero(1), [0.3]) == 0.0
        np.testing.assert_array_equal(convolve(std_normal, 1.0, Zero(1), np.linspace(-1, 1, 5)), np.zeros(5))

    def test_approximate_identity_at_large_k(self, std_normal, unit_triangle):
        assert abs(convolve_at(std_normal, 64.0, unit_triangle, [0.0]) - 1.0) <= 0.02

    def test_vectorized_matches_adaptive(self, std_laplace, unit_triangle):
        xs = np.array([-1.3, -0.2, 0.0, 0.45, 2.0])
        batch = convolve(std_laplace, 3.0, unit_triangle, xs)
        single = [convolve_at(std_laplace, 3.0, unit_triangle, [x]) for x in xs]
        np.testing.assert_allclose(batch, single, rtol=0, atol=1e-7)

    def test_two_dimensional(self):
        g = builtin_density("gaussian2d", [1.0])
        value = convolve(g, 1.0, g, np.zeros((1, 2)), radius=9.0)[0]
        assert value == pytest.approx(1.0 / (4.0 * math.pi), abs=1e-7)

    def test_two_dimensional_unsettled_raises(self):
        g = builtin_density("gaussian2d", [1.0])
        with pytest.raises(QuadratureBudget):
            convolve(g, 1.0, Disk(), np.zeros((1, 2)), abs_tol=1e-12)

    def test_bandwidth_must_be_positive(self, std_normal):
        with pytest.raises(InvalidParameter):
            convolve(std_normal, 0.0, std_normal, [0.0])

    def test_dimension_mismatch(self, std_normal):
        with pytest.raises(DimensionError):
            convolve(std_normal, 1.0, builtin_density("gaussian2d", [1.0]), np.zeros((1, 2)))

    @pytest.mark.parametrize("family,params", [("triangular", [-1.0, 0.0, 1.0]), ("epanechnikov", [0.0, 1.0]), ("uniform", [0.0, 1.0])])
    def test_mollification_preserves_mass(self, std_normal, family, params):
        h = builtin_density(family, params)
        moll = Mollified(std_normal, 4.0, h)
        assert lp_norm_diff(moll, Zero(1), 1.0, moll.reach, 0.0) == pytest.approx(1.0, abs=1e-6)

    def test_mollified_caches_batches(self, std_normal, unit_triangle):
        moll = Mollified(std_normal, 2.0, unit_triangle)
        xs = np.linspace(-2, 2, 9)
        first = moll.pdf(xs)
        first[0] = -1.0
        assert moll.pdf(xs)[0] >= 0.0

    def test_dilation_tail_mass_decreases(self, std_laplace):
        tails = [dilation_tail_mass(std_laplace, k, 0.5) for k in (1, 2, 4, 8, 16)]
        assert all(b < a for a, b in zip(tails, tails[1:]))
        assert tails[-1] < 1e-3


class TestNorms:
    """Sup and L_p distances"""

    def test_sup_of_identical_functions(self, std_normal):
        grid = GridSpec(center=[0.0], half_width=[3.0], points_per_axis=101)
        value, _ = sup_norm_diff_on_grid(std_normal, std_normal, grid)
        assert value == 0.0

    def test_sup_against_zero(self, std_normal):
        grid = GridSpec(center=[0.0], half_width=[3.0], points_per_axis=2048)
        value, where = sup_norm_diff_on_grid(std_normal, Zero(1), grid)
        assert value == pytest.approx(0.3989422804, rel=1e-5)
        assert abs(where[0]) == pytest.approx(3.0 / 2047.0, rel=1e-9)

    def test_sup_ties_pick_first_point(self, std_normal):
        flat = Mixture.from_arrays(builtin_density("uniform", [-10.0, 10.0]), [1.0], [[0.0]], [1.0])
        grid = GridSpec(center=[0.0], half_width=[3.0], points_per_axis=11)
        value, where = sup_norm_diff_on_grid(flat, Zero(1), grid)
        assert value == pytest.approx(0.05)
        assert where[0] == -3.0

    def test_sup_after_round_trip(self, std_laplace, rng):
        mix = Mixture.from_arrays(std_laplace, rng.dirichlet(np.ones(6)), rng.normal(size=(6, 1)), np.ones(6))
        grid = GridSpec(center=[0.0], half_width=[4.0], points_per_axis=257)
        assert sup_norm_diff_on_grid(mix, parse_mixture(serialize_mixture(mix)), grid)[0] == 0.0

    def test_sup_on_ball_ignores_corners(self):
        g = builtin_density("gaussian2d", [1.0])
        grid = GridSpec(center=[0.0, 0.0], half_width=[1.0, 1.0], points_per_axis=21)
        _, where = sup_norm_diff_on_grid(g, Zero(2), grid, ball_radius=1.0)
        assert np.linalg.norm(where) <= 1.0

    def test_l1_norm_of_gaussian(self, std_normal):
        assert lp_norm_diff(std_normal, Zero(1), 1.0, 12.0, 0.0) == pytest.approx(1.0, abs=1e-6)

    def test_l2_norm_of_gaussian(self, std_normal):
        expected = (2.0 * math.sqrt(math.pi)) ** -0.5
        assert lp_norm_diff(std_normal, Zero(1), 2.0, 12.0, 0.0) == pytest.approx(expected, abs=1e-5)
        assert expected == pytest.approx(0.5311260, abs=1e-7)

    def test_l2_norm_of_uniform(self):
        u = builtin_density("uniform", [0.0, 1.0])
        assert lp_norm_diff(u, Zero(1), 2.0, 2.0, 0.0) == pytest.approx(1.0, abs=1e-9)

    def test_tail_bound_is_added(self, std_normal):
        base = lp_norm_diff(std_normal, Zero(1), 1.0, 2.0, 0.0)
        tail = lp_tail_bound(std_normal, Zero(1), 2.0, 1.0)
        assert base + tail == pytest.approx(1.0, abs=1e-7)
        assert lp_norm_diff(std_normal, Zero(1), 1.0, 2.0, tail) == pytest.approx(1.0, abs=1e-7)

    @pytest.mark.parametrize("p", [0.5, math.inf])
    def test_p_must_be_finite_and_at_least_one(self, std_normal, p):
        with pytest.raises(InvalidParameter):
            lp_norm_diff(std_normal, Zero(1), p, 5.0, 0.0)
        with pytest.raises(InvalidParameter):
            LpNorm(p)

    def test_norm_objects(self, std_normal):
        assert SupNorm.on_ball(4.0).measure(std_normal, std_normal) == 0.0
        assert LpNorm(1.0).measure(std_normal, Zero(1)) == pytest.approx(1.0, abs=1e-6)


class TestYoungInequality:
    """||f * g||_p <= ||f||_p ||g||_1"""

    def test_gaussian_pair_is_tight_at_p_one(self, std_normal):
        result = young_inequality_check(std_normal, std_normal, 1.0)
        assert result.holds
        assert result.lhs == pytest.approx(1.0, abs=1e-6)
        assert result.rhs == pytest.approx(1.0, abs=1e-6)

    def test_strict_at_p_two(self, std_normal, std_laplace):
        result = young_inequality_check(std_normal, std_laplace, 2.0)
        assert result.holds
        assert result.lhs < result.rhs

    def test_compact_pair(self, unit_triangle):
        result = young_inequality_check(unit_triangle, builtin_density("uniform", [0.0, 1.0]), 1.0)
        assert result.holds
        assert result.lhs == pytest.approx(1.0, abs=1e-6)

    def test_sup_form(self, std_normal, std_laplace):
        result = young_inequality_check(std_normal, std_laplace, 2.0, form="sup")
        assert result.holds
        assert result.form == "sup"

    def test_planar_gaussians_factor_over_axes(self):
        """N(0, I) * N(0, I) = N(0, 2I), whose L_2 norm is (8 pi)^(-1/2)"""
        g = builtin_density("gaussian2d", [1.0])
        result = young_inequality_check(g, g, 2.0)
        assert result.holds
        assert result.lhs == pytest.approx(1.0 / math.sqrt(8.0 * math.pi), abs=1e-6)
        assert result.rhs == pytest.approx(1.0 / math.sqrt(4.0 * math.pi), abs=1e-6)

    def test_planar_sup_form(self):
        g = builtin_density("gaussian2d", [1.0])
        result = young_inequality_check(g, g, 1.0, form="sup")
        assert result.lhs == pytest.approx(1.0 / (4.0 * math.pi), abs=1e-7)
        assert result.rhs == pytest.approx(1.0 / (2.0 * math.pi), abs=1e-6)

    def test_unknown_form(self, std_normal):
        with pytest.raises(InvalidParameter):
            young_inequality_check(std_normal, std_normal, 1.0, form="weak")


class TestIdentityCurve:
    """||f - g_k * f|| as k grows"""

    def test_gaussian_closed_form(self, std_normal):
        norm = SupNorm.on_box(Box(lower=[-3.0], upper=[3.0]))
        ks = [1, 2, 4, 8, 16]
        table = approximate_identity_curve(std_normal, std_normal, norm, ks)
        for k, value in zip(ks, table.column("measured_sup")):
            assert value == pytest.approx(identity_sup_error(k), abs=1e-5)
        assert table.column("measured_lp") == [None] * len(ks)

    def test_single_k(self, std_normal):
        table = approximate_identity_curve(std_normal, std_normal, SupNorm.on_ball(3.0), [2])
        assert len(table) == 1

    def test_uniform_in_l1(self, std_normal):
        u = builtin_density("uniform", [0.0, 1.0])
        table = approximate_identity_curve(u, std_normal, LpNorm(1.0), [1, 4, 16, 64])
        errors = table.column("measured_lp")
        assert errors[-1] < 0.05
        assert all(b < a for a, b in zip(errors, errors[1:]))

    @pytest.mark.parametrize("ks", [[], [2, 1], [0, 1]])
    def test_bad_ks(self, std_normal, ks):
        with pytest.raises(InvalidParameter):
            approximate_identity_curve(std_normal, std_normal, SupNorm.on_ball(3.0), ks)


class TestSweepTable:
    """Tabular sweep output"""

    def test_csv_layout(self):
        table = SweepTable(
            [
                SweepRow(labels={"k": 4.0, "delta": 0.5}, certified_bound=0.25, measured_sup=0.125, m=17, elapsed_s=0.0),
                SweepRow(labels={"k": 8.0, "delta": 0.25}, certified_bound=0.125, measured_sup=0.0625, m=65, elapsed_s=0.0),
            ]
        )
        text = table.to_csv()
        lines = text.split("\n")
        assert lines[0] == "k,delta,certified_bound,measured_sup,measured_lp,m,elapsed_s"
        assert lines[1] == "4,0.5,0.25,0.125,,17,0"
        assert "\r" not in text

    def test_error_column_appears_on_failure(self):
        table = SweepTable(
            [
                SweepRow(labels={"k": 4.0}, measured_sup=0.1, m=3),
                SweepRow(labels={"k": 8.0}, error="BudgetExceeded: too many"),
            ]
        )
        frame = table.to_frame()
        assert list(frame.columns)[-1] == "error"
        assert pd.isna(frame["m"][1])

    def test_rows_need_matching_labels(self):
        with pytest.raises(InvalidParameter):
            SweepTable([SweepRow(labels={"k": 1.0}), SweepRow(labels={"delta": 1.0})])

    def test_empty_table(self):
        with pytest.raises(InvalidParameter):
            SweepTable([])

    def test_csv_file(self, tmp_path):
        path = tmp_path / "curve.csv"
        SweepTable([SweepRow(labels={"k": 1.0}, measured_sup=0.5)]).to_csv(path)
        assert path.read_bytes().startswith(b"k,certified_bound")


class TestConvergenceSweep:
    """Fixed (k, delta) constructions"""

    def test_rows_follow_input_order(self, std_normal):
        K = Box(lower=[-3.0], upper=[3.0])
        table = convergence_sweep(std_normal, std_normal, [(2, 0.5), (1, 1.0), {"k": 2, "delta": 0.25}], K=K, n_jobs=2)
        assert table.column("k") == [2.0, 1.0, 2.0]
        assert table.column("delta") == [0.5, 1.0, 0.25]
        assert all(m > 0 for m in table.column("m"))

    def test_failures_are_recorded(self, std_normal):
        from mixturecraft.schemas import ConstructionOptions

        K = Box(lower=[-3.0], upper=[3.0])
        table = convergence_sweep(
            std_normal, std_normal, [(1, 1.0), (64, 0.001)], K=K, opts=ConstructionOptions(max_components=100)
        )
        assert table.rows[0].error is None
        assert table.rows[1].error.startswith("BudgetExceeded")

    def test_empty_settings(self, std_normal):
        with pytest.raises(InvalidParameter):
            convergence_sweep(std_normal, std_normal, [], K=Box(lower=[-1.0], upper=[1.0]))

    def test_needs_exactly_one_norm(self, std_normal):
        with pytest.raises(InvalidParameter):
            convergence_sweep(std_normal, std_normal, [(1, 1.0)])
