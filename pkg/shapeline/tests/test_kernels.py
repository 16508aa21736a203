"""
Tests for Jackson kernels, the fine grid and the step/ramp tables.
"""

import math

import numpy as np
import pytest

PI = math.pi


@pytest.fixture
def fine_grid():
    from shapeline.kernels import FineGrid

    return FineGrid.for_level(16, 4096)


@pytest.fixture
def bank(fine_grid, two_points):
    from shapeline.kernels import KernelBank

    return KernelBank(fine_grid, 16, two_points, 3)


class TestJackson:
    """Tests for the kernel formulas."""

    def test_term_is_one_at_multiples_of_two_pi(self):
        """The removable singularity is filled with 1."""
        from shapeline.kernels import jackson_term

        values = jackson_term(np.array([0.0, 2 * PI, -2 * PI]), 16, 3)
        np.testing.assert_allclose(values, 1.0)

    def test_term_vanishes_at_grid_zeros(self):
        """sin(n u / 2) = 0 at u = 2pi/n."""
        from shapeline.kernels import jackson_term

        assert float(jackson_term(2 * PI / 8, 8, 2)) == pytest.approx(0.0, abs=1e-28)

    def test_scaled_kernel(self):
        """J_j = n^(2b) times the scaled kernel."""
        from shapeline.kernels import jackson_kernel, scaled_kernel

        x = np.linspace(-PI, PI, 17)
        np.testing.assert_allclose(
            jackson_kernel(2, 4, 2, x), 4.0**4 * scaled_kernel(2, 4, 2, x), rtol=1e-12
        )


class TestFineGrid:
    """Tests for FineGrid."""

    def test_points_per_step(self, fine_grid):
        """Q / (2 n) nodes per knot step, at least the minimum."""
        from shapeline.kernels import FineGrid

        assert fine_grid.points_per_step == 128
        assert FineGrid.for_level(64, 1024).points_per_step == 16

    def test_points_per_step_grow_with_exponent(self):
        """At least 16 b nodes per knot step, i.e. 32 n b per period."""
        from shapeline.kernels import FineGrid

        assert FineGrid.for_level(64, 1024, exponent=6).points_per_step == 96
        assert FineGrid.for_level(16, 4096, exponent=6).points_per_step == 128

    def test_refined_doubles_density(self, fine_grid):
        """refined() keeps the level and doubles the nodes per step."""
        finer = fine_grid.refined()
        assert finer.top_level == fine_grid.top_level
        assert finer.points_per_step == 2 * fine_grid.points_per_step
        assert finer.size == 2 * fine_grid.size - 1

    def test_knots_are_nodes(self, fine_grid):
        """Every knot of a dividing level sits on a node."""
        from shapeline.periodic_core import DyadicGrid

        for level in (4, 8, 16):
            lattice = DyadicGrid(level)
            for j in (-level, -3, 0, 5, level):
                node = fine_grid.node_of_knot(level, j)
                assert fine_grid.nodes[node] == pytest.approx(lattice.knot(j), abs=1e-12)

    def test_non_dividing_level_rejected(self, fine_grid):
        """Level 6 knots are not nodes of a level-16 grid."""
        from shapeline.errors import ShapelineInputError

        with pytest.raises(ShapelineInputError):
            fine_grid.node_of_knot(6, 1)

    def test_window_spans_one_period(self, fine_grid):
        """window(level, j) covers [x_j - pi, x_j + pi]."""
        lo, hi = fine_grid.window(16, 4)
        assert fine_grid.nodes[hi] - fine_grid.nodes[lo] == pytest.approx(2 * PI)


class TestSolveWeight:
    """Tests for the clamped affine solve."""

    def test_inside(self):
        """The plain solution is returned when it lies in [0, 1]."""
        from shapeline.kernels import solve_weight

        assert solve_weight(2.0, 0.0, 0.5, epsilon=1e-6) == pytest.approx(0.25)

    def test_small_excursion_clamped(self):
        """Within epsilon the weight is clamped without a record."""
        from shapeline.kernels import solve_weight

        events = []
        value = solve_weight(1.0, 0.0, 1.0 + 1e-8, epsilon=1e-6, events=events)
        assert value == 1.0
        assert events == []

    def test_strict_raises(self):
        """Strict mode raises the given error type."""
        from shapeline.errors import BetaOutOfRange
        from shapeline.kernels import solve_weight

        with pytest.raises(BetaOutOfRange) as excinfo:
            solve_weight(1.0, 0.0, 2.0, epsilon=1e-6, error=BetaOutOfRange, context="psi_3")
        assert excinfo.value.value == pytest.approx(2.0)
        assert "beta=2" in str(excinfo.value)

    def test_lenient_records_event(self):
        """Outside strict mode the clamp is recorded."""
        from shapeline.errors import BetaOutOfRange
        from shapeline.kernels import solve_weight

        events = []
        value = solve_weight(
            1.0,
            0.0,
            -0.5,
            epsilon=1e-6,
            error=BetaOutOfRange,
            strict=False,
            events=events,
            j=3,
            nu=1,
        )
        assert value == 0.0
        assert len(events) == 1
        assert events[0].symbol == "beta"
        assert events[0].raw == pytest.approx(-0.5)
        assert (events[0].j, events[0].nu) == (3, 1)

    def test_degenerate_span(self):
        """Equal endpoints cannot be mixed."""
        from shapeline.errors import AlphaOutOfRange
        from shapeline.kernels import solve_weight

        with pytest.raises(AlphaOutOfRange):
            solve_weight(1.0, 1.0, 1.0, epsilon=1e-6)


class TestKernelBank:
    """Tests for steps, ramps and their corrections."""

    def test_step_normalized_on_window(self, bank, fine_grid):
        """t_k is 0 at x_k - pi and 1 at x_k + pi."""
        table = bank.step(4)
        lo, hi = fine_grid.window(16, 4)
        assert table.values[lo] == pytest.approx(0.0, abs=1e-15)
        assert table.values[hi] == pytest.approx(1.0, abs=1e-12)

    def test_plain_step_is_monotone(self, bank, fine_grid):
        """t_bar_k has a non-negative slope everywhere."""
        table = bank.plain(0)
        lo, hi = fine_grid.window(16, 0)
        assert np.all(table.slopes[lo : hi + 1] >= 0)
        assert np.all(np.diff(table.values[lo : hi + 1]) >= -1e-14)

    def test_off_node_evaluation(self, bank, fine_grid):
        """at() between nodes agrees with the node values at the nodes."""
        table = bank.plain(2)
        lo, hi = fine_grid.window(16, 2)
        nodes = fine_grid.nodes[lo : hi + 1 : 97]
        np.testing.assert_allclose(table.at(nodes), table.values[lo : hi + 1 : 97], atol=1e-10)

    def test_tau_reaches_pi(self, bank, fine_grid):
        """tau_k is 0 at x_k - pi and pi at x_k + pi."""
        table = bank.tau(0)
        lo, hi = fine_grid.window(16, 0)
        assert table.values[lo] == pytest.approx(0.0, abs=1e-14)
        assert table.values[hi] == pytest.approx(PI, abs=1e-12)

    def test_cache_reuses_tables(self, bank):
        """A second request returns the cached table; clear() drops it."""
        first = bank.step(1)
        assert bank.step(1) is first
        bank.clear()
        assert bank.step(1) is not first

    def test_step_sign_holds(self, bank):
        """t_k'(x) Pi(x) Pi(x_k) >= 0 for a shaped step."""
        from shapeline.kernels import check_step_kernel

        report = check_step_kernel(bank, 4)
        assert report.sign.passed
        assert {c.name for c in report.constants} >= {"c1", "c2", "c3"}

    def test_rejects_bad_exponent(self, fine_grid, two_points):
        """b must be positive."""
        from shapeline.errors import ShapelineInputError
        from shapeline.kernels import KernelBank

        with pytest.raises(ShapelineInputError):
            KernelBank(fine_grid, 16, two_points, 0)

    def test_modified_set_moves_one_point(self, two_points):
        """Y_1 replaces y_1 = 0 by x_{j_1+21} and keeps the other point."""
        from shapeline.kernels import FineGrid, KernelBank

        bank = KernelBank(FineGrid.for_level(64, 1024), 64, two_points, 3)
        modified = bank.modified_set(1)
        assert -PI in modified.points
        assert modified.points[0] == pytest.approx(-21 * PI / 64)
        assert modified.sign == 1

    def test_modified_set_needs_disjoint_neighborhoods(self, bank):
        """O_{i,20} overlap at level 16 for {0, -pi}."""
        from shapeline.errors import NeighborhoodOverlap

        with pytest.raises(NeighborhoodOverlap) as excinfo:
            bank.modified_set(1)
        assert excinfo.value.m == 20

    def test_corrections_need_disjoint_neighborhoods(self, bank):
        """t_hat and everything corrected by it are gated on O_{i,30}."""
        from shapeline.errors import NeighborhoodOverlap

        with pytest.raises(NeighborhoodOverlap) as excinfo:
            bank.hat(1)
        assert excinfo.value.m == 30
        assert excinfo.value.required == 61
        with pytest.raises(NeighborhoodOverlap):
            bank.t_tilde(8)


class TestCorrections:
    """Tests for t_tilde and tau_tilde at the inflection points."""

    @pytest.mark.slow
    @pytest.mark.parametrize("k", [32, -32])
    def test_interpolation_at_inflection_points(self, two_points, k):
        """t_tilde = chi and tau_tilde = (y - x_k)_+ at every y_i."""
        from shapeline.kernels import FineGrid, KernelBank

        bank = KernelBank(FineGrid.for_level(64, 4096), 64, two_points, 3)
        step_residual, ramp_residual = bank.interpolation_residuals(k)
        assert step_residual < 1e-8
        assert ramp_residual < 1e-8

    @pytest.mark.slow
    def test_ramp_constant_is_finite(self, two_points):
        """The fitted ramp constant is a finite non-negative number."""
        from shapeline.kernels import FineGrid, KernelBank, ramp_constant

        bank = KernelBank(FineGrid.for_level(64, 4096), 64, two_points, 3)
        value = ramp_constant(bank, 0)
        assert math.isfinite(value)
        assert value >= 0

    @pytest.mark.slow
    def test_interpolation_on_all_of_h20(self, two_points):
        """The corrected tables interpolate at every index of H_20 at level 64."""
        from shapeline.kernels import FineGrid, KernelBank

        bank = KernelBank(FineGrid.for_level(64, 4096), 64, two_points, 6)
        survivors = bank.neighborhoods(20).survivors(-64, 63)
        assert len(survivors) > 20
        for k in survivors:
            step_residual, ramp_residual = bank.interpolation_residuals(k)
            assert step_residual < 1e-8, k
            assert ramp_residual < 1e-8, k

    @pytest.mark.slow
    @pytest.mark.parametrize("k", [32, -32])
    def test_extension_structure(self, two_points, k):
        """t_tilde rises by 1 and tau_tilde by x + 2pi - x_k per period; t_hat_i(y_l) = 0."""
        from shapeline.kernels import FineGrid, KernelBank

        bank = KernelBank(FineGrid.for_level(64, 4096), 64, two_points, 6)
        step_rise, ramp_rise, vanishing = bank.extension_residuals(k)
        assert step_rise < 1e-9
        assert ramp_rise < 1e-8
        assert vanishing < 1e-10

    @pytest.mark.slow
    def test_t_tilde_decays_away_from_the_knot(self, two_points):
        """|chi - t_tilde| far from x_k is much smaller than one step away."""
        from shapeline.kernels import FineGrid, KernelBank
        from shapeline.periodic_core import chi

        bank = KernelBank(FineGrid.for_level(64, 4096), 64, two_points, 6)
        k = -32
        center = bank.knot(k)
        table = bank.t_tilde(k)
        near = np.array([center + PI / 64, center - PI / 64])
        far = np.array([center + PI / 3, center - PI / 3])
        near_error = float(np.max(np.abs(chi(near, center) - table.at(near))))
        far_error = float(np.max(np.abs(chi(far, center) - table.at(far))))
        assert far_error < 1e-2 * near_error


class TestStepKernelAcrossLevels:
    """Step kernel at x_j = pi/2 for levels 64 and 128."""

    @pytest.mark.slow
    def test_sign_and_c1_stability(self, two_points):
        """The sign property holds and c1 moves by at most a factor two."""
        from shapeline.kernels import FineGrid, KernelBank, check_step_kernel

        values = []
        for level in (64, 128):
            bank = KernelBank(FineGrid.for_level(level, 4096, exponent=3), level, two_points, 3)
            k = -level // 2
            assert bank.knot(k) == pytest.approx(PI / 2)
            report = check_step_kernel(bank, k)
            assert report.sign.passed
            assert report.sign.violations == 0
            values.append({c.name: c.value for c in report.constants}["c1"])
        assert max(values) <= 2.0 * min(values)


class TestQuadrature:
    """Tests for the grid-doubling self-check."""

    def test_drift_is_small_on_a_resolved_grid(self, two_points):
        """Doubling a grid with 16 b nodes per step barely moves the kernels."""
        from shapeline.kernels import FineGrid, quadrature_drift

        coarse = FineGrid.for_level(32, 1024, exponent=3)
        drift = quadrature_drift(coarse, coarse.refined(), 32, two_points, 3)
        assert drift < 1e-6

    def test_coarse_grid_drifts_more(self, two_points):
        """Too few nodes per step show up as a larger drift."""
        from shapeline.kernels import FineGrid, quadrature_drift

        coarse = FineGrid(32, 4)
        resolved = FineGrid.for_level(32, 1024, exponent=3)
        rough = quadrature_drift(coarse, coarse.refined(), 32, two_points, 3)
        fine = quadrature_drift(resolved, resolved.refined(), 32, two_points, 3)
        assert rough > fine

    def test_resolve_refines_until_the_tolerance(self, two_points, test_settings):
        """An unreachable tolerance spends the doubling budget and reports the drift."""
        from shapeline.kernels import resolve_fine_grid

        settings = test_settings.model_copy(
            update={
                "quadrature_points": 1024,
                "quadrature_tolerance": 0.0,
                "max_quadrature_doublings": 1,
            }
        )
        grid, drift = resolve_fine_grid(32, two_points, 3, settings)
        assert grid.points_per_step == 2 * 48
        assert drift >= 0.0

    def test_resolve_keeps_a_resolved_grid(self, two_points, test_settings):
        """A loose tolerance accepts the first grid."""
        from shapeline.kernels import resolve_fine_grid

        settings = test_settings.model_copy(
            update={"quadrature_points": 1024, "quadrature_tolerance": 1.0}
        )
        grid, drift = resolve_fine_grid(32, two_points, 3, settings)
        assert grid.points_per_step == 48
        assert drift < 1.0
