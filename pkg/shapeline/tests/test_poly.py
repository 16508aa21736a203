"""
Tests for the smoothed pieces and the nearly coconvex approximant P_n.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

PI = math.pi


@pytest.fixture(scope="module")
def neg_sin_model():
    """P_8 of -sin for Y = {0, -pi}, built once for the module."""
    from shapeline.functions import get_function
    from shapeline.periodic_core import InflectionSet
    from shapeline.poly import build_poly

    inflections = InflectionSet.from_values([0.0, -PI])
    return build_poly(get_function("neg-sin"), inflections, 8)


class TestLevels:
    """Tests for LevelConfig."""

    def test_defaults(self):
        """n1 = 2 m1 n, n2 = 2 m2 n1, b1 = s + 2, b2 = 3(s + 1)."""
        from shapeline.poly import LevelConfig

        levels = LevelConfig.create(8, 1)
        assert (levels.n1, levels.n2) == (32, 256)
        assert (levels.b1, levels.b2) == (3, 6)
        assert levels.h == pytest.approx(PI / 8)

    def test_index_maps(self):
        """Knots of level n are knots of n1, and those of n1 knots of n2."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.poly import LevelConfig

        levels = LevelConfig.create(8, 1, m1=3, m2=2, b1=5, b2=7)
        assert levels.to_level1(3) == 3 * 6
        assert levels.to_level2(18) == 18 * 4
        j = 3
        x = DyadicGrid(8).knot(j)
        assert DyadicGrid(levels.n1).knot(levels.to_level1(j)) == pytest.approx(x)
        fine = levels.to_level2(levels.to_level1(j))
        assert DyadicGrid(levels.n2).knot(fine) == pytest.approx(x)
        assert (levels.b1, levels.b2) == (5, 7)


class TestTargets:
    """Tests for the endpoint normalizations and the polynomial part."""

    @pytest.mark.parametrize("nu", [1, 2, 3])
    def test_phi_plus_steps_is_exact_slope(self, nu):
        """phi(d + pi) plus the two unit steps gives Psi_{j,nu}'(d + pi)."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.poly import phi_target, step_weight
        from shapeline.spline import PsiPiece

        grid = DyadicGrid(16)
        piece = PsiPiece(grid, 2, nu)
        exact = float(piece(piece.center + PI, 1))
        assert phi_target(nu, grid.h) + 2 * step_weight(nu, grid.h) == pytest.approx(exact)

    @pytest.mark.parametrize("nu", [1, 2, 3])
    def test_psi_target_is_exact_value(self, nu):
        """psi(d + pi) = Psi_{j,nu}(d + pi) = (pi + h) pi (pi - h)."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.poly import psi_target
        from shapeline.spline import PsiPiece

        grid = DyadicGrid(16)
        piece = PsiPiece(grid, 2, nu)
        assert psi_target(grid.h) == pytest.approx(float(piece(piece.center + PI)))

    def test_drift_of_plain_cubic(self):
        """With d = 0 and h = 0 the drift is (x + 2pi)^3."""
        from shapeline.poly import polynomial_drift

        assert float(polynomial_drift(0.0, 0.0, 0.0)) == pytest.approx(8 * PI**3)

    @settings(max_examples=60, deadline=None)
    @given(
        x=st.floats(min_value=-PI, max_value=PI),
        d=st.floats(min_value=-PI, max_value=PI),
        h=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_drift_factorizes(self, x, d, h):
        """q(x + 2pi) - q(x) = z (z - h)(z + h) with z = x - d + 2pi."""
        from shapeline.poly import polynomial_drift

        z = x - d + 2 * PI
        assert float(polynomial_drift(x, d, h)) == pytest.approx(
            z * (z - h) * (z + h), abs=1e-8
        )


class TestExcludedMask:
    """Tests for excluded_mask."""

    def test_wraps_around(self, two_points):
        """Distances to y are taken modulo 2pi."""
        from shapeline.poly import excluded_mask

        x = np.array([0.05, 0.5, PI - 0.05, -PI + 0.05, -2.0])
        assert excluded_mask(two_points, x, 0.1).tolist() == [True, False, True, True, False]


class TestConstantFunction:
    """Constants have Phi = 0, so P_n is the constant itself."""

    def test_model_is_constant(self, two_points):
        """P_n = 1 with no pieces and no sign violations."""
        from shapeline.functions import get_function
        from shapeline.poly import build_poly, verify_poly_shape

        model = build_poly(get_function("const"), two_points, 8)
        x = np.linspace(-PI, PI, 101)
        np.testing.assert_allclose(model(x), 1.0, atol=1e-12)
        assert model.pieces == []
        assert all(r.passed for r in verify_poly_shape(model))

    def test_calibration_passes_first_step(self, two_points):
        """No doubling is needed when the first build passes."""
        from shapeline.functions import get_function
        from shapeline.poly import calibrate_poly

        model, reports = calibrate_poly(get_function("const"), two_points, 8)
        assert model.calibration_steps == ["m1=2 m2=4: pass"]
        assert reports[0].check == "poly-sign"

    def test_manifest(self, two_points):
        """The manifest carries the level configuration and the status."""
        from shapeline.functions import get_function
        from shapeline.models import CheckStatus
        from shapeline.poly import build_poly

        model = build_poly(get_function("const"), two_points, 8)
        manifest = model.manifest(0.0, 0.0, [], CheckStatus.PASS)
        assert (manifest.m1, manifest.m2, manifest.b1, manifest.b2) == (2, 4, 3, 6)
        assert manifest.fallback is False
        assert {r.check for r in manifest.sign_reports} == {
            "quadrature",
            "piece-comparison",
            "piece-form",
        }


class TestGates:
    """Tests for the level gates."""

    def test_level_one_gate(self, two_points):
        """m1 = 1 leaves O_{i,10} overlapping at level n1 = 16."""
        from shapeline.errors import NeighborhoodOverlap
        from shapeline.functions import get_function
        from shapeline.poly import LevelConfig, build_poly

        levels = LevelConfig.create(8, 1, m1=1, m2=1)
        with pytest.raises(NeighborhoodOverlap) as excinfo:
            build_poly(get_function("neg-sin"), two_points, 8, levels)
        assert excinfo.value.required == 21
        assert excinfo.value.m == 10

    def test_fallback_certificate(self, two_points):
        """The constant f(0) is within 3 omega_4(f, 4pi) of f."""
        from shapeline.functions import get_function
        from shapeline.poly import fallback_whitney, verify_poly_shape

        f = get_function("neg-sin")
        model = fallback_whitney(f, two_points, 4)
        assert model.fallback
        assert model.constant == pytest.approx(0.0, abs=1e-15)
        assert model.certificate == pytest.approx(48.0, rel=1e-6)
        x = np.linspace(-PI, PI, 1001)
        error = float(np.max(np.abs(f(x) - model(x))))
        assert error <= model.certificate + 1e-9
        reports = verify_poly_shape(model)
        assert len(reports) == 1
        assert reports[0].passed


@pytest.mark.slow
class TestNegSine:
    """Full construction for -sin at n = 8."""

    def test_decomposition_identity(self, neg_sin_model):
        """P'' Pi = A + B + S'' Pi."""
        from shapeline.poly import decomposition_residual

        assert decomposition_residual(neg_sin_model) < 1e-9

    def test_evaluator_matches_nodes(self, neg_sin_model):
        """The Hermite evaluator reproduces the stored node values."""
        model = neg_sin_model
        np.testing.assert_allclose(model.working(model.nodes), model.values, atol=1e-12)
        np.testing.assert_allclose(model.working(model.nodes, 2), model.second, atol=1e-6)

    def test_piece_normalizations(self, neg_sin_model):
        """Unclamped pieces meet their endpoint targets."""
        clamped = {(e.j, e.nu) for e in neg_sin_model.clamp_events}
        assert neg_sin_model.pieces
        for piece in neg_sin_model.pieces:
            assert 0.0 <= piece.alpha <= 1.0
            assert 0.0 <= piece.beta <= 1.0
            if (piece.j, piece.nu) not in clamped:
                assert piece.phi_residual < 1e-8
                assert piece.psi_residual < 1e-8

    def test_periodicity(self, neg_sin_model):
        """Without clamps, P_n - sum Phi_j q_j drifts only by rounding."""
        assert neg_sin_model.periodicity_residual is not None
        if not neg_sin_model.clamp_events:
            assert neg_sin_model.periodicity_residual < 1e-7

    def test_reports_and_constants(self, neg_sin_model):
        """Shape reports come out in a fixed order and the piece constants are fitted."""
        from shapeline.poly import verify_poly_shape

        reports = verify_poly_shape(neg_sin_model)
        assert [r.check for r in reports] == [
            "poly-sign",
            "poly-a-term",
            "poly-b-term",
            "poly-seam",
        ]
        assert all(r.asserted for r in reports)
        assert reports[0].excluded_samples > 0
        assert {"c_psi", "c_phi"} <= {c.name for c in neg_sin_model.constants}

    def test_quadrature_is_resolved(self, neg_sin_model):
        """The fine grid carries 16 b2 nodes per step and passes the doubling check."""
        report = neg_sin_model.piece_reports[0]
        assert report.check == "quadrature"
        assert report.asserted
        assert report.passed


class TestCalibrationOutcome:
    """Tests for calibration_outcome and comparison_scale."""

    def test_clamps_fail_the_step(self, two_points):
        """A clamped weight rejects a model whose checks all pass."""
        from shapeline.functions import get_function
        from shapeline.models import ClampEvent
        from shapeline.poly import build_poly, calibration_outcome, verify_poly_shape

        model = build_poly(get_function("const"), two_points, 8)
        reports = verify_poly_shape(model)
        assert calibration_outcome(model, reports) == "pass"
        model.clamp_events.append(ClampEvent(symbol="alpha", raw=1.2, clamped=1.0, j=3, nu=1))
        assert calibration_outcome(model, reports) == "1 clamped weights"

    def test_failed_piece_report_names_the_check(self, two_points):
        """An asserted piece report that fails is the outcome."""
        from shapeline.functions import get_function
        from shapeline.poly import build_poly, calibration_outcome, verify_poly_shape

        model = build_poly(get_function("const"), two_points, 8)
        reports = verify_poly_shape(model)
        model.piece_reports[0] = model.piece_reports[0].model_copy(update={"violations": 1})
        assert calibration_outcome(model, reports) == "quadrature: 1 violations"

    def test_exhausted_budget(self, two_points, test_settings):
        """A budget that leaves no room to double raises with the last multipliers."""
        from shapeline.errors import CalibrationExhausted
        from shapeline.functions import get_function
        from shapeline.poly import calibrate_poly

        settings = test_settings.model_copy(
            update={
                "quadrature_points": 1024,
                "quadrature_tolerance": 0.0,
                "max_quadrature_doublings": 0,
            }
        )
        with pytest.raises(CalibrationExhausted) as excinfo:
            calibrate_poly(
                get_function("const"), two_points, 8, max_m1=2, max_m2=4, settings=settings
            )
        assert (excinfo.value.m1, excinfo.value.m2) == (2, 4)
        assert excinfo.value.max_m1 == 2

    def test_comparison_scale(self):
        """The scale is max |Psi''| and never zero."""
        from shapeline.poly import comparison_scale

        assert comparison_scale(np.array([0.5, -2.0, 1.0])) == 2.0
        assert comparison_scale(np.zeros(4)) > 0.0


@pytest.fixture(scope="module")
def calibrated_neg_sin():
    """Calibrated P_n of -sin for Y = {0, -pi} at n = 8 and 16."""
    from shapeline.functions import get_function
    from shapeline.periodic_core import InflectionSet
    from shapeline.poly import calibrate_poly

    inflections = InflectionSet.from_values([0.0, -PI])
    f = get_function("neg-sin")
    return {n: calibrate_poly(f, inflections, n) for n in (8, 16)}


@pytest.mark.slow
class TestCalibratedNegSine:
    """Calibrated construction for -sin at n = 8 and 16."""

    def test_no_clamps_and_exact_pieces(self, calibrated_neg_sin):
        """Every piece meets its endpoint targets without clamping."""
        for model, _ in calibrated_neg_sin.values():
            assert model.clamp_events == []
            assert model.pieces
            for piece in model.pieces:
                assert piece.phi_residual < 1e-8
                assert piece.psi_residual < 1e-8

    def test_shape_reports_pass(self, calibrated_neg_sin):
        """P'' Pi, A and B have no violations, and the continuation is periodic."""
        for model, reports in calibrated_neg_sin.values():
            checks = {r.check: r for r in reports}
            for name in ("poly-sign", "poly-a-term", "poly-b-term", "poly-seam"):
                assert checks[name].violations == 0, name
            assert model.periodicity_residual < 1e-7
            assert model.calibration_steps[-1].endswith("pass")

    def test_error_ratio_is_stable(self, calibrated_neg_sin):
        """||f - P_n|| / omega_4(f, pi/n) stays within a factor two from n = 8 to 16."""
        from shapeline.functions import get_function
        from shapeline.models import Artifact
        from shapeline.periodic_core import modulus
        from shapeline.verifier import convergence_summary

        f = get_function("neg-sin")
        x = np.linspace(-PI, PI, 4001)
        n_values, errors, omegas = [], [], []
        for n, (model, _) in sorted(calibrated_neg_sin.items()):
            n_values.append(n)
            errors.append(float(np.max(np.abs(f(x) - model(x)))))
            omegas.append(modulus(f, 4, PI / n))
        summary = convergence_summary("neg-sin", Artifact.POLY, n_values, errors, omegas)
        assert summary.stable
