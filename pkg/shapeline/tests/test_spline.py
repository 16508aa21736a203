"""
Tests for the truncated-cubic pieces, the selection rules and the spline model.
"""

import math

import numpy as np
import pytest

PI = math.pi


class TestPsiPieces:
    """Tests for Psi_{j,nu} and Psi_3."""

    @pytest.mark.parametrize("nu", [1, 2, 3])
    def test_agrees_with_psi3_past_second_knot(self, nu):
        """Psi_{j,nu} = Psi_3(., x_j) for x >= x_{j-2}."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import PsiPiece, psi3

        grid = DyadicGrid(8)
        j = 3
        x = np.linspace(grid.knot(j - 2), PI, 65)
        np.testing.assert_allclose(PsiPiece(grid, j, nu)(x), psi3(x, grid, j), atol=1e-12)

    def test_psi3_is_product_form(self):
        """Psi_3(x, x_j) = (x - x_j)_+ (x - x_{j-1})(x - x_{j-2})."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import psi3

        grid = DyadicGrid(8)
        x = np.linspace(-PI, PI, 41)
        a, b, c = grid.knot(2), grid.knot(1), grid.knot(0)
        expected = np.where(x > a, (x - a) * (x - b) * (x - c), 0.0)
        np.testing.assert_allclose(psi3(x, grid, 2), expected, atol=1e-12)

    @pytest.mark.parametrize("nu", [1, 2, 3])
    def test_second_derivative_past_anchor(self, nu):
        """Psi''_{j,nu}(x) = 6 (x - x_{j-1}) to the right of the anchor."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import PsiPiece

        grid = DyadicGrid(8)
        piece = PsiPiece(grid, 0, nu)
        x = np.linspace(piece.anchor + 0.01, PI, 33)
        np.testing.assert_allclose(piece(x, 2), 6 * (x - grid.knot(-1)), atol=1e-12)

    def test_vanishes_left_of_anchor(self):
        """Each piece is zero up to its anchor, inclusive unless right=True."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import PsiPiece

        piece = PsiPiece(DyadicGrid(8), 1, 2)
        x = np.linspace(-PI, piece.anchor, 17)
        assert np.all(piece(x) == 0.0)
        assert float(piece(piece.anchor, 1, right=True)) == pytest.approx(piece.h_hat)
        assert float(piece(piece.anchor, 1)) == 0.0

    @pytest.mark.parametrize("nu", [1, 2, 3])
    def test_integral_form(self, nu):
        """The closed form matches the integral definition."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import PsiPiece, psi_integral_form

        piece = PsiPiece(DyadicGrid(8), 2, nu)
        for x in (piece.anchor - 0.2, piece.anchor + 0.1, 0.7, 2.9):
            exact = float(piece(x))
            tolerance = 1e-9 * max(1.0, abs(exact))
            assert psi_integral_form(piece, x) == pytest.approx(exact, abs=tolerance)

    def test_psi_agreement_for_nu_one(self):
        """nu = 1 is Psi_3 itself."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import psi_agreement

        assert psi_agreement(DyadicGrid(16), 4, 1) == 0.0


class TestSelection:
    """Tests for classify_by_f and select_psi."""

    def test_increasing_pattern(self):
        """|F_{j+1}| > |F_j| >= |F_{j-1}| selects nu = 1."""
        from shapeline.models import SelectionKind
        from shapeline.spline import classify_by_f

        entry = classify_by_f(3.0, 2.0, 1.0)
        assert entry.kind == SelectionKind.D1
        assert entry.nu == 1

    def test_decreasing_pattern(self):
        """|F_{j+1}| <= |F_j| < |F_{j-1}| selects nu = 3."""
        from shapeline.models import SelectionKind
        from shapeline.spline import classify_by_f

        entry = classify_by_f(1.0, 2.0, 3.0)
        assert entry.kind == SelectionKind.D2
        assert entry.nu == 3

    def test_valley_mixes(self):
        """A local minimum of |F| mixes nu = 1 and nu = 3."""
        from shapeline.models import SelectionKind
        from shapeline.spline import classify_by_f

        entry = classify_by_f(2.0, 1.0, 3.0)
        assert entry.kind == SelectionKind.D3
        assert entry.alpha == pytest.approx(0.4)

    def test_flat_pattern_unmatched(self):
        """Equal magnitudes match no rule."""
        from shapeline.spline import classify_by_f

        assert classify_by_f(1.0, 1.0, 1.0) is None

    def test_mixed_terms(self):
        """D3 expands into two weighted pieces."""
        from shapeline.models import SelectionEntry, SelectionKind
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import selection_terms

        entry = SelectionEntry(j=2, kind=SelectionKind.D3, nu=1, alpha=0.25)
        terms = selection_terms(DyadicGrid(8), entry)
        assert [(w, p.nu) for w, p in terms] == [(0.25, 1), (0.75, 3)]

    def test_one_entry_per_index(self, two_points):
        """The model selects a piece for every j = 3-n..n-1, in order."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        model = build_spline(get_function("neg-sin"), two_points, 16)
        assert [e.j for e in model.selections] == list(range(3 - 16, 16))

    def test_zero_differences_take_sign_rule(self):
        """Phi = 0 satisfies the sign rule, so tie-breaking is never needed."""
        from shapeline.functions import get_function
        from shapeline.models import SelectionKind
        from shapeline.periodic_core import InflectionSet
        from shapeline.spline import build_spline

        model = build_spline(get_function("const"), InflectionSet(points=()), 8, allow_tie=False)
        assert all(e.kind == SelectionKind.D0 for e in model.selections)
        assert model.diagnostics == []


class TestRegions:
    """Tests for decompose_regions."""

    def test_two_points_give_two_runs(self, two_points):
        """H_3 at n = 16 splits into two runs of ten intervals."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import decompose_regions

        grid = DyadicGrid(16)
        regions = decompose_regions(two_points, grid)
        assert len(regions) == 2
        first, second = regions.regions
        assert first.a == pytest.approx(-13 * grid.h)
        assert first.b == pytest.approx(-3 * grid.h)
        assert second.a == pytest.approx(3 * grid.h)
        assert second.b == pytest.approx(13 * grid.h)
        assert len(first.indices) == 10
        assert first.indices[0] == 13

    def test_covers(self, two_points):
        """Points near an inflection point are not covered."""
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import decompose_regions

        regions = decompose_regions(two_points, DyadicGrid(16))
        assert regions.covers(np.array([-1.5, 0.0, 1.5, 3.1])).tolist() == [
            True,
            False,
            True,
            False,
        ]
        assert regions.region_of(5) is regions.regions[0]
        assert regions.region_of(0) is None


class TestSplineModel:
    """Tests for build_spline and its evaluators."""

    def test_technical_spline_interpolates(self):
        """s(x_j) = f(x_j) at every knot."""
        from shapeline.functions import get_function
        from shapeline.periodic_core import DyadicGrid
        from shapeline.spline import build_technical_spline

        f = get_function("neg-sin-mix")
        grid = DyadicGrid(16)
        model = build_technical_spline(f, grid)
        knots = grid.knots()
        np.testing.assert_allclose(model.technical(knots), f(knots), atol=1e-10)

    def test_reproduces_cubics(self, quarter_points):
        """Phi_j = 0, so S is the Lagrange cubic, which is f itself."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        f = get_function("cubic-poly")
        model = build_spline(f, quarter_points, 8)
        x = np.linspace(-PI, PI, 201)
        np.testing.assert_allclose(model(x), f(x), atol=1e-8)

    def test_f_form_matches_phi_form(self, two_points):
        """Both representations of S agree."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        model = build_spline(get_function("neg-sin"), two_points, 16)
        u = np.random.default_rng(7).uniform(-PI, PI, 1000)
        np.testing.assert_allclose(model.f_form(u), model.working(u), atol=1e-9)

    def test_rotation_applied(self, two_points):
        """{0, -pi} is worked on a quarter period away."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        model = build_spline(get_function("neg-sin"), two_points, 16)
        assert model.rotation.knots == -8
        assert sorted(model.working_inflections.points) == pytest.approx([-PI / 2, PI / 2])

    def test_close_to_function(self, two_points):
        """S approximates a smooth f."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        f = get_function("neg-sin")
        model = build_spline(f, two_points, 32)
        x = np.linspace(-PI, PI, 2001)
        assert float(np.max(np.abs(model(x) - f(x)))) < 1e-2

    def test_small_n_rejected(self, two_points):
        """n below the disjointness gate raises with the minimum."""
        from shapeline.errors import NeighborhoodOverlap
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        with pytest.raises(NeighborhoodOverlap, match="minimum n=7"):
            build_spline(get_function("neg-sin"), two_points, 4)

    def test_dump_columns(self, two_points):
        """The dump carries S, its derivatives and Pi."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline

        model = build_spline(get_function("neg-sin"), two_points, 16)
        x = np.linspace(-PI, PI, 9)
        columns = model.dump_columns(x)
        assert list(columns) == ["x", "S", "S1", "S2", "Pi", "S2_Pi"]
        np.testing.assert_allclose(columns["S2_Pi"], columns["S2"] * columns["Pi"])


class TestShape:
    """Tests for verify_spline_shape."""

    @pytest.mark.parametrize("n", [16, 32, pytest.param(64, marks=pytest.mark.slow)])
    def test_nearly_coconvex(self, two_points, n):
        """S'' Pi >= 0 away from the inflection points, and the anchor jumps agree."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline, verify_spline_shape

        model = build_spline(get_function("neg-sin"), two_points, n)
        reports = verify_spline_shape(model)
        assert reports[0].check == "spline-sign"
        assert reports[0].passed
        assert reports[0].samples > 0
        assert reports[1].check == "spline-anchor-jumps"
        assert reports[1].passed
        assert reports[2].check == "spline-seam"
        assert reports[2].asserted
        assert reports[2].passed
        assert all(not r.asserted for r in reports[3:])

    def test_case_brackets_inside_regions(self, two_points):
        """Every bracket lies inside a region."""
        from shapeline.functions import get_function
        from shapeline.spline import build_spline, case_brackets

        model = build_spline(get_function("neg-sin"), two_points, 16)
        for spans in case_brackets(model).values():
            for lo, hi in spans:
                assert lo < hi
                mid = 0.5 * (lo + hi)
                assert bool(model.regions.covers(mid))

    def test_seam_report_accepts_matching_signs(self):
        """Second derivatives and the slope jump with the sign of Pi pass."""
        from shapeline.spline import seam_report

        report = seam_report("seam", -0.5, -0.2, -0.01, -1.0, 1.0, 0.1, 3.0, 1e-9)
        assert report.samples == 3
        assert report.violations == 0
        assert report.passed

    def test_seam_report_flags_a_wrong_jump(self):
        """A slope jump against the sign of Pi is a violation at the seam."""
        from shapeline.spline import seam_report

        report = seam_report("seam", 0.5, 0.2, -0.01, 1.0, 1.0, 0.1, 3.0, 1e-9)
        assert report.violations == 1
        assert report.worst_margin == pytest.approx(-0.1)
        assert report.worst_location == pytest.approx(3.0)
        assert not report.passed
