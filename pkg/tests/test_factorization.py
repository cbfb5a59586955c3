"""Tests for fragmentation, point fixing, conjugation and the full factorization."""

import numpy as np
import pytest

from flowfactor.core.config import Config, FactorizeConfig, FlowConfig, NewtonConfig
from flowfactor.core.demos import build_demo
from flowfactor.core.errors import ConjugationError, FlowFactorError, FragmentError
from flowfactor.core.factorization import (
    Chart,
    compose_all,
    conjugate_factor,
    cover,
    default_cover,
    factorize,
    fix_point,
    fragment,
    phi_map,
    recompose,
    seed_profiles,
    solve_local,
    support,
)
from flowfactor.core.flow import operator_A, pushforward, scaled_flow
from flowfactor.core.grid import (
    DiffeoGrid,
    GridFunction,
    VectorField,
    node_points,
    sample_function,
)
from flowfactor.core.hyperbolic import inverse_A, inverse_DPhi, rectify
from flowfactor.core.models import Factor, FactorList, Family, FrameElement, Provenance
from flowfactor.core.orbit import find_frame, word_map


def _dx_family(n=64):
    return Family([VectorField.constant((n,), [1.0])], ["dx"])


def _translations(n=32):
    shape = (n, n)
    return Family([VectorField.constant(shape, [1.0, 0.0]), VectorField.constant(shape, [0.0, 1.0])], ["dx", "dy"])


def _sin_family(n=32):
    shape = (n, n)
    sy = VectorField((GridFunction.zeros(shape), sample_function(2, shape, lambda x, y: np.sin(x))))
    return Family([VectorField.constant(shape, [1.0, 0.0]), sy], ["dx", "sinx_dy"])


def _small_diffeo_1d(seed, n=64, amplitude=0.01):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, size=4)
    disp = sample_function(
        1,
        (n,),
        lambda x: amplitude * (c[0] * np.sin(x + c[1]) + 0.5 * c[2] * np.cos(2 * x + c[3])),
    )
    return DiffeoGrid((disp,))


def _small_diffeo_2d(seed, n=32, amplitude=0.008):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, size=4)
    dx = sample_function(2, (n, n), lambda x, y: amplitude * (c[0] * np.sin(x) * np.cos(y) + 0.5 * np.sin(2 * y + c[1])))
    dy = sample_function(2, (n, n), lambda x, y: amplitude * (c[2] * np.cos(x + y) + 0.5 * np.sin(x + c[3])))
    return DiffeoGrid((dx, dy))


class TestCovers:
    @pytest.mark.parametrize(
        "name, dim, count, shape",
        [("arcs3", 1, 3, (64,)), ("rect2x2", 2, 4, (32, 32)), ("rect3x2", 2, 6, (32, 32))],
    )
    def test_inner_boxes_cover_the_torus(self, name, dim, count, shape):
        charts = cover(name, dim)
        assert len(charts) == count
        covered = np.zeros(shape, dtype=bool)
        for chart in charts:
            covered |= chart.inner_region(shape).mask
        assert covered.all()

    def test_unknown_cover(self):
        with pytest.raises(FragmentError, match="unknown cover"):
            cover("rect2x2", 1)

    def test_chart_radii_are_checked(self):
        with pytest.raises(FragmentError):
            Chart((0.0,), (1.0,), (0.5,))
        with pytest.raises(FragmentError):
            Chart((0.0,), (1.0,), (3.5,))

    def test_auto_cover_follows_family(self):
        cfg = FactorizeConfig()
        assert len(default_cover(_dx_family(), cfg)) == 3
        assert len(default_cover(_translations(), cfg)) == 4
        assert len(default_cover(_sin_family(), cfg)) == 6

    def test_explicit_cover(self):
        assert len(default_cover(_translations(), FactorizeConfig(cover="rect3x2"))) == 6

    def test_cutoff_is_one_on_inner_box(self):
        chart = cover("arcs3", 1)[0]
        cut = chart.cutoff((64,))
        inner = chart.inner_region((64,)).mask
        assert np.all(cut.samples[inner] == 1.0)
        assert chart.region((64,)).contains(support(DiffeoGrid((cut * 0.01,))))

    def test_sample_points_surround_center(self):
        chart = cover("rect2x2", 2)[0]
        pts = chart.sample_points()
        assert pts.shape == (8, 2)
        assert np.all(np.abs(pts - np.asarray(chart.center)) <= np.asarray(chart.outer))


class TestSupport:
    def test_identity_has_empty_support(self):
        assert support(DiffeoGrid.identity((16,))).is_empty

    def test_translation_moves_everything(self):
        assert support(DiffeoGrid.translation((16, 16), [0.1, 0.0])).is_full


class TestFragment:
    @pytest.mark.parametrize("seed", range(5))
    def test_circle_pieces_recompose(self, seed):
        P = _small_diffeo_1d(seed)
        charts = cover("arcs3", 1)
        pieces = fragment(P, charts)
        assert len(pieces) == len(charts)
        for piece, chart in zip(pieces, charts):
            assert chart.region(P.grid_shape).contains(support(piece))
        assert compose_all(pieces).c0_distance(P) <= 1e-8

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("name", ["rect2x2", "rect3x2"])
    def test_torus_pieces_recompose(self, seed, name):
        P = _small_diffeo_2d(seed)
        charts = cover(name, 2)
        pieces = fragment(P, charts)
        for piece, chart in zip(pieces, charts):
            assert chart.region(P.grid_shape).contains(support(piece))
        assert compose_all(pieces).c0_distance(P) <= 1e-8

    def test_rejects_large_input(self):
        P = _small_diffeo_1d(0, amplitude=0.5)
        with pytest.raises(FragmentError, match="exceeds") as info:
            fragment(P, cover("arcs3", 1))
        assert info.value.stage == "fragment"

    def test_identity_gives_identity_pieces(self):
        pieces = fragment(DiffeoGrid.identity((64,)), cover("arcs3", 1))
        assert all(p.is_identity() for p in pieces)


class TestRecompose:
    def test_empty_list_is_identity(self):
        assert recompose(FactorList(), _dx_family()).is_identity()

    def test_word_of_translations(self):
        family = _dx_family(16)
        P = recompose(FactorList.word([(0, 0.3), (0, -0.1)], (16,)), family)
        assert P.c0_distance(DiffeoGrid.translation((16,), [0.2])) < 1e-12

    def test_rightmost_factor_is_applied_first(self):
        family = _sin_family(16)
        factors = FactorList([
            Factor(GridFunction.constant((16, 16), 0.5), 0),
            Factor(GridFunction.constant((16, 16), 0.2), 1),
        ])
        P = recompose(factors, family)
        x = node_points((16, 16))[:, 0].reshape(16, 16)
        assert np.allclose(P.array[0], 0.5, atol=1e-12)
        assert np.allclose(P.array[1], 0.2 * np.sin(x), atol=1e-12)

    def test_trivial_factors_are_skipped(self):
        family = _dx_family(16)
        factors = FactorList([Factor(GridFunction.zeros((16,)), 0)])
        assert recompose(factors, family).is_identity()


class TestPhiMap:
    def test_profiles_must_vanish_at_q(self):
        fields = _translations(16).fields
        b = [GridFunction.constant((16, 16), 0.1), GridFunction.zeros((16, 16))]
        with pytest.raises(FlowFactorError) as info:
            phi_map(b, fields, q=[0.0, 0.0])
        assert info.value.stage == "phi"

    def test_composes_flows_in_order(self):
        family = _sin_family(16)
        b = [GridFunction.constant((16, 16), 0.5), GridFunction.constant((16, 16), 0.2)]
        expected = recompose(FactorList([Factor(b[0], 0), Factor(b[1], 1)]), family)
        assert phi_map(b, family.fields).c0_distance(expected) == 0.0

    @pytest.mark.slow
    def test_inverse_DPhi_matches_central_differences(self):
        family = _translations()
        chart = cover("rect2x2", 2)[0]
        frame = find_frame(chart.center, family, 0)
        abar = seed_profiles(frame, 0.1, chart)
        cfg = FlowConfig(steps=64)
        r = 0.45 * min(chart.outer)
        charts = [rectify(X, a, frame.q, 0.5 * r, 0.5 * r, cfg) for a, X in zip(abar, frame.fields)]
        c = VectorField((
            sample_function(2, (32, 32), lambda x, y: 0.01 * np.cos(x + y)),
            sample_function(2, (32, 32), lambda x, y: 0.01 * np.sin(x)),
        ))
        b = inverse_DPhi(abar, frame.fields, c, charts, frame.q, cfg)

        def error(h):
            plus = phi_map([a + bi * h for a, bi in zip(abar, b)], frame.fields, cfg=cfg)
            minus = phi_map([a - bi * h for a, bi in zip(abar, b)], frame.fields, cfg=cfg)
            return (plus.array - minus.array) / (2 * h) - c.array

        errs = [error(h) for h in (4.0, 2.0, 1.0)]
        assert np.max(np.abs(errs[-1])) <= 1e-4
        # the solve error is the same for every h, so differences isolate the h² term
        ratio = np.max(np.abs(errs[0] - errs[1])) / np.max(np.abs(errs[1] - errs[2]))
        assert 3.0 <= ratio <= 5.0


class TestSeedProfiles:
    def _frame(self):
        family = _dx_family()
        return find_frame([0.0], family, 0), cover("arcs3", 1)[0]

    def test_vanishes_at_q_with_prescribed_slope(self):
        frame, chart = self._frame()
        (a,) = seed_profiles(frame, 0.1, chart)
        q = frame.q[None]
        assert abs(a.evaluate(q)[0]) <= 1e-10
        assert frame.fields[0].directional(a).evaluate(q)[0] == pytest.approx(-0.1, abs=1e-12)

    def test_supported_near_q(self):
        frame, chart = self._frame()
        (a,) = seed_profiles(frame, 0.1, chart)
        assert chart.region((64,)).contains(support(DiffeoGrid((a,))))

    def test_rejects_non_positive_eps(self):
        frame, chart = self._frame()
        with pytest.raises(FlowFactorError):
            seed_profiles(frame, 0.0, chart)

    def test_off_node_center(self):
        family = _dx_family()
        chart = cover("arcs3", 1)[1]
        frame = find_frame(chart.center, family, 0)
        (a,) = seed_profiles(frame, 0.1, chart)
        q = frame.q[None]
        assert abs(a.evaluate(q)[0]) <= 1e-10
        assert frame.fields[0].directional(a).evaluate(q)[0] == pytest.approx(-0.1, abs=1e-12)

    def test_inverse_A_on_seed(self):
        frame, chart = self._frame()
        (a,) = seed_profiles(frame, 0.1, chart)
        X = frame.fields[0]
        box = rectify(X, a, frame.q, eps=0.3)
        c = sample_function(1, (64,), lambda x: np.cos(x) + 0.5 * np.sin(2 * x))
        b = inverse_A(a, X, c, box)
        assert np.max(np.abs(operator_A(a, X, b).samples - c.samples)) < 1e-5


class TestSolveLocal:
    def _setup(self):
        family = _dx_family()
        chart = cover("arcs3", 1)[0]
        frame = find_frame(chart.center, family, 0)
        return frame, chart, seed_profiles(frame, 0.1, chart)

    def test_exact_target_returns_seed(self):
        frame, chart, abar = self._setup()
        target = phi_map(abar, frame.fields)
        b, history = solve_local(target, frame, abar, chart, 0.1)
        assert history == [0.0]
        assert b[0] is abar[0]

    def test_recovers_manufactured_profile(self):
        frame, chart, abar = self._setup()
        q = float(frame.q[0])
        delta = sample_function(1, (64,), lambda x: 1e-3 * np.sin(x - q))
        expected = abar[0] + delta
        target = phi_map([expected], frame.fields)
        b, history = solve_local(target, frame, abar, chart, 0.1)
        assert len(history) >= 2
        assert history[-1] <= NewtonConfig().residual_c0
        assert all(later < earlier for earlier, later in zip(history, history[1:]))
        # Newton: the first step squares the residual up to a constant
        assert history[1] <= history[0] ** 1.5
        assert np.max(np.abs(b[0].samples - expected.samples)) <= 1e-4


class TestConjugateFactor:
    def test_without_prefix_is_single_factor(self):
        family = _dx_family()
        element = FrameElement(FactorList(), 0, family[0])
        a = sample_function(1, (64,), lambda x: 0.01 * np.sin(x))
        out = conjugate_factor(a, element, family, provenance=Provenance.SEED_UNDO)
        assert len(out) == 1
        assert out.factors[0].provenance == Provenance.SEED_UNDO

    def test_prefix_is_undone(self):
        family = _dx_family()
        letters = ((0, 0.3),)
        X = pushforward(word_map(letters, family), family[0])
        element = FrameElement(FactorList.word(list(letters), (64,)), 0, X, letters)
        a = sample_function(1, (64,), lambda x: 0.01 * np.sin(x))
        out = conjugate_factor(a, element, family)
        assert [f.provenance for f in out] == [Provenance.WORD, Provenance.LOCAL_SOLVE, Provenance.WORD]
        x = node_points((64,))[:, 0]
        assert np.allclose(out.factors[1].a.samples, 0.01 * np.sin(x + 0.3), atol=1e-12)
        assert recompose(out, family).c0_distance(scaled_flow(a, X)) <= 1e-8

    def test_mismatched_element_is_rejected(self):
        family = _translations(16)
        element = FrameElement(FactorList.word([(0, 0.3)], (16, 16)), 1, family[0])
        a = sample_function(2, (16, 16), lambda x, y: 0.01 * np.sin(x))
        with pytest.raises(ConjugationError):
            conjugate_factor(a, element, family)


class TestFixPoint:
    @pytest.mark.parametrize("seed", range(20))
    def test_circle_chart_center_is_fixed(self, seed):
        family = _dx_family()
        chart = cover("arcs3", 1)[0]
        frame = find_frame(chart.center, family, 0)
        P = _small_diffeo_1d(seed)
        prefix, fixed = fix_point(P, frame, chart, family)
        q = frame.q[None]
        assert abs(fixed(q)[0, 0] - q[0, 0]) <= 1e-10
        assert all(f.provenance == Provenance.POINT_FIX for f in prefix)
        assert recompose(prefix, family).compose(fixed).c0_distance(P) <= 1e-8

    def test_torus_chart_center_is_fixed(self):
        family = _translations()
        chart = cover("rect2x2", 2)[0]
        frame = find_frame(chart.center, family, 0)
        P = _small_diffeo_2d(4)
        prefix, fixed = fix_point(P, frame, chart, family)
        q = frame.q[None]
        assert np.max(np.abs(fixed(q)[0] - q[0])) <= 1e-10
        assert len(prefix) == 2

    def test_torus_translation_recovers_shift(self):
        family = _translations()
        chart = cover("rect2x2", 2)[0]
        frame = find_frame(chart.center, family, 0)
        P = DiffeoGrid.translation((32, 32), [0.01, -0.02])
        prefix, fixed = fix_point(P, frame, chart, family)
        # each profile is s_i times a cut-off equal to 1 on its plateau
        s = {}
        for factor in prefix:
            samples = factor.a.samples.ravel()
            s[factor.field_index] = float(samples[np.argmax(np.abs(samples))])
        assert s[0] == pytest.approx(0.01, abs=1e-8)
        assert s[1] == pytest.approx(-0.02, abs=1e-8)
        q = frame.q[None]
        assert np.max(np.abs(fixed(q)[0] - q[0])) <= 1e-10

    def test_fixed_input_is_returned_unchanged(self):
        family = _dx_family()
        chart = cover("arcs3", 1)[1]
        frame = find_frame(chart.center, family, 0)
        P = DiffeoGrid.identity((64,))
        prefix, fixed = fix_point(P, frame, chart, family)
        assert len(prefix) == 0 and fixed is P


class TestFactorize:
    def test_identity_gives_empty_list(self):
        factors = factorize(DiffeoGrid.identity((64,)), _dx_family())
        assert len(factors) == 0
        assert factors.stats["fragments"] == 0

    def test_grid_mismatch(self):
        with pytest.raises(FragmentError, match="grid mismatch"):
            factorize(DiffeoGrid.identity((32,)), _dx_family(64))

    def test_large_input_is_rejected_before_solving(self):
        with pytest.raises(FragmentError):
            factorize(_small_diffeo_1d(0, amplitude=0.5), _dx_family())

    @pytest.mark.slow
    @pytest.mark.parametrize("target", ["rotation", "smooth", "localized"])
    def test_circle_targets(self, target):
        demo = build_demo("t1-basic")
        P = demo.targets[target]
        factors = factorize(P, demo.family)
        assert recompose(factors, demo.family).c0_distance(P) <= 1e-4
        assert factors.stats["fragments"] >= 1
        assert "fragment" in factors.stats["timings"]

    @pytest.mark.slow
    def test_torus_translations(self):
        demo = build_demo("t2-translations")
        P = demo.targets["smooth"]
        factors = factorize(P, demo.family)
        assert recompose(factors, demo.family).c0_distance(P) <= 1e-3

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(2))
    def test_random_factor_list_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        family = _translations()
        phase = rng.uniform(0.0, 2 * np.pi, size=2)
        factors = FactorList([
            Factor(sample_function(2, (32, 32), lambda x, y: 0.004 * np.sin(x + phase[0]) * np.cos(y)), 0),
            Factor(sample_function(2, (32, 32), lambda x, y: 0.004 * np.cos(x - y + phase[1])), 1),
        ])
        P = recompose(factors, family)
        out = factorize(P, family)
        assert recompose(out, family).c0_distance(P) <= 1e-3

    @pytest.mark.slow
    def test_torus_frame_family(self):
        demo = build_demo("t2-frame")
        P = demo.targets["smooth"]
        config = Config()
        factors = factorize(P, demo.family, config)
        assert recompose(factors, demo.family).c0_distance(P) <= 1e-2
        counts = factors.provenance_counts()
        assert counts.get("local-solve", 0) > 0

    @pytest.mark.slow
    def test_parallel_jobs_match_serial(self):
        demo = build_demo("t1-basic")
        P = demo.targets["smooth"]
        serial = factorize(P, demo.family)
        config = Config(factorize=FactorizeConfig(jobs=3))
        parallel = factorize(P, demo.family, config)
        assert len(serial) == len(parallel)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.a.samples, b.a.samples)
