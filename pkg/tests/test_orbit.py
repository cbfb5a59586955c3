"""Tests for orbit-rank certification and frame construction."""

import numpy as np
import pytest

from flowfactor.core.errors import FrameError
from flowfactor.core.flow import pushforward
from flowfactor.core.grid import GridFunction, VectorField, sample_function
from flowfactor.core.models import Family
from flowfactor.core.orbit import (
    WordSearch,
    find_frame,
    greedy_select,
    is_transitive,
    rank_at,
    sample_lattice,
    word_map,
)

SHAPE = (16, 16)


def _translations():
    return Family([VectorField.constant(SHAPE, [1.0, 0.0]), VectorField.constant(SHAPE, [0.0, 1.0])], ["dx", "dy"])


def _dx_only():
    return Family([VectorField.constant(SHAPE, [1.0, 0.0])], ["dx"])


def _sin_family():
    sy = VectorField((GridFunction.zeros(SHAPE), sample_function(2, SHAPE, lambda x, y: np.sin(x))))
    return Family([VectorField.constant(SHAPE, [1.0, 0.0]), sy], ["dx", "sinx_dy"])


class TestGreedySelect:
    def test_picks_independent_vectors(self):
        vectors = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 0.5]])
        assert sorted(greedy_select(vectors, 2)) == [0, 2]

    def test_stops_on_dependent_set(self):
        vectors = np.array([[1.0, 1.0], [-2.0, -2.0]])
        assert len(greedy_select(vectors, 2)) == 1

    def test_skips_zero_vectors(self):
        vectors = np.array([[0.0, 0.0], [0.0, 3.0]])
        assert greedy_select(vectors, 2) == [1]


class TestWordSearch:
    def test_level_zero_is_the_family(self):
        search = WordSearch(_sin_family())
        assert [c.letters for c in search.level(0)] == [(), ()]

    def test_level_one_skips_nothing_without_prefix(self):
        search = WordSearch(_sin_family())
        assert len(search.level(1)) == 2 * len(search.letters)

    def test_level_two_skips_cancelling_letters(self):
        search = WordSearch(_dx_only(), ladder=(0.5,))
        # letters (0, 0.5) and (0, -0.5); a letter followed by its inverse is dropped
        assert len(search.level(2)) == 2

    def test_push_matches_grid_pushforward(self):
        family = _sin_family()
        search = WordSearch(family)
        letter = (0, 0.3)
        pushed = search.push(letter, family[1])
        reference = pushforward(word_map([letter], family), family[1])
        assert np.max(np.abs(pushed.array - reference.array)) < 1e-10

    def test_translation_pushes_sine_field(self):
        family = _sin_family()
        pushed = WordSearch(family).push((0, 0.3), family[1])
        x = np.array([[0.0, 1.0]])
        assert pushed.evaluate(x)[0, 1] == pytest.approx(np.sin(-0.3), abs=1e-12)


class TestRank:
    def test_translations_have_full_rank_everywhere(self):
        ok, report = is_transitive(_translations(), samples=4, depth=0)
        assert ok
        assert report.min_rank == 2
        assert len(report.entries) == 16

    def test_single_field_is_not_transitive(self):
        ok, report = is_transitive(_dx_only(), samples=4, depth=1)
        assert not ok
        assert report.min_rank == 1

    def test_bracket_generating_family_needs_words(self):
        family = _sin_family()
        search = WordSearch(family)
        ok0, report0 = is_transitive(family, samples=4, depth=0, search=search)
        ok1, report1 = is_transitive(family, samples=4, depth=1, search=search)
        assert not ok0 and report0.min_rank == 1
        assert ok1 and report1.min_rank == 2

    def test_rank_is_monotone_in_depth(self):
        family = _sin_family()
        search = WordSearch(family)
        ranks = [rank_at([0.0, 0.0], family, d, search=search).rank for d in range(3)]
        assert ranks == sorted(ranks)
        assert ranks[-1] == 2

    def test_rank_ignores_field_scaling(self):
        family = _sin_family()
        doubled = family.scaled(2.0)
        for depth in (0, 1):
            for q in sample_lattice(2, 4):
                assert rank_at(q, doubled, depth).rank == rank_at(q, family, depth).rank

    def test_witnesses_verify(self):
        family = _sin_family()
        entry = rank_at([np.pi, 1.0], family, 1)
        q = np.array([[np.pi, 1.0]])
        for w in entry.witnesses:
            moved = pushforward(word_map(w.letters, family), family[w.field_index])
            assert np.allclose(moved.evaluate(q)[0], w.vector, atol=1e-8)

    def test_gram_matches_witnesses(self):
        entry = rank_at([0.5, 0.5], _translations(), 0)
        assert np.allclose(entry.gram, np.eye(2))
        assert entry.condition == pytest.approx(1.0)

    def test_sample_lattice(self):
        pts = sample_lattice(2, 4)
        assert pts.shape == (16, 2)
        assert pts[1] == pytest.approx([0.0, np.pi / 2])


class TestFindFrame:
    def test_frame_on_degenerate_line(self):
        family = _sin_family()
        frame = find_frame([0.0, 1.0], family, 1)
        assert frame.dim == 2
        assert abs(np.linalg.det(frame.vectors_at_q())) > 1e-3
        assert frame.condition < 1e6

    def test_frame_prefix_matches_letters(self):
        frame = find_frame([0.0, 1.0], _sin_family(), 1)
        for element in frame.elements:
            assert len(element.prefix) == len(element.letters)

    def test_frame_with_region_points(self):
        family = _sin_family()
        region = np.array([[0.5, 1.0], [-0.5, 1.0], [0.0, 0.5], [0.0, 1.5]])
        frame = find_frame([0.0, 1.0], family, 1, region_points=region)
        for p in region:
            vectors = np.stack([f.evaluate(p[None])[0] for f in frame.fields], axis=-1)
            assert abs(np.linalg.det(vectors)) > 1e-6

    def test_rank_deficient_family_raises(self):
        with pytest.raises(FrameError):
            find_frame([1.0, 1.0], _dx_only(), 1)

    def test_translation_frame_is_orthonormal(self):
        frame = find_frame([1.0, 1.0], _translations(), 1)
        assert abs(np.linalg.det(frame.vectors_at_q())) == pytest.approx(1.0, abs=1e-8)
        assert frame.condition == pytest.approx(1.0, abs=1e-8)
