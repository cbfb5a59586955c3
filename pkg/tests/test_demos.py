"""Tests for the demo fixture sets."""

import pytest

from flowfactor.core.demos import DEMOS, build_demo
from flowfactor.core.errors import InputError


@pytest.mark.parametrize("name", sorted(DEMOS))
def test_targets_are_small_diffeos(name):
    demo = build_demo(name, grid=16)
    assert "identity" in demo.targets
    for key, P in demo.targets.items():
        P.validate()
        assert P.grid_shape == demo.family.grid_shape
        assert max(c.max_abs() for c in P.displacement) < 0.05, key


def test_default_grids():
    assert build_demo("t1-basic").family.grid_shape == (64,)
    assert build_demo("t2-frame").family.grid_shape == (32, 32)


def test_seed_changes_random_target_only():
    a = build_demo("t1-basic", seed=1)
    b = build_demo("t1-basic", seed=2)
    assert a.targets["smooth"].c0_distance(b.targets["smooth"]) == 0.0
    assert a.targets["random"].c0_distance(b.targets["random"]) > 0.0


def test_unknown_demo_lists_choices():
    with pytest.raises(InputError, match="t2-frame"):
        build_demo("t9")
