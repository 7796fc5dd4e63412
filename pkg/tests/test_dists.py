import pytest
from hypothesis import given, strategies as st

from homcert.dists import Categorical, DistributionError


def test_point_mass():
    d = Categorical.point("x")
    assert d["x"] == 1.0
    assert d["y"] == 0.0
    assert d.support() == ("x",)


def test_rejects_unnormalized():
    with pytest.raises(DistributionError):
        Categorical([("a", 0.5), ("b", 0.6)])
    with pytest.raises(DistributionError):
        Categorical([("a", -0.1), ("b", 1.1)])
    with pytest.raises(DistributionError):
        Categorical([])


def test_merges_duplicates_and_drops_zeros():
    d = Categorical([("a", 0.25), ("b", 0.0), ("a", 0.25), ("c", 0.5)])
    assert d.support() == ("a", "c")
    assert d["a"] == 0.5


def test_from_weights_renormalizes():
    d = Categorical.from_weights([("a", 2.0), ("b", 6.0)])
    assert d["a"] == pytest.approx(0.25)
    assert d["b"] == pytest.approx(0.75)
    with pytest.raises(DistributionError):
        Categorical.from_weights([("a", 0.0)])


def test_l1_and_tv_distances():
    d1 = Categorical([("a", 1.0)])
    d2 = Categorical([("b", 0.5), ("c", 0.5)])
    assert d1.l1_distance(d2) == pytest.approx(2.0)
    assert d1.tv_distance(d2) == pytest.approx(1.0)
    assert d1.l1_distance(d1) == 0.0


def test_map_merges_collisions():
    d = Categorical([(1, 0.25), (2, 0.25), (3, 0.5)])
    pushed = d.map(lambda x: x % 2)
    assert pushed[1] == pytest.approx(0.75)
    assert pushed[0] == pytest.approx(0.25)


def test_expectation():
    d = Categorical([(1, 0.5), (3, 0.5)])
    assert d.expectation(float) == pytest.approx(2.0)


@given(st.lists(st.floats(min_value=0.01, max_value=10.0), min_size=1, max_size=8))
def test_from_weights_always_normalizes(weights):
    d = Categorical.from_weights(enumerate(weights))
    assert abs(sum(p for _, p in d.items()) - 1.0) <= 1e-12
