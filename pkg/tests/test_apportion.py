import pytest
from hypothesis import given, strategies as st

from taskmix.apportion import largest_remainder


def test_exact_shares_pass_through():
    assert largest_remainder(8, [0.5, 0.25, 0.25]) == [4, 2, 2]


def test_remainders_go_to_largest_fractions():
    # 0.7*24 = 16.8, 0.3*24 = 7.2
    assert largest_remainder(24, [0.7, 0.3]) == [17, 7]


def test_equal_weights_tie_break_by_index():
    assert largest_remainder(5, [1, 1, 1]) == [2, 2, 1]


def test_minimum_lifts_small_entries():
    assert largest_remainder(10, [0.97, 0.01, 0.02], minimum=1) == [8, 1, 1]


def test_capacity_spills_overflow():
    assert largest_remainder(6, [10, 1], capacity=[3, 5]) == [3, 3]


def test_minimums_exceeding_total_rejected():
    with pytest.raises(ValueError):
        largest_remainder(2, [1, 1, 1], minimum=1)


@given(
    total=st.integers(0, 2000),
    weights=st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=1, max_size=30),
)
def test_sum_is_exact(total, weights):
    alloc = largest_remainder(total, weights)
    assert sum(alloc) == total
    assert all(a >= 0 for a in alloc)


@given(total=st.integers(1, 500), weights=st.lists(st.integers(1, 1000), min_size=1, max_size=12))
def test_within_one_of_exact_share(total, weights):
    alloc = largest_remainder(total, weights)
    s = sum(weights)
    for a, w in zip(alloc, weights):
        assert abs(a - total * w / s) < 1
