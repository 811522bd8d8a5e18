import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asdopt.design_space import (
    STRATEGIES,
    DesignError,
    DesignPoint,
    decode,
    encode,
    make_grid,
    sample_uniform,
)


def test_encode_eps_point():
    v = encode(DesignPoint("eps", 0.3, eps=1.5))
    assert list(v[:6]) == [0, 0, 0, 0, 1, 0]
    assert v[6] == 0.3 and v[7] == 1.5 and v[8] == 20.0


def test_encode_inactive_slots():
    v = encode(DesignPoint("1-best", 0.5))
    assert v[7] == 8.0 and v[8] == 20.0
    assert v[:6].sum() == 1.0


def test_round_trip_random_points():
    rng = np.random.default_rng(0)
    for p in sample_uniform(1000, rng):
        assert decode(encode(p)) == p
        v = encode(p)
        np.testing.assert_array_equal(encode(decode(v)), v)


@pytest.mark.parametrize("l", [2, 7])
def test_round_trip_grid(l):
    for p in make_grid(l):
        assert decode(encode(p)) == p


def test_decode_errors():
    v = encode(DesignPoint("2-best", 0.4))
    bad = v.copy()
    bad[:6] = 0
    with pytest.raises(DesignError):
        decode(bad)
    bad = v.copy()
    bad[6] = 0.0
    with pytest.raises(DesignError):
        decode(bad)
    bad = v.copy()
    bad[0] = 1.0  # two hot entries
    with pytest.raises(DesignError):
        decode(bad)
    bad = encode(DesignPoint("thresh", 0.4, tau=3.0))
    bad[8] = 12.0
    with pytest.raises(DesignError):
        decode(bad)


def test_design_point_invariants():
    with pytest.raises(DesignError):
        DesignPoint("eps", 0.5)
    with pytest.raises(DesignError):
        DesignPoint("1-best", 0.5, eps=1.0)
    with pytest.raises(DesignError):
        DesignPoint("thresh", 0.5, tau=10.5)
    with pytest.raises(DesignError):
        DesignPoint("all", 1.0)
    with pytest.raises(DesignError):
        DesignPoint("5-best", 0.5)


@pytest.mark.parametrize("l, size", [(25, 1350), (7, 126), (2, 16), (13, 390)])
def test_grid_size(l, size):
    grid = make_grid(l)
    assert len(grid) == size == 4 * l + 2 * l * l
    assert len(set(grid)) == size


def test_grid_l2_by_hand():
    grid = make_grid(2)
    rs = sorted({p.r for p in grid})
    assert rs == pytest.approx([1 / 3, 2 / 3])
    assert sorted({p.eps for p in grid if p.strategy == "eps"}) == [0.0, 4.0]
    assert sorted({p.tau for p in grid if p.strategy == "thresh"}) == [0.0, 10.0]
    assert all(0 < p.r < 1 for p in grid)


def test_sample_uniform_reproducible():
    a = sample_uniform(16, np.random.default_rng(3))
    b = sample_uniform(16, np.random.default_rng(3))
    assert a == b and len(a) == 16


def test_strategy_frequencies():
    n = 100_000
    pts = sample_uniform(n, np.random.default_rng(4))
    counts = np.array([sum(p.strategy == s for p in pts) for s in STRATEGIES])
    sd = np.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) < 3 * sd)
    rs = np.array([p.r for p in pts])
    assert 0 < rs.min() and rs.max() < 1
    eps = np.array([p.eps for p in pts if p.eps is not None])
    assert eps.min() >= 0 and eps.max() <= 4


@settings(max_examples=300, deadline=None)
@given(
    st.sampled_from(STRATEGIES),
    st.floats(1e-9, 1 - 1e-9),
    st.floats(0, 4),
    st.floats(0, 10),
)
def test_round_trip_property(strategy, r, eps, tau):
    p = DesignPoint(
        strategy, r,
        eps=eps if strategy == "eps" else None,
        tau=tau if strategy == "thresh" else None,
    )
    assert decode(encode(p)) == p
