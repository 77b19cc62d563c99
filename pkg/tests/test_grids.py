"""Path/window representation: round trips, the shift semigroup, norms."""
from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathlift.grids import (
    CLASS_C,
    CLASS_CHAT,
    CLASS_D,
    CLASS_DT,
    ForwardPath,
    GridAlignmentError,
    GridSpec,
    PathDomainError,
    WindowPair,
    close_pair,
    extend,
    lift_path,
    lp_embedding_constant,
    norm,
    pair_from_json,
    pair_to_json,
    path_from_csv,
    path_to_csv,
    restrict,
    semigroup_shift,
    shift_class,
    zero_pair,
)


def grid(T=1.0, N=10, d=1) -> GridSpec:
    return GridSpec(T=T, N=N, d=d)


def linear_window(g: GridSpec, a: float, b: float) -> np.ndarray:
    """window(s) = a*s + b at the window nodes, same in every component."""
    s = g.window_times()
    return np.tile((a * s + b)[:, None], (1, g.d))


# ---------------------------------------------------------------------------
# frozen examples
# ---------------------------------------------------------------------------

def test_restrict_of_affine_window_recovers_shifted_line():
    # window(s) = s + 0.5 restricted at t = 0.5 reads back as path(s) = s;
    # dyadic grid keeps the comparison exact
    g = grid(T=1.0, N=8)
    w = linear_window(g, 1.0, 0.5)
    path = restrict(w, 0.5, g)
    assert not path.closed
    np.testing.assert_array_equal(path.values[:, 0], path.times())


def test_product_norm_three_four_five():
    g = grid()
    pair = WindowPair(g, [3.0], 4.0 * np.ones((g.N, 1)), cls=CLASS_C)
    assert norm(pair, "sup") == pytest.approx(5.0, abs=0, rel=0)


def test_l2_norm_of_unit_constant_window_is_one():
    # left Riemann sum: dt * N * 1^2 = T = 1
    g = grid()
    pair = WindowPair(g, [0.0], np.ones((g.N, 1)), cls=CLASS_C)
    assert norm(pair, "lp", p=2.0) == pytest.approx(1.0, abs=1e-15)


def test_shift_of_endpoint_jump_pair_creates_junction_jump():
    # (x, 0) has a discontinuity at 0; after shifting by t it sits at -t
    g = grid()
    pair = WindowPair(g, [2.0], np.zeros((g.N, 1)), cls=CLASS_C)
    out = semigroup_shift(pair, 0.3)
    m = g.node_index(0.3)
    assert out.cls == CLASS_DT
    assert out.jump_at == g.N - m
    np.testing.assert_array_equal(out.window[: g.N - m], 0.0)
    np.testing.assert_array_equal(out.window[g.N - m:], 2.0)


def test_shift_by_zero_is_identity():
    g = grid()
    pair = WindowPair(g, [1.0], linear_window(g, 2.0, 1.0), cls=CLASS_C)
    out = semigroup_shift(pair, 0.0)
    assert out is pair


def test_shift_by_full_horizon_gives_constant_window():
    g = grid()
    pair = WindowPair(g, [1.5], linear_window(g, 1.0, 0.0), cls=CLASS_C)
    out = semigroup_shift(pair, g.T)
    assert out.cls == CLASS_CHAT and out.jump_at is None
    np.testing.assert_array_equal(out.window, 1.5)


def test_interior_jump_falls_off_the_window():
    g = grid()
    w = np.zeros((g.N, 1))
    w[3:] = 1.0
    pair = WindowPair(g, [1.0], w, cls=CLASS_DT, jump_at=3)
    out = semigroup_shift(pair, 0.4)  # jump index 3 < m=4: gone
    assert out.cls == CLASS_CHAT and out.jump_at is None


# ---------------------------------------------------------------------------
# round trips
# ---------------------------------------------------------------------------

@st.composite
def grids(draw):
    N = draw(st.integers(min_value=2, max_value=16))
    d = draw(st.integers(min_value=1, max_value=3))
    T = draw(st.sampled_from([0.5, 1.0, 2.0]))
    return GridSpec(T=T, N=N, d=d)


@st.composite
def paths(draw, g: GridSpec | None = None, closed=True):
    if g is None:
        g = draw(grids())
    m = draw(st.integers(min_value=1, max_value=g.N))
    vals = draw(
        st.lists(
            st.lists(st.floats(-5, 5, allow_nan=False), min_size=g.d, max_size=g.d),
            min_size=m + (1 if closed else 0),
            max_size=m + (1 if closed else 0),
        )
    )
    return ForwardPath(g, np.array(vals), closed=closed)


@given(paths())
def test_extend_then_restrict_recovers_path_nodes(gamma):
    g = gamma.grid
    t = g.node_time(gamma.end_index)
    if gamma.end_index == 0:
        return
    w = extend(gamma, t)
    back = restrict(w, t, g)
    np.testing.assert_array_equal(back.values, gamma.values[: gamma.end_index])


@given(paths(closed=True))
def test_lift_then_close_recovers_closed_path(gamma):
    t = gamma.grid.node_time(gamma.end_index)
    pair = lift_path(gamma, t, cls=CLASS_D)
    back = close_pair(pair, t)
    np.testing.assert_array_equal(back.values, gamma.values)


def test_extend_never_reads_the_final_sample():
    g = grid()
    gamma = ForwardPath(g, np.arange(6, dtype=float))
    bumped = gamma.with_final(999.0)
    np.testing.assert_array_equal(extend(gamma, 0.5), extend(bumped, 0.5))


def test_extend_backfills_initial_value():
    g = grid()
    gamma = ForwardPath(g, [2.0, 3.0, 4.0])
    w = extend(gamma, 0.2)
    np.testing.assert_array_equal(w[: g.N - 2], 2.0)
    np.testing.assert_array_equal(w[g.N - 2:, 0], [2.0, 3.0])


# ---------------------------------------------------------------------------
# semigroup law
# ---------------------------------------------------------------------------

@st.composite
def pairs(draw, g: GridSpec | None = None):
    if g is None:
        g = draw(grids())
    x = draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=g.d, max_size=g.d))
    w = draw(
        st.lists(
            st.lists(st.floats(-5, 5, allow_nan=False), min_size=g.d, max_size=g.d),
            min_size=g.N,
            max_size=g.N,
        )
    )
    cls = draw(st.sampled_from([CLASS_CHAT, CLASS_C, CLASS_DT, CLASS_D]))
    jump = draw(st.integers(1, g.N - 1)) if cls == CLASS_DT else None
    return WindowPair(g, np.array(x), np.array(w), cls=cls, jump_at=jump)


@given(pairs(), st.data())
def test_semigroup_composition_law(pair, data):
    g = pair.grid
    i = data.draw(st.integers(0, g.N), label="first shift nodes")
    j = data.draw(st.integers(0, g.N - i), label="second shift nodes")
    two_step = semigroup_shift(semigroup_shift(pair, g.node_time(i)), g.node_time(j))
    one_step = semigroup_shift(pair, g.node_time(i + j))
    np.testing.assert_array_equal(two_step.window, one_step.window)
    np.testing.assert_array_equal(two_step.x, one_step.x)
    assert (two_step.cls, two_step.jump_at) == (one_step.cls, one_step.jump_at)


@given(pairs(), st.data())
def test_shift_preserves_continuity_class(pair, data):
    g = pair.grid
    if pair.cls != CLASS_CHAT:
        return
    t = g.node_time(data.draw(st.integers(0, g.N)))
    assert semigroup_shift(pair, t).cls == CLASS_CHAT


@given(pairs(), st.data())
def test_shift_sup_norm_bound(pair, data):
    t = pair.grid.node_time(data.draw(st.integers(0, pair.grid.N)))
    shifted = semigroup_shift(pair, t)
    assert norm(shifted, "sup") <= np.sqrt(2.0) * norm(pair, "sup") + 1e-12


@given(pairs(), st.sampled_from([2.0, 3.0, 4.0]))
def test_lp_embedding_bound(pair, p):
    c = lp_embedding_constant(pair.grid, p)
    assert norm(pair, "lp", p=p) <= c * norm(pair, "sup") * (1 + 1e-12)


# ---------------------------------------------------------------------------
# metadata rules and validation
# ---------------------------------------------------------------------------

def test_shift_class_table():
    N = 8
    assert shift_class(CLASS_CHAT, None, 3, N) == (CLASS_CHAT, None)
    assert shift_class(CLASS_C, None, 3, N) == (CLASS_DT, N - 3)
    assert shift_class(CLASS_C, None, N, N) == (CLASS_CHAT, None)
    assert shift_class(CLASS_DT, 5, 3, N) == (CLASS_DT, 2)
    assert shift_class(CLASS_DT, 3, 3, N) == (CLASS_CHAT, None)  # lands on -T
    assert shift_class(CLASS_DT, 2, 3, N) == (CLASS_CHAT, None)
    assert shift_class(CLASS_D, None, 3, N) == (CLASS_D, None)


def test_continuity_validation_flags_mismatched_tag():
    g = grid()
    w = np.zeros((g.N, 1))
    pair = WindowPair(g, [1.0], w, cls=CLASS_CHAT)
    with pytest.raises(ValueError, match="C_hat"):
        pair.validate_continuity()
    WindowPair(g, [0.0], w, cls=CLASS_CHAT).validate_continuity()


def test_off_grid_time_rejected():
    g = grid()
    pair = zero_pair(g)
    with pytest.raises(GridAlignmentError):
        semigroup_shift(pair, 0.05)
    with pytest.raises(GridAlignmentError):
        restrict(pair, 0.123, g)


def test_lift_beyond_path_end_rejected():
    g = grid()
    gamma = ForwardPath(g, [0.0, 1.0, 2.0])
    with pytest.raises(PathDomainError):
        lift_path(gamma, 0.5)


def test_pair_arithmetic_tracks_classes():
    g = grid()
    a = WindowPair(g, [1.0], np.ones((g.N, 1)), cls=CLASS_CHAT)
    b = WindowPair(g, [0.0], np.ones((g.N, 1)), cls=CLASS_C)
    assert (a + b).cls == CLASS_C
    d1 = WindowPair(g, [1.0], np.ones((g.N, 1)), cls=CLASS_DT, jump_at=2)
    d2 = WindowPair(g, [1.0], np.ones((g.N, 1)), cls=CLASS_DT, jump_at=4)
    assert (d1 + d1).jump_at == 2
    assert (d1 + d2).cls == CLASS_D


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

@given(pairs())
def test_pair_json_round_trip(pair):
    obj = json.loads(json.dumps(pair_to_json(pair)))
    back = pair_from_json(obj)
    np.testing.assert_array_equal(back.x, pair.x)
    np.testing.assert_array_equal(back.window, pair.window)
    assert (back.cls, back.jump_at) == (pair.cls, pair.jump_at)


def test_path_csv_round_trip(tmp_path):
    g = grid(d=2)
    gamma = ForwardPath(g, np.random.default_rng(0).normal(size=(5, 2)))
    f = tmp_path / "p.csv"
    path_to_csv(gamma, f)
    header = f.read_text().splitlines()[0]
    assert header == "node_time,v_1,v_2"
    back = path_from_csv(f, g)
    np.testing.assert_array_equal(back.values, gamma.values)
