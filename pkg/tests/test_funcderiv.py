import json
import math

import numpy as np
import pytest

from pathlift.funcderiv import (
    ANALYTIC_PATHS,
    BumpScheme,
    analytic_path,
    flat_extension,
    frechet_directional,
    horizontal_derivative,
    make_value_sampler,
    second_directional,
    second_vertical_derivative,
    thm_kolm_check,
    vertical_derivative,
    vertical_gradient,
)
from pathlift.functionals import FunctionalSpec, TerminalSpec, eval_b
from pathlift.grids import (
    CLASS_C,
    CLASS_CHAT,
    ForwardPath,
    GridSpec,
    PathDomainError,
    WindowPair,
)

GRID = GridSpec(T=1.0, N=8, d=1)
SCHEME = BumpScheme(h_v=1e-3, h_t=4 * GRID.dt)


def ramp_path(end=3.0, n_nodes=5):
    vals = np.linspace(0.0, end, n_nodes)[:, None]
    return ForwardPath(GRID, vals)


def test_scheme_validation():
    with pytest.raises(ValueError):
        BumpScheme(h_v=0.0, h_t=0.5)
    with pytest.raises(ValueError):
        BumpScheme(h_v=1e-3, h_t=-0.1)
    with pytest.raises(ValueError):
        BumpScheme(h_v=1e-3, h_t=0.3).steps(GRID)  # not a multiple of 1/8
    assert BumpScheme(h_v=1e-3, h_t=0.5).steps(GRID) == 4


def test_scheme_default():
    sch = BumpScheme.default(GRID, x=3.0)
    assert sch.h_v == pytest.approx(4e-3)
    assert sch.h_t == pytest.approx(4 * GRID.dt)
    vec = BumpScheme.default(GRID, x=np.array([1.0, -7.0]))
    assert vec.h_v == pytest.approx(8e-3)


def test_vertical_exact_on_quadratic():
    gamma = ramp_path(end=3.0)

    def nu(g, t):
        return float(g.final()[0] ** 2)

    assert vertical_derivative(nu, gamma, 0, SCHEME) == pytest.approx(6.0, rel=1e-10)
    assert second_vertical_derivative(nu, gamma, 0, SCHEME) == pytest.approx(2.0, abs=1e-8)
    grad = vertical_gradient(nu, gamma, SCHEME)
    assert grad.shape == (1,)


def test_vertical_bump_is_local():
    gamma = ramp_path()
    before = gamma.values.copy()
    seen = []

    def nu(g, t):
        seen.append(g.values.copy())
        return float(g.final()[0])

    vertical_derivative(nu, gamma, 0, SCHEME)
    np.testing.assert_array_equal(gamma.values, before)
    assert len(seen) == 2
    for arg in seen:
        np.testing.assert_array_equal(arg[:-1], before[:-1])
        assert arg[-1, 0] != before[-1, 0]


def test_vertical_component_range():
    with pytest.raises(ValueError):
        vertical_derivative(lambda g, t: 0.0, ramp_path(), 1, SCHEME)


def test_vertical_of_integral_drift_is_zero():
    # the drift integrates over completed steps only, so the final sample
    # never enters and the vertical derivative vanishes identically
    spec = FunctionalSpec("Integral", g="sin")
    gamma = ramp_path()

    def nu(g, t):
        return float(eval_b(spec, g, t)[0])

    assert vertical_derivative(nu, gamma, 0, SCHEME) == 0.0


def test_vertical_of_running_sup_at_interior_max():
    spec = FunctionalSpec("RunningSup")
    vals = np.array([0.0, 1.0, 2.0, 1.0, 0.5])[:, None]
    gamma = ForwardPath(GRID, vals)

    def nu(g, t):
        return float(eval_b(spec, g, t)[0])

    # bump size is far below the gap to the interior max
    assert vertical_derivative(nu, gamma, 0, SCHEME) == 0.0


def test_horizontal_of_integral_is_integrand_at_endpoint():
    # flat extension adds steps with the frozen endpoint value, so the
    # left-rule integral grows by exactly h * g(gamma(t))
    spec = FunctionalSpec("Integral", g="sin")
    gamma = ramp_path(end=0.7)

    def nu(g, t):
        return float(eval_b(spec, g, t)[0])

    want = math.sin(0.7)
    assert horizontal_derivative(nu, gamma, SCHEME) == pytest.approx(want, rel=1e-12)


def test_horizontal_of_endpoint_reader_is_zero():
    gamma = ramp_path()

    def nu(g, t):
        return 2.5 * float(g.final()[0])

    assert horizontal_derivative(nu, gamma, SCHEME) == 0.0
    assert horizontal_derivative(lambda g, t: 7.0, gamma, SCHEME) == 0.0


def test_horizontal_rejects_extension_past_horizon():
    gamma = ramp_path(n_nodes=8)  # ends at node 7, only one step left
    with pytest.raises(PathDomainError):
        horizontal_derivative(lambda g, t: 0.0, gamma, SCHEME)
    assert flat_extension(gamma, 1).end_index == 8


def _const_pair(grid, x):
    return WindowPair(grid, np.array([x]), x * np.ones((grid.N, grid.d)))


def test_frechet_exact_on_quadratic_value():
    grid = GridSpec(T=1.0, N=16, d=1)
    sampler = make_value_sampler(grid, FunctionalSpec("Zero"), 0.0,
                                 TerminalSpec("EndpointFunction", f0="square"),
                                 n=32)
    pair = _const_pair(grid, 2.0)
    dir_x = WindowPair(grid, np.array([1.0]), np.zeros((16, 1)), cls=CLASS_C)
    est = frechet_directional(sampler, 0.5, pair, dir_x, SCHEME, root_seed=3)
    assert est.value == pytest.approx(4.0, abs=1e-9)
    assert est.stderr == 0.0
    sec = second_directional(sampler, 0.5, pair, dir_x, SCHEME, root_seed=3)
    assert sec.value == pytest.approx(2.0, abs=1e-6)


def test_frechet_window_direction_ignored_by_endpoint_value():
    grid = GridSpec(T=1.0, N=16, d=1)
    sampler = make_value_sampler(grid, FunctionalSpec("Zero"), 0.0,
                                 TerminalSpec("EndpointFunction", f0="square"),
                                 n=32)
    dir_w = WindowPair(grid, np.zeros(1), np.ones((16, 1)), cls=CLASS_C)
    est = frechet_directional(sampler, 0.5, _const_pair(grid, 2.0), dir_w,
                              SCHEME, root_seed=3)
    assert est.value == 0.0
    assert est.stderr == 0.0


def test_frechet_requires_seed():
    grid = GridSpec(T=1.0, N=16, d=1)
    sampler = make_value_sampler(grid, FunctionalSpec("Zero"), 0.0,
                                 TerminalSpec("EndpointFunction", f0="square"),
                                 n=8)
    pair = _const_pair(grid, 1.0)
    dir_x = WindowPair(grid, np.ones(1), np.zeros((16, 1)), cls=CLASS_C)
    with pytest.raises(ValueError, match="common random numbers"):
        frechet_directional(sampler, 0.5, pair, dir_x, SCHEME, root_seed=None)
    with pytest.raises(ValueError, match="common random numbers"):
        second_directional(sampler, 0.5, pair, dir_x, SCHEME, root_seed=None)


def test_coupled_noise_beats_independent_noise():
    grid = GridSpec(T=1.0, N=32, d=1)
    sampler = make_value_sampler(grid, FunctionalSpec("EndpointLinear", coef=0.5),
                                 1.0, TerminalSpec("EndpointFunction", f0="square"),
                                 n=2000)
    pair = _const_pair(grid, 1.0)
    dir_x = WindowPair(grid, np.ones(1), np.zeros((32, 1)), cls=CLASS_C)
    scheme = BumpScheme(h_v=1e-2, h_t=0.125)
    coupled = frechet_directional(sampler, 0.25, pair, dir_x, scheme, root_seed=5)
    loose = frechet_directional(sampler, 0.25, pair, dir_x, scheme, root_seed=5,
                                coupled=False)
    assert coupled.stderr < loose.stderr


def test_analytic_path_catalog():
    with pytest.raises(ValueError, match="valid names"):
        analytic_path("nope")
    for name, p in ANALYTIC_PATHS.items():
        assert p.name == name
        # flat start: the paths qualify for the horizontal identity
        assert float(np.asarray(p.dfn(np.array([0.0])))[0]) == pytest.approx(0.0, abs=1e-15)


def test_derivative_window_zero_on_backfill():
    grid = GridSpec(T=1.0, N=8, d=1)
    p = analytic_path("cos")
    psi = p.derivative_window(grid, 0.5)
    s = 0.5 + grid.window_times()
    assert np.all(psi[s <= 0] == 0.0)
    live = s > 0
    np.testing.assert_allclose(psi[live, 0], -2.0 * np.sin(2.0 * s[live]))


def test_thm_kolm_exact_quadratic():
    # zero drift, no noise, endpoint-square terminal: u(t, y) = x^2, so the
    # vertical identity reads 2x on both sides and every gap is exactly zero
    grid = GridSpec(T=1.0, N=64, d=1)
    reps = thm_kolm_check(grid, FunctionalSpec("Zero"),
                          TerminalSpec("EndpointFunction", f0="square"),
                          analytic_path("cos"), 0.5, 0.0, 64, root_seed=7)
    vert, horiz = reps
    assert vert["identity"] == "vertical_equals_endpoint_partial"
    assert vert["lhs"] == pytest.approx(2.0 * math.cos(1.0), rel=1e-12)
    assert vert["gap"] == 0.0
    assert vert["stderr"] == 0.0
    assert horiz["identity"] == "horizontal_decomposition"
    assert horiz["gap"] == 0.0


def test_thm_kolm_constant_path_collapses():
    # a constant path is fixed by the flat extension and its lifted pair is
    # fixed by the shift, so lhs and rhs use identical sample arrays even
    # with noise switched on
    grid = GridSpec(T=1.0, N=64, d=1)
    reps = thm_kolm_check(grid, FunctionalSpec("Zero"),
                          TerminalSpec("EndpointFunction", f0="square"),
                          analytic_path("constant"), 0.5, 1.0, 2000, root_seed=7)
    horiz = reps[1]
    assert horiz["gap"] == 0.0
    assert horiz["stderr"] > 0.0


def test_thm_kolm_integral_drift_within_noise():
    grid = GridSpec(T=1.0, N=64, d=1)
    reps = thm_kolm_check(grid, FunctionalSpec("Integral", g="sin"),
                          TerminalSpec("EndpointFunction", f0="cos_sum"),
                          analytic_path("cos"), 0.5, 0.5, 20000, root_seed=11)
    vert, horiz = reps
    # the vertical identity is an arithmetic identity under shared seeds
    assert vert["gap"] == 0.0
    h = horiz["params"]
    assert horiz["gap"] <= 3.0 * horiz["stderr"] + 1.0 * (h["h_t"] + grid.dt)
    # reports must serialize as-is
    json.dumps(reps)


def test_thm_kolm_report_fields():
    grid = GridSpec(T=1.0, N=32, d=2)
    reps = thm_kolm_check(grid, FunctionalSpec("Zero"),
                          TerminalSpec("EndpointFunction", f0="square"),
                          analytic_path("shifted_quadratic"), 0.5,
                          [1.0, 0.5], 200, root_seed=2)
    for r in reps:
        assert set(r) == {"identity", "lhs", "rhs", "gap", "stderr", "params"}
        assert r["params"]["sigma"] == [1.0, 0.5]
        assert r["params"]["grid"] == {"T": 1.0, "N": 32, "d": 2}
