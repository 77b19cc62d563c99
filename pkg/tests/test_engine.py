"""Batch engine: agreement with single-path simulation, determinism, restart."""
from __future__ import annotations

import numpy as np
import pytest

from pathlift import engine
from pathlift.engine import (
    CHUNK,
    chunk_increments,
    continue_phi,
    path_increments,
    run_to,
    sample_phi,
    sample_phi_windowed,
)
from pathlift.functionals import FunctionalSpec, TerminalSpec, eval_Phi
from pathlift.grids import ForwardPath, GridSpec, WindowPair, lift_path
from pathlift.sde import NoiseDraw, SDEConfig, SimulationDiverged, mix64, simulate


def setup(N=12, d=1, t0=0.25, drift=None, sigma=0.8):
    g = GridSpec(T=1.0, N=N, d=d)
    drift = drift or FunctionalSpec("Integral", g="sin")
    cfg = SDEConfig(g, drift, sigma=sigma, t0=t0)
    s = np.arange(g.N + 1) * g.dt
    base = ForwardPath(g, np.tile(np.sin(2 * s)[:, None], (1, d)))
    return g, cfg, lift_path(base, t0)


DRIFTS = [
    FunctionalSpec("Zero"),
    FunctionalSpec("EndpointLinear", coef=0.6),
    FunctionalSpec("Integral", g="sin"),
    FunctionalSpec("DiscreteSampling", g="tanh", sample_times=(0.0, 0.5, 1.0)),
    FunctionalSpec("RunningSup"),
]

TERMS = [
    TerminalSpec("EndpointFunction", f0="cos_sum"),
    TerminalSpec("IntegralPlusEndpoint", f0="square", w="cos_sum"),
    TerminalSpec("Quadratic"),
]


@pytest.mark.parametrize("drift", DRIFTS, ids=lambda s: s.kind)
@pytest.mark.parametrize("term", TERMS, ids=lambda t: t.kind)
def test_engine_agrees_with_single_path_simulation(drift, term):
    g, cfg, y0 = setup(drift=drift)
    root = 321
    phi = sample_phi(cfg, y0, term, n=5, root_seed=root)
    for i in range(5):
        noise = NoiseDraw(g, None, path_increments(g, root, i))
        traj = simulate(cfg, y0, noise)
        ref = eval_Phi(term, traj.state_at(g.T))
        assert phi[i] == pytest.approx(ref, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("drift", DRIFTS, ids=lambda s: s.kind)
def test_windowed_engine_agrees_with_fast_engine(drift):
    g, cfg, y0 = setup(drift=drift, d=2)
    term = TerminalSpec("IntegralPlusEndpoint", f0="square", w="sum")
    a = sample_phi(cfg, y0, term, n=7, root_seed=99)
    b = sample_phi_windowed(cfg, y0, term, n=7, root_seed=99)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_identity_smoother_changes_nothing():
    g, cfg, y0 = setup()
    term = TerminalSpec("Quadratic")
    a = sample_phi_windowed(cfg, y0, term, n=6, root_seed=5)
    b = sample_phi_windowed(cfg, y0, term, n=6, root_seed=5, smooth=np.eye(g.N))
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_results_are_a_prefix_across_batch_sizes():
    g, cfg, y0 = setup(N=8)
    term = TerminalSpec("EndpointFunction", f0="square")
    small = sample_phi(cfg, y0, term, n=CHUNK + 50, root_seed=1)
    large = sample_phi(cfg, y0, term, n=CHUNK + 300, root_seed=1)
    np.testing.assert_array_equal(small, large[: CHUNK + 50])


def test_thread_count_does_not_change_any_byte():
    g, cfg, y0 = setup(N=8)
    term = TerminalSpec("IntegralPlusEndpoint", f0="square", w="sum")
    n = 3 * CHUNK + 17
    a = sample_phi(cfg, y0, term, n=n, root_seed=7, threads=1)
    b = sample_phi(cfg, y0, term, n=n, root_seed=7, threads=4)
    np.testing.assert_array_equal(a, b)
    sa = run_to(cfg, y0, term, 0.5, n, root_seed=7, threads=1)
    sb = run_to(cfg, y0, term, 0.5, n, root_seed=7, threads=3)
    np.testing.assert_array_equal(sa.x, sb.x)
    np.testing.assert_array_equal(sa.integral, sb.integral)
    za = continue_phi(cfg, sa, term, n_inner=3, root_seed=11, threads=1)
    zb = continue_phi(cfg, sb, term, n_inner=3, root_seed=11, threads=4)
    np.testing.assert_array_equal(za, zb)
    wa = sample_phi_windowed(cfg, y0, term, n=CHUNK + 5, root_seed=7, threads=1)
    wb = sample_phi_windowed(cfg, y0, term, n=CHUNK + 5, root_seed=7, threads=4)
    np.testing.assert_array_equal(wa, wb)


def test_split_run_with_same_noise_is_bit_exact():
    # stopping at s and resuming with the same increments must reproduce the
    # uninterrupted chain exactly; the chapman check stands on this property
    g, cfg, y0 = setup(N=16, drift=FunctionalSpec("DiscreteSampling", g="tanh",
                                                  sample_times=(0.5, 0.75, 1.0)))
    term = TerminalSpec("IntegralPlusEndpoint", f0="square", w="cos_sum")
    n, root = 37, 13
    full = sample_phi(cfg, y0, term, n=n, root_seed=root)
    st = run_to(cfg, y0, term, 0.5, n, root_seed=root)
    inc = chunk_increments(g, root, 0, rows=n)
    engine._advance(cfg, term, st, inc, g.N)
    np.testing.assert_array_equal(engine._finalize_phi(term, st), full)


def test_continuation_layout_and_means():
    g, cfg, y0 = setup(N=8)
    term = TerminalSpec("EndpointFunction", f0="square")
    st = run_to(cfg, y0, term, 0.5, n=3, root_seed=21)
    z = continue_phi(cfg, st, term, n_inner=2, root_seed=22)
    assert z.shape == (3,)
    # rebuild by hand from the documented flat layout
    expect = np.zeros(3)
    for flat in range(6):
        sub = st.take(np.array([flat // 2]))
        inc = path_increments(g, 22, flat)[None]
        engine._advance(cfg, term, sub, inc, g.N)
        expect[flat // 2] += engine._finalize_phi(term, sub)[0] / 2
    np.testing.assert_allclose(z, expect, rtol=1e-14)


def test_engine_divergence_guard():
    g, cfg, y0 = setup(N=16, drift=FunctionalSpec("EndpointLinear", coef=150.0),
                       sigma=0.0, t0=0.25)
    with pytest.raises(SimulationDiverged):
        sample_phi(cfg, y0, TerminalSpec("Quadratic"), n=3, root_seed=1)


def test_zero_drift_quadratic_monte_carlo_sanity():
    # E|x + sigma W(T)|^2 = x^2 + sigma^2 T for the endpoint-square terminal
    g = GridSpec(T=1.0, N=16, d=1)
    cfg = SDEConfig(g, FunctionalSpec("Zero"), sigma=0.5)
    y0 = WindowPair(g, [1.2], np.full((g.N, 1), 1.2))
    phi = sample_phi(cfg, y0, TerminalSpec("EndpointFunction", f0="square"),
                     n=200_000, root_seed=3, threads=2)
    expect = 1.2**2 + 0.25
    assert phi.mean() == pytest.approx(expect, abs=4 * phi.std() / np.sqrt(len(phi)))
