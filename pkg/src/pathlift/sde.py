"""Euler-Maruyama simulation of path-dependent SDEs in the lifted frame.

The forward equation dX(t) = b_t(X restricted to [0, t]) dt + sigma dW(t)
starts at time t0 from a lifted state (x0, phi0): values of the path before
t0 come from the initial window.  A :class:`Trajectory` stores the complete
record on [t0 - T, T] so the lifted state at any node is a pure slice, with
discontinuity metadata evolved by the same rule as the shift semigroup.

Also here: the two convolution terms of the mild solution formula (the
stochastic one driven by the Brownian increments, the deterministic one
integrating the drift with trapezoid weights), and the first and second
variation equations realized as secondary Euler recursions along a base
trajectory.  Because the variations use the same grid and the same left-point
rule as the flow itself, they are exact derivatives of the discrete flow map,
not approximations of continuum objects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functionals import FunctionalSpec, d2B_direction, dB_direction, eval_b
from .grids import (
    CLASS_CHAT,
    ForwardPath,
    GridSpec,
    WindowPair,
    shift_class,
    zero_pair,
)

__all__ = [
    "SDEConfig",
    "NoiseDraw",
    "Trajectory",
    "SimulationDiverged",
    "simulate",
    "stochastic_convolution",
    "deterministic_convolution",
    "first_variation",
    "second_variation",
    "mix64",
    "DIVERGENCE_BOUND",
]

DIVERGENCE_BOUND = 1e8

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(root_seed: int, i: int) -> int:
    """Derive stream seed i from a root seed (splitmix64 finalizer).

    This is the whole seeding contract: every noise stream in the package is
    Philox keyed by mix64(root, stream_index).
    """
    z = (root_seed + i * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SimulationDiverged(RuntimeError):
    """The Euler endpoint left the admissible region; carries the node."""

    def __init__(self, node: int, value: float):
        self.node = node
        self.value = value
        super().__init__(f"|X| = {value:.3g} exceeded {DIVERGENCE_BOUND:.0e} at node {node}")


@dataclass(frozen=True)
class SDEConfig:
    """Forward SDE: drift functional, diagonal diffusion, start time."""

    grid: GridSpec
    drift: FunctionalSpec
    sigma: np.ndarray  # (d,) diagonal of the diffusion matrix
    t0: float = 0.0

    def __post_init__(self) -> None:
        s = np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.grid.d,)).copy()
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("sigma must be finite and nonnegative")
        object.__setattr__(self, "sigma", s)
        if not (0.0 <= self.t0 < self.grid.T):
            raise ValueError(f"t0={self.t0} must lie in [0, T)")
        self.grid.node_index(self.t0)  # reject off-grid start times

    @property
    def k0(self) -> int:
        return self.grid.node_index(self.t0)


@dataclass(frozen=True)
class NoiseDraw:
    """Brownian increments for the full grid: row k is W(t_{k+1}) - W(t_k).

    Increments are always generated for all N steps regardless of the start
    node, so runs started at different times share the same increment at the
    same absolute node (common random numbers by construction).
    """

    grid: GridSpec
    seed: int | None
    increments: np.ndarray  # (N, d)

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.N, self.grid.d):
            raise ValueError(f"increments must have shape {(self.grid.N, self.grid.d)}")
        if not np.all(np.isfinite(inc)):
            raise ValueError("increments must be finite")
        object.__setattr__(self, "increments", inc)

    @classmethod
    def from_seed(cls, grid: GridSpec, seed: int) -> "NoiseDraw":
        rng = np.random.Generator(np.random.Philox(key=seed & _MASK64))
        inc = np.sqrt(grid.dt) * rng.standard_normal((grid.N, grid.d))
        return cls(grid, seed, inc)

    def brownian_sums(self, k0: int = 0) -> np.ndarray:
        """S[j] = W(t_{k0+j}) - W(t_{k0}) for j = 0 .. N - k0."""
        out = np.zeros((self.grid.N - k0 + 1, self.grid.d))
        np.cumsum(self.increments[k0:], axis=0, out=out[1:])
        return out


@dataclass(frozen=True)
class Trajectory:
    """Complete simulation record on [t0 - T, T].

    ``values[r]`` holds the state at absolute node r + k0 - N; rows 0 .. N-1
    are the initial window, row N the start value, later rows the Euler
    iterates.  The lifted state at any node is a slice plus metadata evolved
    by :func:`pathlift.grids.shift_class`.
    """

    grid: GridSpec
    t0: float
    values: np.ndarray  # (2N - k0 + 1, d)
    cls0: str = CLASS_CHAT
    jump0: int | None = None

    @property
    def k0(self) -> int:
        return self.grid.node_index(self.t0)

    def _row(self, t: float) -> int:
        k = self.grid.node_index(t)
        if not (self.k0 <= k <= self.grid.N):
            raise ValueError(f"t={t} outside the simulated range [{self.t0}, {self.grid.T}]")
        return k - self.k0 + self.grid.N

    def state_at(self, t: float) -> WindowPair:
        """Lifted state Y(t) = (X(t), history window)."""
        r = self._row(t)
        m = r - self.grid.N  # nodes elapsed since t0
        cls, jump = shift_class(self.cls0, self.jump0, m, self.grid.N)
        return WindowPair(self.grid, self.values[r], self.values[r - self.grid.N: r],
                          cls=cls, jump_at=jump)

    def endpoint(self, t: float) -> np.ndarray:
        return self.values[self._row(t)]

    def forward_path(self, t: float | None = None) -> ForwardPath:
        """The carried path on [0, t] (default: the full horizon)."""
        k = self.grid.N if t is None else self.grid.node_index(t)
        lo = self.grid.N - self.k0
        return ForwardPath(self.grid, self.values[lo: lo + k + 1], closed=True)

    def times(self) -> np.ndarray:
        """Absolute node times from t0 - T to T."""
        lo = self.k0 - self.grid.N
        return np.arange(lo, self.grid.N + 1) * self.grid.dt

    def to_csv(self, fname) -> None:
        header = "node_time," + ",".join(f"v_{i+1}" for i in range(self.grid.d))
        data = np.column_stack([self.times(), self.values])
        np.savetxt(fname, data, delimiter=",", header=header, comments="", fmt="%.17g")


def simulate(config: SDEConfig, initial: WindowPair, noise: NoiseDraw) -> Trajectory:
    """Euler-Maruyama forward run from the lifted state ``initial`` at t0.

    The drift at node k is the path functional evaluated on the carried path
    over [0, t_k]; values before t0 come from the initial window.
    """
    grid = config.grid
    if initial.grid != grid or noise.grid != grid:
        raise ValueError("initial state, noise and config must share one grid")
    k0 = config.k0
    lo = grid.N - k0  # row of absolute node 0
    N = grid.N
    rows = np.empty((2 * N - k0 + 1, grid.d))
    rows[:N] = initial.window
    rows[N] = initial.x
    for k in range(k0, N):
        r = k - k0 + N
        gamma = ForwardPath(grid, rows[lo: r + 1], closed=True)
        b = eval_b(config.drift, gamma, grid.node_time(k))
        rows[r + 1] = rows[r] + b * grid.dt + config.sigma * noise.increments[k]
        if not np.all(np.abs(rows[r + 1]) < DIVERGENCE_BOUND):
            raise SimulationDiverged(k + 1, float(np.max(np.abs(rows[r + 1]))))
    return Trajectory(grid, config.t0, rows, cls0=initial.cls, jump0=initial.jump_at)


def stochastic_convolution(config: SDEConfig, noise: NoiseDraw, t: float) -> WindowPair:
    """Z(t): endpoint sigma (W(t) - W(t0)), window sigma (W((t+xi) v t0) - W(t0)).

    Continuous with matching endpoint limit, hence tagged C_hat.
    """
    grid = config.grid
    k0 = config.k0
    k = grid.node_index(t)
    if not (k0 <= k <= grid.N):
        raise ValueError(f"t={t} outside [{config.t0}, {grid.T}]")
    S = noise.brownian_sums(k0)  # S[j] = W(t_{k0+j}) - W(t_{k0})
    x = config.sigma * S[k - k0]
    # window node i sits at absolute time t + s_i with s_i = -T + i dt
    nodes = np.maximum(k - grid.N + np.arange(grid.N), k0)
    window = config.sigma * S[nodes - k0]
    return WindowPair(grid, x, window, cls=CLASS_CHAT)


def drift_along(config: SDEConfig, traj: Trajectory, t: float) -> np.ndarray:
    """b_hat evaluated along the trajectory at nodes t0 .. t: shape (m+1, d)."""
    grid = config.grid
    k0, k = config.k0, grid.node_index(t)
    lo = grid.N - k0
    out = np.empty((k - k0 + 1, grid.d))
    for j in range(k0, k + 1):
        gamma = ForwardPath(grid, traj.values[lo: j - k0 + grid.N + 1], closed=True)
        out[j - k0] = eval_b(config.drift, gamma, grid.node_time(j))
    return out


def deterministic_convolution(config: SDEConfig, traj: Trajectory, t: float) -> WindowPair:
    """The drift term of the mild formula, trapezoid quadrature in time.

    Endpoint: integral of b_hat(s, Y(s)) over [t0, t].  Window node at xi:
    the same integral stopped at (t + xi) v t0.
    """
    grid = config.grid
    k0, k = config.k0, grid.node_index(t)
    b = drift_along(config, traj, t)
    cum = np.zeros((k - k0 + 1, grid.d))
    if k > k0:
        np.cumsum(0.5 * grid.dt * (b[:-1] + b[1:]), axis=0, out=cum[1:])
    nodes = np.maximum(k - grid.N + np.arange(grid.N), k0)
    return WindowPair(grid, cum[k - k0], cum[nodes - k0], cls=CLASS_CHAT)


def first_variation(config: SDEConfig, base: Trajectory, direction: WindowPair) -> Trajectory:
    """Derivative of the discrete flow map along ``direction``.

    Secondary Euler recursion driven by the drift derivative along the base
    trajectory; the constant diffusion contributes nothing.
    """
    grid = config.grid
    dt = grid.dt

    def make_step(xi_rows: np.ndarray):
        def step(k: int, r: int) -> np.ndarray:
            t = grid.node_time(k)
            y = base.state_at(t)
            cls, jump = shift_class(direction.cls, direction.jump_at, k - config.k0, grid.N)
            xi = WindowPair(grid, xi_rows[r], xi_rows[r - grid.N: r], cls=cls, jump_at=jump)
            return dt * dB_direction(config.drift, t, y, xi).x
        return step

    return _evolve_with_buffer(grid, config.k0, direction, make_step)


def second_variation(config: SDEConfig, base: Trajectory,
                     xi_h: Trajectory, xi_k: Trajectory) -> Trajectory:
    """Second derivative of the discrete flow along two first variations.

    Starts from zero and integrates the curvature of the drift in the two
    variation directions plus its derivative applied to the running second
    variation.
    """
    grid = config.grid
    dt = grid.dt

    def make_step(eta_rows: np.ndarray):
        def step(k: int, r: int) -> np.ndarray:
            t = grid.node_time(k)
            y = base.state_at(t)
            h = xi_h.state_at(t)
            kk = xi_k.state_at(t)
            cls, jump = shift_class(CLASS_CHAT, None, k - config.k0, grid.N)
            eta = WindowPair(grid, eta_rows[r], eta_rows[r - grid.N: r], cls=cls, jump_at=jump)
            src = d2B_direction(config.drift, t, y, h, kk).x \
                + dB_direction(config.drift, t, y, eta).x
            return dt * src
        return step

    return _evolve_with_buffer(grid, config.k0, zero_pair(grid), make_step)


def _evolve_with_buffer(grid: GridSpec, k0: int, initial: WindowPair, make_step) -> Trajectory:
    N = grid.N
    rows = np.empty((2 * N - k0 + 1, grid.d))
    rows[:N] = initial.window
    rows[N] = initial.x
    step = make_step(rows)
    for k in range(k0, N):
        r = k - k0 + N
        rows[r + 1] = rows[r] + step(k, r)
    return Trajectory(grid, grid.node_time(k0), rows, cls0=initial.cls, jump0=initial.jump_at)
