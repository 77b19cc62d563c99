"""Discrete forward paths and lifted (endpoint, backward-window) pairs.

A path-dependent state at time t is represented two ways:

* as a forward path: samples of gamma on [0, t] (or [0, t) half-open) on a
  shared uniform grid;
* as a lifted pair (x, phi): the present value x in R^d plus the backward
  history window phi on [-T, 0), sampled at -T, -T+dt, ..., -dt.

The operators below move between the two representations (``restrict``,
``extend``, ``close_pair``, ``lift_path``) and realize the left-shift
semigroup on pairs (``semigroup_shift``).  All time arguments must sit on
grid nodes; this is what makes the round-trip identities exact rather than
approximate.

Window discontinuity bookkeeping is explicit metadata: a pair carries a class
tag ("C_hat", "C", "D_t", "D") and, for "D_t", the node index of its single
jump.  Operations update the metadata deterministically; nothing is inferred
from sample values unless validation is requested.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "GridSpec",
    "ForwardPath",
    "WindowPair",
    "GridAlignmentError",
    "PathDomainError",
    "CLASS_CHAT",
    "CLASS_C",
    "CLASS_DT",
    "CLASS_D",
    "restrict",
    "extend",
    "close_pair",
    "lift_path",
    "semigroup_shift",
    "norm",
    "zero_pair",
    "pair_to_json",
    "pair_from_json",
    "path_to_csv",
    "path_from_csv",
]

CLASS_CHAT = "C_hat"  # continuous window whose limit at 0- matches the endpoint
CLASS_C = "C"         # continuous window, endpoint jump at 0
CLASS_DT = "D_t"      # single interior jump at jump_at, endpoint matching
CLASS_D = "D"         # general cadlag window
_CLASSES = (CLASS_CHAT, CLASS_C, CLASS_DT, CLASS_D)

#: default discrete-continuity tolerance for analytically constructed windows
TOL_CONT = 1e-6


class GridAlignmentError(ValueError):
    """A time argument does not sit on a node of the grid."""


class PathDomainError(ValueError):
    """A path was evaluated or consumed outside its sampled domain."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on [0, T] shared by every path and window.

    ``T`` is both the horizon of the forward simulation and the length of the
    backward history window.
    """

    T: float
    N: int
    d: int

    def __post_init__(self) -> None:
        if not (self.T > 0.0 and np.isfinite(self.T)):
            raise ValueError(f"horizon T must be finite and positive, got {self.T}")
        if self.N <= 0:
            raise ValueError(f"steps N must be positive, got {self.N}")
        if self.d <= 0:
            raise ValueError(f"dimension d must be positive, got {self.d}")
        # N*dt must reproduce T to one rounding unit
        assert abs(self.N * self.dt - self.T) <= 4 * np.finfo(float).eps * self.T

    @property
    def dt(self) -> float:
        return self.T / self.N

    def node_index(self, t: float) -> int:
        """Map a time to its node index, rejecting off-grid times."""
        k = int(round(t / self.dt))
        if k < 0 or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise GridAlignmentError(f"t={t} is not a node of the grid (dt={self.dt})")
        return k

    def node_time(self, k: int) -> float:
        return k * self.dt

    def window_times(self) -> np.ndarray:
        """Window node times -T, -T+dt, ..., -dt."""
        return (np.arange(self.N) - self.N) * self.dt


def _as_values(grid: GridSpec, values, rows: int | None = None) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    if out.ndim == 1:
        out = out[:, None] if grid.d == 1 else out[None, :]
    if out.ndim != 2 or out.shape[1] != grid.d:
        raise ValueError(f"expected samples of shape (m, {grid.d}), got {out.shape}")
    if rows is not None and out.shape[0] != rows:
        raise ValueError(f"expected {rows} samples, got {out.shape[0]}")
    if not np.all(np.isfinite(out)):
        raise ValueError("samples must be finite")
    return out


@dataclass(frozen=True)
class ForwardPath:
    """A path gamma sampled on grid nodes starting at time 0.

    ``closed=True`` means the samples cover [0, t_end] inclusive (m samples,
    t_end=(m-1)*dt); ``closed=False`` means [0, t_end) half-open (m samples,
    t_end=m*dt).  ``interpolation`` tags how off-node values would be read
    ("linear" for continuous paths, "left" for cadlag ones); node reads are
    always exact.
    """

    grid: GridSpec
    values: np.ndarray
    closed: bool = True
    interpolation: str = "linear"
    start_index: int = 0  # paths are stored from node 0 in this artifact

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _as_values(self.grid, self.values))
        if len(self.values) == 0:
            raise ValueError("path needs at least one sample")
        if self.interpolation not in ("linear", "left"):
            raise ValueError(f"unknown interpolation tag {self.interpolation!r}")
        if self.start_index != 0:
            raise ValueError("paths are stored from node 0")
        end = len(self.values) - (1 if self.closed else 0)
        if end > self.grid.N:
            raise PathDomainError("path extends beyond the grid horizon")

    @property
    def end_index(self) -> int:
        """Node index of the path's end time (exclusive when not closed)."""
        return len(self.values) - 1 if self.closed else len(self.values)

    @property
    def end_time(self) -> float:
        return self.grid.node_time(self.end_index)

    def value_at_node(self, k: int) -> np.ndarray:
        if k < 0 or k >= len(self.values):
            raise PathDomainError(f"node {k} outside sampled domain")
        return self.values[k]

    def final(self) -> np.ndarray:
        """gamma(t) for a closed path."""
        if not self.closed:
            raise PathDomainError("half-open path has no final value")
        return self.values[-1]

    def with_final(self, x) -> "ForwardPath":
        """Copy with only the final sample replaced (the vertical bump)."""
        vals = self.values.copy()
        vals[-1] = np.asarray(x, dtype=float)
        return replace(self, values=vals)

    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.grid.dt


@dataclass(frozen=True)
class WindowPair:
    """Lifted state y = (x, phi): endpoint plus backward window on [-T, 0).

    ``window[i]`` is phi at node -T + i*dt.  ``jump_at`` (a window node
    index) marks the single allowed interior discontinuity for class "D_t".
    The class tag is metadata set by constructors and updated by operations.
    """

    grid: GridSpec
    x: np.ndarray
    window: np.ndarray
    cls: str = CLASS_CHAT
    jump_at: int | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float).reshape(self.grid.d)
        if not np.all(np.isfinite(x)):
            raise ValueError("endpoint must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "window", _as_values(self.grid, self.window, rows=self.grid.N))
        if self.cls not in _CLASSES:
            raise ValueError(f"unknown class tag {self.cls!r}")
        if self.cls == CLASS_DT:
            if self.jump_at is None:
                raise ValueError("class D_t requires jump_at")
            # index 0 is the domain edge -T, where no left limit exists
            if not (1 <= self.jump_at < self.grid.N):
                raise ValueError(f"jump_at={self.jump_at} not an interior node")
        elif self.jump_at is not None:
            raise ValueError(f"class {self.cls} carries no jump_at")

    def validate_continuity(self, tol_cont: float = TOL_CONT) -> None:
        """Consistency check of the C_hat tag against the stored samples.

        Discrete stand-in for x = lim_{s->0-} phi(s): the endpoint must match
        the sample at -dt within ``tol_cont``.
        """
        if self.cls == CLASS_CHAT:
            gap = float(np.max(np.abs(self.x - self.window[-1])))
            if gap > tol_cont:
                raise ValueError(
                    f"pair tagged {CLASS_CHAT} but |x - phi(-dt)| = {gap:.3g} > {tol_cont:.3g}"
                )

    def window_value(self, i: int) -> np.ndarray:
        return self.window[i]

    def __add__(self, other: "WindowPair") -> "WindowPair":
        return WindowPair(self.grid, self.x + other.x, self.window + other.window,
                          cls=_combine_class(self, other), jump_at=_combine_jump(self, other))

    def __sub__(self, other: "WindowPair") -> "WindowPair":
        return self + other.scale(-1.0)

    def scale(self, a: float) -> "WindowPair":
        return WindowPair(self.grid, a * self.x, a * self.window,
                          cls=self.cls, jump_at=self.jump_at)


def _combine_class(p: WindowPair, q: WindowPair) -> str:
    if p.cls == q.cls and p.jump_at == q.jump_at:
        return p.cls
    if {p.cls, q.cls} <= {CLASS_CHAT, CLASS_C}:
        return CLASS_C if CLASS_C in (p.cls, q.cls) else CLASS_CHAT
    return CLASS_D


def _combine_jump(p: WindowPair, q: WindowPair) -> int | None:
    if p.cls == q.cls == CLASS_DT and p.jump_at == q.jump_at:
        return p.jump_at
    return None


def zero_pair(grid: GridSpec) -> WindowPair:
    return WindowPair(grid, np.zeros(grid.d), np.zeros((grid.N, grid.d)))


# ---------------------------------------------------------------------------
# restriction / extension / closure
# ---------------------------------------------------------------------------

def _window_array(w) -> np.ndarray:
    return w.window if isinstance(w, WindowPair) else np.asarray(w, dtype=float)


def restrict(window, t: float, grid: GridSpec, interpolation: str = "linear") -> ForwardPath:
    """Read the window back as a forward path on [0, t).

    output(s) = phi(s - t) at every node s in [0, t): node k of the output is
    window node N - m + k where t = m*dt.
    """
    m = grid.node_index(t)
    if not (0 < m <= grid.N):
        raise GridAlignmentError(f"t={t} must lie in (0, T]")
    w = _window_array(window)
    return ForwardPath(grid, w[grid.N - m:], closed=False, interpolation=interpolation)


def extend(gamma: ForwardPath, t: float) -> np.ndarray:
    """Backward extension of a path on [0, t] (or [0, t)) to a window on [-T, 0).

    output(s) = gamma(0) on [-T, -t) and gamma(t + s) on [-t, 0).  The final
    sample of a closed path is never read (t + s < t strictly).
    """
    grid = gamma.grid
    m = grid.node_index(t)
    if m > gamma.end_index:
        raise PathDomainError(f"path ends at node {gamma.end_index}, cannot extend at t node {m}")
    if m == 0:
        return np.tile(gamma.values[0], (grid.N, 1))
    out = np.empty((grid.N, grid.d))
    out[: grid.N - m] = gamma.values[0]
    out[grid.N - m:] = gamma.values[:m]
    return out


def close_pair(pair: WindowPair, t: float) -> ForwardPath:
    """The path on [0, t] carried by a pair: window values on [0, t), x at t."""
    grid = pair.grid
    m = grid.node_index(t)
    if m > grid.N:
        raise GridAlignmentError(f"t={t} beyond horizon")
    vals = np.empty((m + 1, grid.d))
    vals[:m] = pair.window[grid.N - m:] if m > 0 else np.empty((0, grid.d))
    vals[m] = pair.x
    return ForwardPath(grid, vals, closed=True)


def lift_path(gamma: ForwardPath, t: float, cls: str | None = None) -> WindowPair:
    """The pair (gamma(t), backward extension of gamma at t).

    A path tagged continuous ("linear") lifts into C_hat: the extension is
    continuous and its limit at 0- is gamma(t-dt) -> gamma(t).
    """
    grid = gamma.grid
    m = grid.node_index(t)
    if gamma.closed and m > gamma.end_index:
        raise PathDomainError("cannot lift beyond the path end")
    x = gamma.values[m] if m < len(gamma.values) else gamma.final()
    if cls is None:
        cls = CLASS_CHAT if gamma.interpolation == "linear" else CLASS_D
    return WindowPair(grid, x, extend(gamma, t), cls=cls,
                      jump_at=None)


# ---------------------------------------------------------------------------
# shift semigroup
# ---------------------------------------------------------------------------

def shift_class(cls: str, jump_at: int | None, m: int, N: int) -> tuple[str, int | None]:
    """Metadata update shared by the semigroup and by lifted-state tracking.

    Shifting by m nodes moves an interior jump from index j to j-m (it falls
    off below -T when j < m) and creates a junction jump at index N-m exactly
    when the pair had an endpoint discontinuity and 0 < m < N.
    """
    if m == 0:
        return cls, jump_at
    jumps: list[int] = []
    # a jump shifted onto (or past) the domain edge -T leaves no discontinuity
    if cls == CLASS_DT and jump_at is not None and jump_at - m >= 1:
        jumps.append(jump_at - m)
    if cls in (CLASS_C, CLASS_D) and 0 < m < N:
        jumps.append(N - m)
    if cls == CLASS_D:
        return CLASS_D, None  # no finer tracking for general cadlag pairs
    if not jumps:
        return CLASS_CHAT, None
    if len(jumps) == 1:
        return CLASS_DT, jumps[0]
    return CLASS_D, None


def semigroup_shift(pair: WindowPair, t: float) -> WindowPair:
    """e^{tA}: window shifted left by t and back-filled with the endpoint.

    output window(xi) = phi(xi + t) for xi < -t and x for xi >= -t; the
    endpoint is unchanged.  A pair with an endpoint discontinuity acquires a
    window jump at -t (metadata updated via :func:`shift_class`).
    """
    grid = pair.grid
    m = grid.node_index(t)
    if m == 0:
        return pair
    N = grid.N
    w = np.empty_like(pair.window)
    if m < N:
        w[: N - m] = pair.window[m:]
    w[max(N - m, 0):] = pair.x
    cls, jump = shift_class(pair.cls, pair.jump_at, m, N)
    return WindowPair(grid, pair.x, w, cls=cls, jump_at=jump)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def norm(pair: WindowPair, kind: str = "sup", p: float = 2.0) -> float:
    """Product-space norm: ||(x,phi)||^2 = |x|^2 + ||phi||^2.

    kind "sup" uses the sup of per-node Euclidean norms; kind "lp" uses the
    left-endpoint Riemann sum for the window L^p norm (p >= 2).
    """
    x2 = float(np.dot(pair.x, pair.x))
    node_norms = np.sqrt(np.sum(pair.window ** 2, axis=1))
    if kind == "sup":
        w = float(np.max(node_norms))
    elif kind == "lp":
        if p < 2:
            raise ValueError(f"lp norm requires p >= 2, got p={p}")
        w = float((pair.grid.dt * np.sum(node_norms ** p)) ** (1.0 / p))
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(x2 + w * w))


def lp_embedding_constant(grid: GridSpec, p: float) -> float:
    """c(p,T) with norm(pair, lp) <= c * norm(pair, sup) on the grid."""
    return max(1.0, grid.T ** (1.0 / p))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def pair_to_json(pair: WindowPair) -> dict:
    return {
        "grid": {"T": pair.grid.T, "N": pair.grid.N, "d": pair.grid.d},
        "endpoint": pair.x.tolist(),
        "window": pair.window.tolist(),
        "jump_at": pair.jump_at,
        "class": pair.cls,
    }


def pair_from_json(obj: dict) -> WindowPair:
    g = obj["grid"]
    grid = GridSpec(T=float(g["T"]), N=int(g["N"]), d=int(g["d"]))
    return WindowPair(grid, np.asarray(obj["endpoint"], dtype=float),
                      np.asarray(obj["window"], dtype=float),
                      cls=obj["class"],
                      jump_at=None if obj["jump_at"] is None else int(obj["jump_at"]))


def path_to_csv(path: ForwardPath, fname) -> None:
    header = "node_time," + ",".join(f"v_{i+1}" for i in range(path.grid.d))
    data = np.column_stack([path.times(), path.values])
    np.savetxt(fname, data, delimiter=",", header=header, comments="", fmt="%.17g")


def path_from_csv(fname, grid: GridSpec, closed: bool = True) -> ForwardPath:
    data = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2)
    return ForwardPath(grid, data[:, 1:], closed=closed)
