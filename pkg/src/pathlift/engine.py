"""Chunked, vectorized Monte Carlo engine for batches of Euler paths.

Paths are processed in fixed chunks of :data:`CHUNK`; chunk c draws its
Brownian increments from Philox keyed by mix64(root_seed, c), always for the
full grid, so path i (= chunk*CHUNK + row) carries the same increment at the
same absolute node in every run sharing a root seed.  Chunk results are
reduced in chunk order, which makes every output byte-identical across
thread counts.

For the builtin drift and terminal kinds the whole path dependence is a small
per-path sufficient statistic (a running integral, captured samples, a
running max, a terminal accumulator), advanced in O(1) per step.  The chain
(X, statistics) is Markov, so a run can stop at an intermediate node, hand
out its :class:`ChainState`, and be continued later with fresh noise; the
concatenation is distributed exactly like an uninterrupted run.

The windowed variant keeps the full rolling record per path instead.  It is
the slow general route, needed when a smoothing matrix acts on the history
window inside the drift (the statistics trick cannot see through a smoother
that works in the moving window frame), and doubles as an independent check
of the fast route.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .functionals import F_CATALOG, G_CATALOG, FunctionalSpec, TerminalSpec
from .grids import GridSpec, WindowPair, close_pair
from .sde import DIVERGENCE_BOUND, SDEConfig, SimulationDiverged, mix64

__all__ = [
    "CHUNK",
    "ChainState",
    "chunk_increments",
    "path_increments",
    "sample_phi",
    "run_to",
    "continue_phi",
    "sample_phi_windowed",
]

CHUNK = 4096


def chunk_increments(grid: GridSpec, root_seed: int, chunk_index: int,
                     rows: int = CHUNK) -> np.ndarray:
    """Increments (rows, N, d) for one chunk; rows < CHUNK is a stream prefix."""
    rng = np.random.Generator(np.random.Philox(key=mix64(root_seed, chunk_index)))
    return np.sqrt(grid.dt) * rng.standard_normal((rows, grid.N, grid.d))


def path_increments(grid: GridSpec, root_seed: int, i: int) -> np.ndarray:
    """The (N, d) increments the engine assigns to path i."""
    c, r = divmod(i, CHUNK)
    return chunk_increments(grid, root_seed, c, rows=r + 1)[r]


@dataclass
class ChainState:
    """Per-path sufficient statistics of the discrete chain at node k.

    Fields not needed by the drift/terminal in play stay None.  ``take``
    gathers rows, which is how continuation runs fan one outer path out to
    many inner ones.
    """

    k: int
    x: np.ndarray                      # (P, d)
    integral: np.ndarray | None = None   # (P, d) running drift integral
    captured: np.ndarray | None = None   # (P, q, d) sampled values
    runmax: np.ndarray | None = None     # (P, d) running componentwise max
    term_acc: np.ndarray | None = None   # (P,) terminal window accumulator

    @property
    def n_paths(self) -> int:
        return len(self.x)

    def take(self, idx: np.ndarray) -> "ChainState":
        pick = lambda a: None if a is None else a[idx]
        return ChainState(self.k, self.x[idx], pick(self.integral),
                          pick(self.captured), pick(self.runmax), pick(self.term_acc))


def _terminal_uses_window(term: TerminalSpec) -> bool:
    return term.kind in ("IntegralPlusEndpoint", "Quadratic")


def _window_integrand(term: TerminalSpec, x: np.ndarray) -> np.ndarray:
    if term.kind == "Quadratic":
        return np.sum(x * x, axis=-1)
    return F_CATALOG[term.w][0](x)


def _init_state(config: SDEConfig, initial: WindowPair,
                term: TerminalSpec | None) -> ChainState:
    """Single-row state holding the statistics of the common initial path."""
    grid = config.grid
    k0 = config.k0
    vals = close_pair(initial, config.t0).values  # carried path on [0, t0]
    drift = config.drift
    st = ChainState(k=k0, x=vals[-1][None, :].copy())
    if drift.kind == "Integral":
        gfun = G_CATALOG[drift.g][0]
        acc = np.zeros(grid.d) if k0 == 0 else grid.dt * np.sum(gfun(vals[:k0]), axis=0)
        st.integral = acc[None, :]
    elif drift.kind == "DiscreteSampling":
        nodes = np.minimum([grid.node_index(tau) for tau in drift.sample_times], k0)
        st.captured = vals[nodes][None, :, :].copy()
    elif drift.kind == "RunningSup":
        st.runmax = np.max(vals, axis=0)[None, :]
    if term is not None and _terminal_uses_window(term):
        acc = 0.0 if k0 == 0 else grid.dt * np.sum(_window_integrand(term, vals[:k0]))
        st.term_acc = np.full(1, acc)
    return st


def _broadcast_state(st: ChainState, rows: int) -> ChainState:
    rep = lambda a: None if a is None else np.repeat(a, rows, axis=0)
    return ChainState(st.k, rep(st.x), rep(st.integral), rep(st.captured),
                      rep(st.runmax), rep(st.term_acc))


def _sample_nodes_for(drift: FunctionalSpec, grid: GridSpec) -> np.ndarray | None:
    if drift.kind != "DiscreteSampling":
        return None
    return np.array([grid.node_index(tau) for tau in drift.sample_times])


def _advance(config: SDEConfig, term: TerminalSpec | None, st: ChainState,
             inc: np.ndarray, k_stop: int) -> None:
    """Advance the chain in place from node st.k to k_stop.

    ``inc`` is indexed by absolute node (inc[:, k] drives the step leaving
    node k), which is what keeps noise common across different start times.
    """
    grid = config.grid
    dt = grid.dt
    drift = config.drift
    sig = config.sigma
    snodes = _sample_nodes_for(drift, grid)
    gfun = G_CATALOG[drift.g][0] if drift.g is not None else None
    for k in range(st.k, k_stop):
        x = st.x
        if snodes is not None:
            for j, nj in enumerate(snodes):       # future samples track the present
                if nj >= k:
                    st.captured[:, j] = x
        if st.runmax is not None:
            np.maximum(st.runmax, x, out=st.runmax)
        if drift.kind == "Zero":
            b = None
        elif drift.kind == "EndpointLinear":
            b = drift.coef * x
        elif drift.kind == "Integral":
            b = st.integral
        elif drift.kind == "DiscreteSampling":
            b = np.mean(gfun(st.captured), axis=1)
        else:  # RunningSup
            b = st.runmax
        if st.term_acc is not None:
            st.term_acc += dt * _window_integrand(term, x)
        x_new = x + sig * inc[:, k] if b is None else x + b * dt + sig * inc[:, k]
        if drift.kind == "Integral":
            st.integral = st.integral + dt * gfun(x)
        if not np.all(np.abs(x_new) < DIVERGENCE_BOUND):
            raise SimulationDiverged(k + 1, float(np.max(np.abs(x_new))))
        st.x = x_new
    # samples at the stop node itself are picked up by the next advance,
    # mirroring what an uninterrupted run would do at this node
    st.k = k_stop


def _finalize_phi(term: TerminalSpec, st: ChainState) -> np.ndarray:
    if term.kind == "EndpointFunction":
        return F_CATALOG[term.f0][0](st.x)
    if term.kind == "IntegralPlusEndpoint":
        return st.term_acc + F_CATALOG[term.f0][0](st.x)
    if term.kind == "Quadratic":
        return st.term_acc + np.sum(st.x * st.x, axis=-1)
    raise AssertionError(term.kind)


def _reduce_chunks(fn, n_chunks: int, threads: int, consume) -> None:
    """Run fn(0..n_chunks-1), feeding results to ``consume`` in chunk order.

    The reduction order is fixed regardless of thread count, and at most
    2*threads chunk results are ever in flight, so memory stays bounded for
    runs with tens of thousands of chunks.
    """
    if threads <= 1:
        for c in range(n_chunks):
            consume(c, fn(c))
        return
    from collections import deque
    with ThreadPoolExecutor(max_workers=threads) as ex:
        pending: deque = deque()
        nxt = 0
        while nxt < n_chunks or pending:
            while nxt < n_chunks and len(pending) < 2 * threads:
                pending.append((nxt, ex.submit(fn, nxt)))
                nxt += 1
            c, fut = pending.popleft()
            consume(c, fut.result())


def _chunk_rows(n: int, c: int) -> int:
    return min(CHUNK, n - c * CHUNK)


def sample_phi(config: SDEConfig, initial: WindowPair, term: TerminalSpec,
               n: int, root_seed: int, threads: int = 1) -> np.ndarray:
    """Per-path terminal values Phi(Y(T)) for n paths from one initial state."""
    base = _init_state(config, initial, term)
    N = config.grid.N

    def one_chunk(c: int) -> np.ndarray:
        rows = _chunk_rows(n, c)
        inc = chunk_increments(config.grid, root_seed, c, rows)
        st = _broadcast_state(base, rows)
        _advance(config, term, st, inc, N)
        return _finalize_phi(term, st)

    out = np.empty(n)
    _reduce_chunks(one_chunk, -(-n // CHUNK), threads,
                   lambda c, phi: out.__setitem__(slice(c * CHUNK, c * CHUNK + len(phi)), phi))
    return out


def run_to(config: SDEConfig, initial: WindowPair, term: TerminalSpec | None,
           stop_t: float, n: int, root_seed: int, threads: int = 1) -> ChainState:
    """Run n paths to an intermediate node and hand out their statistics."""
    base = _init_state(config, initial, term)
    k_stop = config.grid.node_index(stop_t)

    def one_chunk(c: int) -> ChainState:
        rows = _chunk_rows(n, c)
        inc = chunk_increments(config.grid, root_seed, c, rows)
        st = _broadcast_state(base, rows)
        _advance(config, term, st, inc, k_stop)
        return st

    parts: list[ChainState] = []
    _reduce_chunks(one_chunk, -(-n // CHUNK), threads, lambda c, st: parts.append(st))
    cat = lambda as_list: None if as_list[0] is None else np.concatenate(as_list)
    return ChainState(k_stop,
                      cat([p.x for p in parts]),
                      cat([p.integral for p in parts]),
                      cat([p.captured for p in parts]),
                      cat([p.runmax for p in parts]),
                      cat([p.term_acc for p in parts]))


def continue_phi(config: SDEConfig, state: ChainState, term: TerminalSpec,
                 n_inner: int, root_seed: int, threads: int = 1) -> np.ndarray:
    """Continue each stored path with n_inner fresh continuations.

    Returns the (P,) per-outer-path means of Phi over their continuations.
    Inner path j of outer path i is flat index i * n_inner + j; noise chunks
    are cut across the flat index, so the layout is seed-stable and the
    per-outer sums are accumulated in fixed chunk order.
    """
    P = state.n_paths
    total = P * n_inner
    N = config.grid.N

    def one_chunk(c: int) -> tuple[np.ndarray, np.ndarray]:
        rows = _chunk_rows(total, c)
        lo = c * CHUNK
        outer = (lo + np.arange(rows)) // n_inner
        st = state.take(outer)
        inc = chunk_increments(config.grid, root_seed, c, rows)
        _advance(config, term, st, inc, N)
        return outer, _finalize_phi(term, st)

    sums = np.zeros(P)

    def consume(c: int, result: tuple[np.ndarray, np.ndarray]) -> None:
        outer, phi = result
        np.add.at(sums, outer, phi)

    _reduce_chunks(one_chunk, -(-total // CHUNK), threads, consume)
    return sums / n_inner


# ---------------------------------------------------------------------------
# windowed engine: full rolling record, optional window smoothing
# ---------------------------------------------------------------------------

def _apply_smoother(K: np.ndarray, win: np.ndarray) -> np.ndarray:
    """K applied along the window axis of (P, N, d), through one dgemm."""
    P, N, d = win.shape
    flat = win.transpose(1, 0, 2).reshape(N, P * d)
    return (K @ flat).reshape(N, P, d).transpose(1, 0, 2)


def _drift_from_closed(drift: FunctionalSpec, grid: GridSpec, closed: np.ndarray,
                       k: int) -> np.ndarray | None:
    """Vectorized b_hat from closed path values (P, k+1, d) on [0, t_k]."""
    if drift.kind == "Zero":
        return None
    if drift.kind == "EndpointLinear":
        return drift.coef * closed[:, -1]
    gfun = G_CATALOG[drift.g][0] if drift.g is not None else None
    if drift.kind == "Integral":
        if k == 0:
            return np.zeros((closed.shape[0], grid.d))
        return grid.dt * np.sum(gfun(closed[:, :k]), axis=1)
    if drift.kind == "DiscreteSampling":
        nodes = np.minimum([grid.node_index(tau) for tau in drift.sample_times], k)
        return np.mean(gfun(closed[:, nodes]), axis=1)
    if drift.kind == "RunningSup":
        return np.max(closed, axis=1)
    raise AssertionError(drift.kind)


def _phi_from_record(term: TerminalSpec, grid: GridSpec, window: np.ndarray,
                     x: np.ndarray) -> np.ndarray:
    """Terminal values from the final window (P, N, d) and endpoint (P, d)."""
    if term.kind == "EndpointFunction":
        return F_CATALOG[term.f0][0](x)
    if term.kind == "IntegralPlusEndpoint":
        acc = grid.dt * np.sum(F_CATALOG[term.w][0](window), axis=1)
        return acc + F_CATALOG[term.f0][0](x)
    if term.kind == "Quadratic":
        acc = grid.dt * np.sum(window * window, axis=(1, 2))
        return acc + np.sum(x * x, axis=-1)
    raise AssertionError(term.kind)


def sample_phi_windowed(config: SDEConfig, initial: WindowPair, term: TerminalSpec,
                        n: int, root_seed: int, threads: int = 1,
                        smooth: np.ndarray | None = None,
                        smooth_terminal: bool = True) -> np.ndarray:
    """Full-record batch run; noise layout identical to :func:`sample_phi`.

    With ``smooth`` set (an N x N matrix acting on window samples), the drift
    at each step reads the smoothed window instead of the raw one, and the
    terminal map does too unless ``smooth_terminal`` is False.  Runs sharing
    a root seed with the fast engine are driven by the same increments, so
    differences between smoothed and raw functionals come out at the
    per-path level.
    """
    grid = config.grid
    N, d, dt = grid.N, grid.d, grid.dt
    k0 = config.k0
    lo = N - k0
    init_vals = close_pair(initial, config.t0).values

    def one_chunk(c: int) -> np.ndarray:
        rows = _chunk_rows(n, c)
        inc = chunk_increments(grid, root_seed, c, rows)
        rec = np.empty((rows, 2 * N - k0 + 1, d))
        rec[:, :N] = initial.window
        rec[:, N] = initial.x
        for k in range(k0, N):
            r = k - k0 + N
            if smooth is None:
                closed = rec[:, lo: r + 1]
            else:
                sm = _apply_smoother(smooth, rec[:, r - N: r])
                closed = np.concatenate([sm[:, N - k:], rec[:, r: r + 1]], axis=1)
            b = _drift_from_closed(config.drift, grid, closed, k)
            sig_inc = config.sigma * inc[:, k]
            x = rec[:, r]
            rec[:, r + 1] = x + sig_inc if b is None else x + b * dt + sig_inc
            if not np.all(np.abs(rec[:, r + 1]) < DIVERGENCE_BOUND):
                raise SimulationDiverged(k + 1, float(np.max(np.abs(rec[:, r + 1]))))
        x_T = rec[:, 2 * N - k0]
        win_T = rec[:, N - k0: 2 * N - k0]
        if smooth is not None and smooth_terminal:
            win_T = _apply_smoother(smooth, win_T)
        return _phi_from_record(term, grid, win_T, x_T)

    out = np.empty(n)
    _reduce_chunks(one_chunk, -(-n // CHUNK), threads,
                   lambda c, phi: out.__setitem__(slice(c * CHUNK, c * CHUNK + len(phi)), phi))
    return out
