"""Monte Carlo value functions and checks of the backward-equation forms.

The value function u(t, y) is the expected terminal functional over paths
started at the lifted state y at time t; nu(t, gamma) is the same object fed
with a forward path through lifting.  Everything here is estimated by the
batched engine under the deterministic seeding contract, and every check
that differences two estimates shares the root seed across evaluations
(common random numbers), so gaps carry meaningful error bars at desk-scale
sample counts.

Two equation forms are verified.  The differential form states that the
time derivative, the drift paired with the endpoint gradient, and half the
diffusion trace sum to zero along a smooth path.  The integrated form states
that u(t, y) minus the terminal value equals the time integral of the
derivative of u along the window velocity and the drift, plus the trace
term.  Both residuals are assembled from bump-and-revalue derivatives.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .engine import continue_phi, run_to, sample_phi, sample_phi_windowed
from .funcderiv import AnalyticPath, BumpScheme, flat_extension
from .functionals import FunctionalSpec, TerminalSpec, eval_B, eval_b, eval_Phi
from .grids import CLASS_C, CLASS_CHAT, ForwardPath, GridSpec, WindowPair, lift_path
from .mollify import MollifierSpec, approx_drift, approx_terminal, smoothing_matrix
from .sde import SDEConfig, mix64

__all__ = [
    "MCEstimate",
    "ResidualReport",
    "u_sampler",
    "mc_u",
    "mc_nu",
    "chapman_kolmogorov_check",
    "residual_pathdependent",
    "residual_integrated",
    "z_fourth_moment",
    "lipschitz_in_time",
]


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_samples: int
    root_seed: int

    @classmethod
    def from_samples(cls, samples: np.ndarray, root_seed: int) -> "MCEstimate":
        n = samples.size
        se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(samples)), se, n, int(root_seed))


@dataclass(frozen=True)
class ResidualReport:
    """The three summands of the differential-form residual and their sum.

    ``total.mean`` is the exact float sum of the term means; its standard
    error comes from the per-path sums, which keeps the common-random-number
    correlations between terms.
    """

    term_horizontal: MCEstimate
    term_drift_dot_vertical: MCEstimate
    term_half_trace: MCEstimate
    total: MCEstimate
    params: dict

    def to_json(self) -> dict:
        return {
            "term_horizontal": asdict(self.term_horizontal),
            "term_drift_dot_vertical": asdict(self.term_drift_dot_vertical),
            "term_half_trace": asdict(self.term_half_trace),
            "total": asdict(self.total),
            "params": self.params,
        }


def u_sampler(grid: GridSpec, drift: FunctionalSpec, sigma, term: TerminalSpec,
              n: int, threads: int = 1, mollify_n: int | None = None,
              smooth_terminal: bool = True):
    """Per-path terminal samples of u; with mollify_n the drift (and by
    default the terminal map) read the window through the smoother."""
    K = (smoothing_matrix(MollifierSpec(mollify_n), grid)
         if mollify_n is not None else None)

    def sampler(t: float, pair: WindowPair, root_seed: int) -> np.ndarray:
        config = SDEConfig(grid, drift, sigma, t0=t)
        if K is None:
            return sample_phi(config, pair, term, n, root_seed, threads=threads)
        return sample_phi_windowed(config, pair, term, n, root_seed,
                                   threads=threads, smooth=K,
                                   smooth_terminal=smooth_terminal)

    return sampler


def mc_u(grid: GridSpec, drift: FunctionalSpec, sigma, term: TerminalSpec,
         t: float, pair: WindowPair, n: int, root_seed: int,
         threads: int = 1, mollify_n: int | None = None) -> MCEstimate:
    """u(t, y) = E[terminal functional of the path started at (t, y)]."""
    samples = u_sampler(grid, drift, sigma, term, n, threads, mollify_n)(
        t, pair, root_seed)
    return MCEstimate.from_samples(samples, root_seed)


def mc_nu(grid: GridSpec, drift: FunctionalSpec, sigma, term: TerminalSpec,
          gamma: ForwardPath, n: int, root_seed: int, threads: int = 1,
          mollify_n: int | None = None) -> MCEstimate:
    """nu(t, gamma) with t the path's end time; evaluates u after lifting,
    so shared seeds make the identification an arithmetic identity."""
    t = gamma.end_time
    return mc_u(grid, drift, sigma, term, t, lift_path(gamma, t), n,
                root_seed, threads=threads, mollify_n=mollify_n)


# ---------------------------------------------------------------------------
# tower property
# ---------------------------------------------------------------------------

def chapman_kolmogorov_check(grid: GridSpec, drift: FunctionalSpec, sigma,
                             term: TerminalSpec, t0: float, t1: float,
                             pair: WindowPair, n_outer: int, n_inner: int,
                             root_seed: int, n_direct: int | None = None,
                             threads: int = 1) -> dict:
    """Compare u(t0, y) against the nested estimator that stops at t1 and
    restarts n_inner continuations from every intermediate state.

    Derived seeds keep the direct run, the outer legs, and the continuations
    on disjoint noise streams while staying reproducible from one root.
    """
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0} >= {t1}")
    if n_direct is None:
        n_direct = 10 * n_outer
    seed_direct = mix64(root_seed, 1)
    seed_outer = mix64(root_seed, 2)
    seed_inner = mix64(root_seed, 3)

    direct = mc_u(grid, drift, sigma, term, t0, pair, n_direct, seed_direct,
                  threads=threads)
    config = SDEConfig(grid, drift, sigma, t0=t0)
    state = run_to(config, pair, term, t1, n_outer, seed_outer, threads=threads)
    outer_means = continue_phi(config, state, term, n_inner, seed_inner,
                               threads=threads)
    nested = MCEstimate.from_samples(outer_means, seed_inner)
    gap = abs(direct.mean - nested.mean)
    stderr = math.hypot(direct.stderr, nested.stderr)
    return {
        "direct": asdict(direct),
        "nested": asdict(nested),
        "gap": gap,
        "stderr": stderr,
        "within_3se": bool(gap <= 3.0 * stderr),
        "params": {"t0": t0, "t1": t1, "n_outer": n_outer, "n_inner": n_inner,
                   "n_direct": n_direct, "root_seed": root_seed,
                   "grid": {"T": grid.T, "N": grid.N, "d": grid.d},
                   "drift": drift.kind, "terminal": term.kind},
    }


# ---------------------------------------------------------------------------
# differential-form residual along a path
# ---------------------------------------------------------------------------

def residual_pathdependent(grid: GridSpec, drift: FunctionalSpec, sigma,
                           term: TerminalSpec, path: AnalyticPath, t: float,
                           n: int, root_seed: int,
                           scheme: BumpScheme | None = None, threads: int = 1,
                           mollify_n: int | None = None) -> ResidualReport:
    """Estimate the three residual terms of the differential form at (t, gamma).

    The path must start flat (derivative zero at time zero), as the flat
    extension used by the horizontal difference is only consistent with the
    lifted dynamics under that hypothesis.
    """
    dstart = float(np.max(np.abs(np.asarray(path.dfn(np.zeros(1))))))
    if dstart > 1e-12:
        raise ValueError(
            f"path {path.name!r} has derivative {dstart} at time zero; the "
            "differential-form check needs a flat start")
    m = grid.node_index(t)
    if not 0 < m < grid.N:
        raise ValueError(f"t={t} must be an interior grid node")
    gamma = path.path(grid, t)
    x = gamma.final()
    if scheme is None:
        scheme = BumpScheme.default(grid, x)
    h_v, q = scheme.h_v, scheme.steps(grid)
    h_t = q * grid.dt
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (grid.d,))
    sampler = u_sampler(grid, drift, sig, term, n, threads, mollify_n)

    def nu(g: ForwardPath, tt: float) -> np.ndarray:
        return sampler(tt, lift_path(g, tt), root_seed)

    base = nu(gamma, t)
    horiz = (nu(flat_extension(gamma, q), t + h_t) - base) / h_t

    b = (approx_drift(MollifierSpec(mollify_n), drift, t, lift_path(gamma, t))
         if mollify_n is not None else eval_b(drift, gamma, t))
    drift_dot = np.zeros_like(base)
    trace = np.zeros_like(base)
    for i in range(grid.d):
        e = np.zeros(grid.d)
        e[i] = h_v
        plus = nu(gamma.with_final(x + e), t)
        minus = nu(gamma.with_final(x - e), t)
        drift_dot += b[i] * (plus - minus) / (2.0 * h_v)
        trace += 0.5 * sig[i] ** 2 * (plus - 2.0 * base + minus) / h_v ** 2

    th = MCEstimate.from_samples(horiz, root_seed)
    td = MCEstimate.from_samples(drift_dot, root_seed)
    tt_ = MCEstimate.from_samples(trace, root_seed)
    total_samples = horiz + drift_dot + trace
    n_eff = total_samples.size
    total = MCEstimate(th.mean + td.mean + tt_.mean,
                       float(np.std(total_samples, ddof=1) / math.sqrt(n_eff)),
                       n_eff, int(root_seed))
    params = {"t": t, "h_v": h_v, "h_t": h_t, "n": n, "root_seed": root_seed,
              "sigma": list(map(float, sig)), "path": path.name,
              "grid": {"T": grid.T, "N": grid.N, "d": grid.d},
              "drift": drift.kind, "terminal": term.kind,
              "mollify_n": mollify_n}
    return ResidualReport(th, td, tt_, total, params)


# ---------------------------------------------------------------------------
# integrated-form residual at a fixed pair
# ---------------------------------------------------------------------------

def _check_domain_pair(pair: WindowPair, window_derivative: np.ndarray) -> None:
    grid = pair.grid
    if pair.cls != CLASS_CHAT:
        raise ValueError(
            "integrated-form check needs a continuous endpoint-matching pair "
            f"(class {CLASS_CHAT!r}), got class {pair.cls!r}")
    if window_derivative.shape != (grid.N, grid.d):
        raise ValueError(
            f"window derivative shape {window_derivative.shape} does not "
            f"match ({grid.N}, {grid.d})")
    # a sampled C^1 window sits O(dt |phi'|) from its endpoint
    slope = 1.0 + float(np.max(np.abs(window_derivative)))
    pair.validate_continuity(tol_cont=2.0 * grid.dt * slope)
    # the provided derivative must track the sampled window: compare against
    # interior central differences, allowing the O(dt) junction error
    fd = (pair.window[2:] - pair.window[:-2]) / (2.0 * grid.dt)
    mismatch = float(np.max(np.abs(fd - window_derivative[1:-1])))
    tol = 0.25 * (1.0 + float(np.max(np.abs(window_derivative))))
    if mismatch > tol:
        raise ValueError(
            f"window derivative disagrees with the sampled window "
            f"(max gap {mismatch:.3g} > {tol:.3g}); the pair must carry a "
            "differentiable window with its analytic derivative")


def _quad_nodes(grid: GridSpec, t: float, m_quad: int) -> tuple[list[float], float]:
    """Composite midpoint nodes on [t, T], snapped to the grid."""
    w = (grid.T - t) / m_quad
    nodes = []
    for q in range(m_quad):
        s = t + (q + 0.5) * w
        k = min(int(round(s / grid.dt)), grid.N - 1)
        nodes.append(grid.node_time(k))
    return nodes, w


def residual_integrated(grid: GridSpec, drift: FunctionalSpec, sigma,
                        term: TerminalSpec, pair: WindowPair,
                        window_derivative, t: float, n: int, root_seed: int,
                        scheme: BumpScheme | None = None, n_quad: int = 8,
                        threads: int = 1,
                        mollify_n: int | None = None) -> dict:
    """Both sides of the integrated form at a fixed domain pair.

    Left side: u(t, y) minus the terminal value at y.  Right side: midpoint
    time quadrature of the directional derivative of u(s, .) along the
    window velocity (0, phi') and along the drift (b, 0), plus half the
    diffusion trace of second directionals.  The quadrature bias is
    estimated by re-evaluating with half the nodes.
    """
    wd = np.asarray(window_derivative, dtype=float)
    _check_domain_pair(pair, wd)
    m = grid.node_index(t)
    if not 0 <= m < grid.N:
        raise ValueError(f"t={t} must be a grid node before the horizon")
    if scheme is None:
        scheme = BumpScheme.default(grid, pair.x)
    h_v = scheme.h_v
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (grid.d,))
    sampler = u_sampler(grid, drift, sig, term, n, threads, mollify_n)
    mol = MollifierSpec(mollify_n) if mollify_n is not None else None

    lhs_samples = sampler(t, pair, root_seed)
    lhs = MCEstimate.from_samples(lhs_samples, root_seed)
    phi0 = (approx_terminal(mol, term, pair) if mol is not None
            else eval_Phi(term, pair))

    dir_window = WindowPair(grid, np.zeros(grid.d), wd, cls=CLASS_C)

    def directional_samples(s: float, direction: WindowPair) -> np.ndarray:
        plus = sampler(s, pair + direction.scale(h_v), root_seed)
        minus = sampler(s, pair + direction.scale(-h_v), root_seed)
        return (plus - minus) / (2.0 * h_v)

    def rhs_at(m_quad: int) -> tuple[float, np.ndarray]:
        nodes, w = _quad_nodes(grid, t, m_quad)
        acc = np.zeros(n)
        for s in nodes:
            bvec = (approx_drift(mol, drift, s, pair) if mol is not None
                    else eval_B(drift, s, pair).x)
            dir_drift = WindowPair(grid, bvec, np.zeros((grid.N, grid.d)),
                                   cls=CLASS_C)
            point = directional_samples(s, dir_window)
            point = point + directional_samples(s, dir_drift)
            base = sampler(s, pair, root_seed)
            for j in range(grid.d):
                e = np.zeros(grid.d)
                e[j] = 1.0
                dir_j = WindowPair(grid, e, np.zeros((grid.N, grid.d)),
                                   cls=CLASS_C)
                plus = sampler(s, pair + dir_j.scale(h_v), root_seed)
                minus = sampler(s, pair + dir_j.scale(-h_v), root_seed)
                point = point + 0.5 * sig[j] ** 2 * (
                    plus - 2.0 * base + minus) / h_v ** 2
            acc += w * point
        return float(np.mean(acc)), acc

    rhs_fine, acc_fine = rhs_at(n_quad)
    rhs_coarse, _ = rhs_at(max(n_quad // 2, 1))
    rhs_se = float(np.std(acc_fine, ddof=1) / math.sqrt(n))
    lhs_value = lhs.mean - phi0
    gap = abs(lhs_value - rhs_fine)
    quad_bias = abs(rhs_fine - rhs_coarse)
    return {
        "lhs": {"mean": lhs_value, "stderr": lhs.stderr, "u": lhs.mean,
                "terminal_at_pair": phi0},
        "rhs": {"mean": rhs_fine, "stderr": rhs_se, "n_quad": n_quad},
        "rhs_coarse": {"mean": rhs_coarse, "n_quad": max(n_quad // 2, 1)},
        "gap": gap,
        "stderr": math.hypot(lhs.stderr, rhs_se),
        "quad_bias": quad_bias,
        "params": {"t": t, "h_v": h_v, "n": n, "root_seed": root_seed,
                   "sigma": list(map(float, sig)),
                   "grid": {"T": grid.T, "N": grid.N, "d": grid.d},
                   "drift": drift.kind, "terminal": term.kind,
                   "mollify_n": mollify_n},
    }


# ---------------------------------------------------------------------------
# noise-term moment scaling
# ---------------------------------------------------------------------------

def z_fourth_moment(grid: GridSpec, sigma, t0: float, offsets, n: int,
                    root_seed: int, threads: int = 1) -> dict:
    """Fourth moment of the sup-norm of the driving-noise pair at t0+offset.

    The noise pair at time t collects the scaled Brownian partial sums since
    t0 (endpoint) and their history (window, clamped at t0), so its sup norm
    is a running maximum of partial-sum norms; the moments are accumulated
    chunk by chunk in deterministic order and fitted log-log against the
    offsets.
    """
    from .engine import CHUNK, _chunk_rows, _reduce_chunks, chunk_increments

    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (grid.d,))
    k0 = grid.node_index(t0)
    targets = []
    for off in offsets:
        ki = grid.node_index(t0 + off) - k0
        if ki < 1 or k0 + ki > grid.N:
            raise ValueError(f"offset {off} leaves the horizon")
        targets.append(ki)
    jmax = max(targets)

    def one_chunk(c: int):
        rows = _chunk_rows(n, c)
        inc = chunk_increments(grid, root_seed, c, rows)
        s = np.zeros((rows, jmax + 1, grid.d))
        np.cumsum(inc[:, k0:k0 + jmax], axis=1, out=s[:, 1:])
        a = np.sum((sig * s) ** 2, axis=2)
        runmax = np.maximum.accumulate(a, axis=1)
        sums = np.empty((len(targets), 2))
        for i, ki in enumerate(targets):
            val4 = (a[:, ki] + runmax[:, ki - 1]) ** 2
            sums[i, 0] = val4.sum()
            sums[i, 1] = (val4 ** 2).sum()
        return sums

    total = np.zeros((len(targets), 2))
    _reduce_chunks(one_chunk, -(-n // CHUNK), threads,
                   lambda c, sums: np.add(total, sums, out=total))
    means = total[:, 0] / n
    var = np.maximum(total[:, 1] / n - means ** 2, 0.0)
    stderrs = np.sqrt(var * n / max(n - 1, 1)) / math.sqrt(n)
    offs = [float(o) for o in offsets]
    slope = float(np.polyfit(np.log(offs), np.log(means), 1)[0])
    return {
        "offsets": offs,
        "moments": [float(v) for v in means],
        "stderrs": [float(v) for v in stderrs],
        "slope": slope,
        "params": {"t0": t0, "n": n, "root_seed": root_seed,
                   "sigma": list(map(float, sig)),
                   "grid": {"T": grid.T, "N": grid.N, "d": grid.d}},
    }


# ---------------------------------------------------------------------------
# time regularity of the value function
# ---------------------------------------------------------------------------

def lipschitz_in_time(grid: GridSpec, drift: FunctionalSpec, sigma,
                      term: TerminalSpec, pair: WindowPair, ts, n: int,
                      root_seed: int, threads: int = 1) -> dict:
    """u(., y) sampled along time nodes with shared seeds, with the largest
    increment ratio |u(t_{i+1}) - u(t_i)| / (t_{i+1} - t_i) fitted as L."""
    ts = [float(t) for t in ts]
    if sorted(ts) != ts or len(ts) < 2:
        raise ValueError("ts must be an increasing list of at least two times")
    ests = [mc_u(grid, drift, sigma, term, t, pair, n, root_seed,
                 threads=threads) for t in ts]
    rates = []
    for a, b, ta, tb in zip(ests, ests[1:], ts, ts[1:]):
        rates.append(abs(b.mean - a.mean) / (tb - ta))
    return {
        "ts": ts,
        "means": [e.mean for e in ests],
        "stderrs": [e.stderr for e in ests],
        "rates": rates,
        "fitted_L": max(rates),
        "params": {"n": n, "root_seed": root_seed,
                   "grid": {"T": grid.T, "N": grid.N, "d": grid.d},
                   "drift": drift.kind, "terminal": term.kind},
    }
