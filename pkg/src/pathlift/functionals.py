"""Path functionals: drift families b_t(gamma) and terminal maps Phi.

Drift functionals consume a forward path on [0, t] and return a vector in
R^d; terminal maps consume a lifted pair at the horizon and return a scalar.
Both come from small named catalogs so that specs serialize to plain JSON and
every derivative used elsewhere (directional first and second) is analytic,
never a finite difference.

The lifted drift is b_hat(t, x, phi) = b_t applied to the path carried by the
pair (window values on [0, t), x at t).  ``eval_B`` packages it as the
pair-valued drift (b_hat, 0) acting on the product space.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import (
    CLASS_C,
    CLASS_CHAT,
    ForwardPath,
    GridSpec,
    WindowPair,
    close_pair,
    extend,
)

__all__ = [
    "FunctionalSpec",
    "TerminalSpec",
    "UnsupportedDerivativeError",
    "eval_b",
    "lift_b",
    "unlift_b",
    "eval_B",
    "dB_direction",
    "d2B_direction",
    "eval_Phi",
    "dPhi",
    "d2Phi",
    "functional_to_json",
    "functional_from_json",
    "terminal_to_json",
    "terminal_from_json",
    "G_CATALOG",
    "F_CATALOG",
]


class UnsupportedDerivativeError(TypeError):
    """The requested derivative does not exist for this functional."""


# ---------------------------------------------------------------------------
# componentwise integrand catalog: name -> (g, g', g'', sup bound or None)
# ---------------------------------------------------------------------------

def _tanh_d1(x):
    return 1.0 / np.cosh(x) ** 2


def _tanh_d2(x):
    return -2.0 * np.tanh(x) / np.cosh(x) ** 2


G_CATALOG: dict[str, tuple[Callable, Callable, Callable, float | None]] = {
    "sin": (np.sin, np.cos, lambda x: -np.sin(x), 1.0),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), 1.0),
    "tanh": (np.tanh, _tanh_d1, _tanh_d2, 1.0),
    "one": (lambda x: np.ones_like(x), np.zeros_like, np.zeros_like, 1.0),
    "identity": (lambda x: np.asarray(x, dtype=float), np.ones_like, np.zeros_like, None),
}


# ---------------------------------------------------------------------------
# scalar map catalog on R^d: name -> (f, grad, hessian bilinear form)
# each acts on arrays of shape (..., d), reducing the last axis
# ---------------------------------------------------------------------------

def _square(x):
    return np.sum(x * x, axis=-1)


def _square_grad(x):
    return 2.0 * x


def _square_hess(x, h, k):
    return 2.0 * np.sum(h * k, axis=-1)


def _sum(x):
    return np.sum(x, axis=-1)


def _sum_grad(x):
    return np.ones_like(x)


def _zero_hess(x, h, k):
    return np.zeros(np.broadcast_shapes(x.shape[:-1], h.shape[:-1], k.shape[:-1]))


def _cos_sum(x):
    return np.cos(np.sum(x, axis=-1))


def _cos_sum_grad(x):
    return -np.sin(np.sum(x, axis=-1))[..., None] * np.ones_like(x)


def _cos_sum_hess(x, h, k):
    # grouping the direction product keeps the form symmetric to the bit
    return -np.cos(np.sum(x, axis=-1)) * (np.sum(h, axis=-1) * np.sum(k, axis=-1))


def _cos_mean(x):
    return np.cos(np.mean(x, axis=-1))


def _cos_mean_grad(x):
    d = x.shape[-1]
    return (-np.sin(np.mean(x, axis=-1)) / d)[..., None] * np.ones_like(x)


def _cos_mean_hess(x, h, k):
    d = x.shape[-1]
    return -np.cos(np.mean(x, axis=-1)) * (np.mean(h, axis=-1) * np.mean(k, axis=-1))


F_CATALOG: dict[str, tuple[Callable, Callable, Callable]] = {
    "square": (_square, _square_grad, _square_hess),
    "sum": (_sum, _sum_grad, _zero_hess),
    "cos_sum": (_cos_sum, _cos_sum_grad, _cos_sum_hess),
    "cos_mean": (_cos_mean, _cos_mean_grad, _cos_mean_hess),
}

_DRIFT_KINDS = ("Integral", "DiscreteSampling", "RunningSup", "EndpointLinear", "Zero")
_TERMINAL_KINDS = ("EndpointFunction", "IntegralPlusEndpoint", "Quadratic")


def _require_name(name, catalog, what) -> None:
    if name not in catalog:
        raise ValueError(f"unknown {what} {name!r}; valid names: {sorted(catalog)}")


@dataclass(frozen=True)
class FunctionalSpec:
    """Drift family b_t, one of a small set of path-dependence shapes.

    kind "Integral": b_t(gamma)_i = integral_0^t g(gamma_i(s)) ds (left
    Riemann sum over completed steps).  "DiscreteSampling": mean of
    g(gamma(tau_j & t)) over fixed sampling times, capped at the current
    time.  "RunningSup": componentwise running max over [0, t] (simulation
    only; no derivatives).  "EndpointLinear": coef * gamma(t).  "Zero":
    constant zero.

    ``alpha`` is the Hoelder exponent of the second derivative along
    directions, used by the Taylor remainder test (1.0 for every builtin).
    """

    kind: str
    g: str | None = None
    sample_times: tuple[float, ...] | None = None
    coef: float = 1.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}; valid: {_DRIFT_KINDS}")
        if self.kind == "Integral":
            _require_name(self.g, G_CATALOG, "integrand g")
        elif self.kind == "DiscreteSampling":
            _require_name(self.g, G_CATALOG, "sample map g")
            if not self.sample_times:
                raise ValueError("DiscreteSampling requires sample_times")
            object.__setattr__(self, "sample_times", tuple(float(t) for t in self.sample_times))
            if any(t < 0 for t in self.sample_times):
                raise ValueError("sample times must be nonnegative")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    def differentiable(self) -> bool:
        return self.kind != "RunningSup"

    def drift_sup_bound(self, grid: GridSpec) -> float | None:
        """Euclidean bound sup_{t, gamma} |b_t(gamma)|, None if unbounded."""
        root_d = float(np.sqrt(grid.d))
        if self.kind == "Zero":
            return 0.0
        if self.kind == "Integral":
            mg = G_CATALOG[self.g][3]
            return None if mg is None else grid.T * mg * root_d
        if self.kind == "DiscreteSampling":
            mg = G_CATALOG[self.g][3]
            return None if mg is None else mg * root_d
        return None  # EndpointLinear and RunningSup grow with the state


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal map Phi on lifted pairs at the horizon.

    kind "EndpointFunction": f0(x).  "IntegralPlusEndpoint": left Riemann sum
    of w over the window plus f0(x).  "Quadratic": squared product norm
    |x|^2 + integral |phi|^2.

    The analytic first derivative is spot-checked against a central
    difference on a probe pair at construction.
    """

    kind: str
    f0: str | None = None
    w: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in _TERMINAL_KINDS:
            raise ValueError(f"unknown terminal kind {self.kind!r}; valid: {_TERMINAL_KINDS}")
        if self.kind in ("EndpointFunction", "IntegralPlusEndpoint"):
            _require_name(self.f0, F_CATALOG, "endpoint map f0")
        if self.kind == "IntegralPlusEndpoint":
            _require_name(self.w, F_CATALOG, "window integrand w")
        self._spot_check()

    def _spot_check(self, rel_tol: float = 1e-6) -> None:
        # dPhi against a central difference at a fixed probe pair
        grid = GridSpec(T=1.0, N=4, d=2)
        rng = np.random.default_rng(20240817)
        y = WindowPair(grid, rng.normal(size=2), rng.normal(size=(4, 2)), cls=CLASS_C)
        k = WindowPair(grid, rng.normal(size=2), rng.normal(size=(4, 2)), cls=CLASS_C)
        eps = 1e-5
        fd = (eval_Phi(self, y + k.scale(eps)) - eval_Phi(self, y + k.scale(-eps))) / (2 * eps)
        an = dPhi(self, y, k)
        scale = max(1.0, abs(an))
        if abs(fd - an) > rel_tol * scale:
            raise AssertionError(
                f"analytic dPhi {an} disagrees with central difference {fd} for {self.kind}"
            )


# ---------------------------------------------------------------------------
# drift evaluation
# ---------------------------------------------------------------------------

def _closed_values(gamma: ForwardPath, t: float) -> tuple[int, np.ndarray]:
    m = gamma.grid.node_index(t)
    if not gamma.closed or m > gamma.end_index:
        raise ValueError(f"need a closed path covering [0, {t}]")
    return m, gamma.values


def _sample_nodes(spec: FunctionalSpec, grid: GridSpec, m: int) -> np.ndarray:
    return np.minimum([grid.node_index(tau) for tau in spec.sample_times], m)


def eval_b(spec: FunctionalSpec, gamma: ForwardPath, t: float) -> np.ndarray:
    """The drift vector b_t(gamma) in R^d; gamma must cover [0, t]."""
    grid = gamma.grid
    m, vals = _closed_values(gamma, t)
    if spec.kind == "Zero":
        return np.zeros(grid.d)
    if spec.kind == "Integral":
        gfun = G_CATALOG[spec.g][0]
        if m == 0:
            return np.zeros(grid.d)
        return grid.dt * np.sum(gfun(vals[:m]), axis=0)
    if spec.kind == "DiscreteSampling":
        gfun = G_CATALOG[spec.g][0]
        nodes = _sample_nodes(spec, grid, m)
        return np.mean(gfun(vals[nodes]), axis=0)
    if spec.kind == "RunningSup":
        return np.max(vals[: m + 1], axis=0)
    if spec.kind == "EndpointLinear":
        return spec.coef * vals[m]
    raise AssertionError(spec.kind)


def lift_b(spec: FunctionalSpec, t: float, pair: WindowPair) -> np.ndarray:
    """b_hat(t, x, phi): the drift read through the pair's carried path."""
    return eval_b(spec, close_pair(pair, t), t)


def unlift_b(spec: FunctionalSpec, t: float, gamma: ForwardPath) -> np.ndarray:
    """b_t(gamma) recovered through the lifted route (lift then b_hat)."""
    grid = gamma.grid
    m = grid.node_index(t)
    pair = WindowPair(grid, gamma.value_at_node(m), extend(gamma, t), cls=CLASS_C)
    return lift_b(spec, t, pair)


def eval_B(spec: FunctionalSpec, t: float, pair: WindowPair) -> WindowPair:
    """Product-space drift B(t, y) = (b_hat(t, y), 0)."""
    bhat = lift_b(spec, t, pair)
    cls = CLASS_CHAT if spec.kind == "Zero" else CLASS_C
    return WindowPair(pair.grid, bhat, np.zeros((pair.grid.N, pair.grid.d)), cls=cls)


def _pair_closed_values(pair: WindowPair, t: float) -> tuple[int, np.ndarray]:
    return pair.grid.node_index(t), close_pair(pair, t).values


def dB_direction(spec: FunctionalSpec, t: float, pair: WindowPair,
                 k: WindowPair) -> WindowPair:
    """Directional derivative DB(t, y)[k] = (D b_hat[k], 0)."""
    grid = pair.grid
    zero_w = np.zeros((grid.N, grid.d))
    if spec.kind == "Zero":
        return WindowPair(grid, np.zeros(grid.d), zero_w, cls=CLASS_CHAT)
    if spec.kind == "RunningSup":
        raise UnsupportedDerivativeError("running sup drift is not differentiable")
    if spec.kind == "EndpointLinear":
        return WindowPair(grid, spec.coef * k.x, zero_w, cls=CLASS_C)
    m, yv = _pair_closed_values(pair, t)
    _, kv = _pair_closed_values(k, t)
    gder = G_CATALOG[spec.g][1]
    if spec.kind == "Integral":
        dx = np.zeros(grid.d) if m == 0 else grid.dt * np.sum(gder(yv[:m]) * kv[:m], axis=0)
    else:  # DiscreteSampling
        nodes = _sample_nodes(spec, grid, m)
        dx = np.mean(gder(yv[nodes]) * kv[nodes], axis=0)
    return WindowPair(grid, dx, zero_w, cls=CLASS_C)


def d2B_direction(spec: FunctionalSpec, t: float, pair: WindowPair,
                  h: WindowPair, k: WindowPair) -> WindowPair:
    """Second directional derivative D^2 B(t, y)[h, k] = (D^2 b_hat[h, k], 0)."""
    grid = pair.grid
    zero_w = np.zeros((grid.N, grid.d))
    if spec.kind in ("Zero", "EndpointLinear"):
        return WindowPair(grid, np.zeros(grid.d), zero_w,
                          cls=CLASS_CHAT if spec.kind == "Zero" else CLASS_C)
    if spec.kind == "RunningSup":
        raise UnsupportedDerivativeError("running sup drift is not differentiable")
    m, yv = _pair_closed_values(pair, t)
    _, hv = _pair_closed_values(h, t)
    _, kv = _pair_closed_values(k, t)
    g2 = G_CATALOG[spec.g][2]
    if spec.kind == "Integral":
        dx = (np.zeros(grid.d) if m == 0
              else grid.dt * np.sum(g2(yv[:m]) * (hv[:m] * kv[:m]), axis=0))
    else:
        nodes = _sample_nodes(spec, grid, m)
        dx = np.mean(g2(yv[nodes]) * (hv[nodes] * kv[nodes]), axis=0)
    return WindowPair(grid, dx, zero_w, cls=CLASS_C)


# ---------------------------------------------------------------------------
# terminal maps
# ---------------------------------------------------------------------------

def eval_Phi(term: TerminalSpec, pair: WindowPair) -> float:
    """Phi(y) for the lifted state at the horizon."""
    dt = pair.grid.dt
    if term.kind == "EndpointFunction":
        return float(F_CATALOG[term.f0][0](pair.x))
    if term.kind == "IntegralPlusEndpoint":
        wsum = dt * np.sum(F_CATALOG[term.w][0](pair.window))
        return float(wsum + F_CATALOG[term.f0][0](pair.x))
    if term.kind == "Quadratic":
        return float(np.dot(pair.x, pair.x) + dt * np.sum(pair.window ** 2))
    raise AssertionError(term.kind)


def dPhi(term: TerminalSpec, pair: WindowPair, k: WindowPair) -> float:
    """Directional derivative DPhi(y)[k]."""
    dt = pair.grid.dt
    if term.kind == "EndpointFunction":
        return float(np.dot(F_CATALOG[term.f0][1](pair.x), k.x))
    if term.kind == "IntegralPlusEndpoint":
        grad_w = F_CATALOG[term.w][1](pair.window)
        return float(dt * np.sum(grad_w * k.window)
                     + np.dot(F_CATALOG[term.f0][1](pair.x), k.x))
    if term.kind == "Quadratic":
        return float(2.0 * np.dot(pair.x, k.x) + 2.0 * dt * np.sum(pair.window * k.window))
    raise AssertionError(term.kind)


def d2Phi(term: TerminalSpec, pair: WindowPair, h: WindowPair, k: WindowPair) -> float:
    """Second directional derivative D^2 Phi(y)[h, k]."""
    dt = pair.grid.dt
    if term.kind == "EndpointFunction":
        return float(F_CATALOG[term.f0][2](pair.x, h.x, k.x))
    if term.kind == "IntegralPlusEndpoint":
        hw = F_CATALOG[term.w][2](pair.window, h.window, k.window)
        return float(dt * np.sum(hw) + F_CATALOG[term.f0][2](pair.x, h.x, k.x))
    if term.kind == "Quadratic":
        return float(2.0 * np.dot(h.x, k.x) + 2.0 * dt * np.sum(h.window * k.window))
    raise AssertionError(term.kind)


# ---------------------------------------------------------------------------
# serialization (named builtins only)
# ---------------------------------------------------------------------------

def functional_to_json(spec: FunctionalSpec) -> dict:
    out: dict = {"kind": spec.kind, "alpha": spec.alpha}
    if spec.g is not None:
        out["g"] = spec.g
    if spec.kind == "DiscreteSampling":
        out["sample_times"] = list(spec.sample_times)
    if spec.kind == "EndpointLinear":
        out["coef"] = spec.coef
    return out


def functional_from_json(obj: dict) -> FunctionalSpec:
    return FunctionalSpec(
        kind=obj["kind"],
        g=obj.get("g"),
        sample_times=tuple(obj["sample_times"]) if "sample_times" in obj else None,
        coef=float(obj.get("coef", 1.0)),
        alpha=float(obj.get("alpha", 1.0)),
    )


def terminal_to_json(term: TerminalSpec) -> dict:
    out: dict = {"kind": term.kind}
    if term.f0 is not None:
        out["f0"] = term.f0
    if term.w is not None:
        out["w"] = term.w
    return out


def terminal_from_json(obj: dict) -> TerminalSpec:
    return TerminalSpec(kind=obj["kind"], f0=obj.get("f0"), w=obj.get("w"))
