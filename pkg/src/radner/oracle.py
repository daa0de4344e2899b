"""Brute-force ground truth on small trees.

Each agent maximizes ``E[-exp(-(rho . B^lam_T + G))]`` by backward induction.
Writing the continuation value as ``-exp(-v)``, a node with children values
``v_c`` and excess returns ``x_c = lam dt + dB_c`` solves

    min_rho  sum_c p_c exp(-rho x_c - v_c),

a smooth strictly convex scalar problem whenever ``x`` takes both signs.
The market-clearing equilibrium is found node by node by root finding on
aggregate demand, with each agent's demand computed by the same optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import CapacityError, ConvergenceError, DomainError, MonotonicityError, ValidationError
from .lattice import Measure

STRATEGY_BUDGET = 4**8
EQUILIBRIUM_BUDGET = 4**4
NEWTON_MAX_ITER = 100
# fraction of the no-arbitrage interval |lam| dt < sqrt(dt) kept for root brackets
ARBITRAGE_MARGIN = 1e-12


def _budget(tree, limit, what):
    if 4**tree.N > limit:
        raise CapacityError(f"{what} is exhaustive and limited to {limit} paths; got 4**{tree.N}")


def _grad(rho, x, logw):
    """``d/drho log sum_c exp(logw_c - rho x_c)`` and its derivative."""
    z = logw - rho[:, None] * x
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    mean = (w * x).sum(axis=1)
    var = (w * (x - mean[:, None]) ** 2).sum(axis=1)
    return -mean, var


def optimize_nodes(x: np.ndarray, logw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimize ``sum_c exp(logw_c - rho x_c)`` row by row.

    Safeguarded Newton on the first-order condition inside a sign-change
    bracket, with Brent's method as the fallback for rows Newton leaves
    unconverged.  Returns ``(rho, |first-order residual|)``.
    """
    x = np.asarray(x, dtype=float)
    logw = np.asarray(logw, dtype=float)
    n = x.shape[0]
    if np.any(x.max(axis=1) <= 0) or np.any(x.min(axis=1) >= 0):
        raise DomainError("excess return has one sign at some node: arbitrage, no optimal position")
    lo = -np.ones(n)
    hi = np.ones(n)
    for _ in range(60):
        g_lo, _ = _grad(lo, x, logw)
        g_hi, _ = _grad(hi, x, logw)
        if np.all(g_lo < 0) and np.all(g_hi > 0):
            break
        lo = np.where(g_lo < 0, lo, 2 * lo)
        hi = np.where(g_hi > 0, hi, 2 * hi)
    else:
        raise ConvergenceError("could not bracket the optimal position")
    scale = np.abs(x).max(axis=1)
    rho = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        g, h = _grad(rho, x, logw)
        done = np.abs(g) <= 1e-14 * scale
        if done.all():
            break
        lo = np.where(g < 0, rho, lo)
        hi = np.where(g > 0, rho, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = rho - g / h
        inside = np.isfinite(step) & (step > lo) & (step < hi)
        new = np.where(inside, step, 0.5 * (lo + hi))
        stalled = np.abs(new - rho) <= 4 * np.finfo(float).eps * (1 + np.abs(rho))
        rho = np.where(done, rho, new)
        if np.all(done | stalled):
            break
    g, _ = _grad(rho, x, logw)
    bad = np.flatnonzero(np.abs(g) > 1e-12 * scale)
    for k in bad:
        f = lambda r, k=k: float(_grad(np.array([r]), x[k:k + 1], logw[k:k + 1])[0][0])
        try:
            rho[k] = brentq(f, lo[k], hi[k], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        except (ValueError, RuntimeError) as exc:
            raise ConvergenceError(f"Newton and bisection both failed at a node: {exc}") from None
    g, _ = _grad(rho, x, logw)
    return rho, np.abs(g)


@dataclass(frozen=True)
class OracleSolution:
    """Value exponents ``v`` (utility ``-exp(-v)``), strategies and prices.

    For a single agent ``value``/``rho`` are lists of per-node arrays; for
    an equilibrium they carry a leading agent axis.
    """

    value: list
    rho: list
    lam: list
    residual: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def root_utility(self):
        return -np.exp(-np.asarray(self.value[0])[..., 0])


def _excess_returns(tree, t, lam_t):
    return lam_t[:, None] * tree.dt + tree.dB[None, :]


def optimal_strategy_dp(tree, lam, G, measure: Measure | None = None) -> OracleSolution:
    """Best response of one agent to a given price of risk ``lam``."""
    _budget(tree, STRATEGY_BUDGET, "optimal_strategy_dp")
    G = np.asarray(G, dtype=float)
    if G.shape != (tree.size(tree.N),) or not np.all(np.isfinite(G)):
        raise ValidationError("G must be finite terminal values")
    measure = measure or Measure.reference(tree)
    v = [None] * (tree.N + 1)
    v[tree.N] = G
    rho = [None] * tree.N
    worst = 0.0
    for t in range(tree.N - 1, -1, -1):
        lam_t = np.broadcast_to(np.asarray(lam[t], dtype=float), (tree.size(t),))
        x = _excess_returns(tree, t, lam_t)
        with np.errstate(divide="ignore"):
            logw = np.log(measure.transitions(t)) - tree.children(t, v[t + 1])
        rho[t], res = optimize_nodes(x, logw)
        v[t] = -logsumexp(logw - rho[t][:, None] * x, axis=1)
        worst = max(worst, float(res.max()))
    return OracleSolution(v, rho, [np.asarray(l, dtype=float) for l in lam], worst)


def strategy_value(tree, lam, G, rho, measure: Measure | None = None) -> list:
    """Value exponent ``-log E_t[exp(-(sum_{u>=t} rho_u x_u + G))]`` of a fixed strategy."""
    measure = measure or Measure.reference(tree)
    v = np.asarray(G, dtype=float)
    out = [v]
    for t in range(tree.N - 1, -1, -1):
        lam_t = np.broadcast_to(np.asarray(lam[t], dtype=float), (tree.size(t),))
        x = _excess_returns(tree, t, lam_t)
        with np.errstate(divide="ignore"):
            logw = np.log(measure.transitions(t)) - tree.children(t, v)
        v = -logsumexp(logw - np.asarray(rho[t])[:, None] * x, axis=1)
        out.append(v)
    return out[::-1]


def _demand(lam_node, x_base, logw, alpha, dt):
    """Aggregate demand ``sum_i alpha_i rho_i`` at one node for a scalar price."""
    x = np.broadcast_to(lam_node * dt + x_base, logw.shape)
    rho, _ = optimize_nodes(x, logw)
    return float(alpha @ rho), rho


def brute_force_equilibrium(pop, grid_points: int = 9) -> OracleSolution:
    """Per-node market clearing ``sum_i alpha_i rho_i(lam) = 0`` by backward induction.

    Aggregate demand is checked for strict monotonicity on a grid across the
    root bracket (and at the bracket ends); a violation raises
    :class:`MonotonicityError` with the sampled values attached.
    """
    tree = pop.tree
    _budget(tree, EQUILIBRIUM_BUDGET, "brute_force_equilibrium")
    alpha = pop.alpha
    I = pop.size
    v = [None] * (tree.N + 1)
    v[tree.N] = pop.G.copy()
    rho = [None] * tree.N
    lam = [None] * tree.N
    cap = (1.0 - ARBITRAGE_MARGIN) * tree.sqdt / tree.dt
    start = float(np.max(np.abs(pop.G))) / tree.sqdt + 1.0
    worst = 0.0
    logp = math.log(0.25)
    for t in range(tree.N - 1, -1, -1):
        children = tree.children(t, v[t + 1])  # (I, nodes, 4)
        n_nodes = tree.size(t)
        lam_t = np.empty(n_nodes)
        rho_t = np.empty((I, n_nodes))
        for k in range(n_nodes):
            logw = logp - children[:, k, :]
            base = tree.dB[None, :]
            demand = lambda l: _demand(l, base, logw, alpha, tree.dt)[0]
            lo, hi = -min(start, cap), min(start, cap)
            d_lo, d_hi = demand(lo), demand(hi)
            doublings = 0
            while d_lo * d_hi > 0 and doublings < 60:
                lo, hi = max(2 * lo, -cap), min(2 * hi, cap)
                d_lo, d_hi = demand(lo), demand(hi)
                doublings += 1
            grid = np.linspace(lo, hi, grid_points)
            sampled = np.array([demand(g) for g in grid])
            diffs = np.diff(sampled)
            if not (np.all(diffs > 0) or np.all(diffs < 0)):
                raise MonotonicityError(
                    f"aggregate demand is not strictly monotone at level {t}, node {k}",
                    {"level": t, "node": k, "lambda_grid": grid.tolist(), "demand": sampled.tolist()},
                )
            if d_lo * d_hi > 0:
                raise MonotonicityError(
                    f"no sign change of aggregate demand at level {t}, node {k}",
                    {"level": t, "node": k, "bracket": [lo, hi], "demand": [d_lo, d_hi]},
                )
            if d_lo == 0.0:
                root = lo
            elif d_hi == 0.0:
                root = hi
            else:
                root = brentq(demand, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
            total, r = _demand(root, base, logw, alpha, tree.dt)
            lam_t[k] = root
            rho_t[:, k] = r
            worst = max(worst, abs(total))
        x = lam_t[None, :, None] * tree.dt + tree.dB[None, None, :]
        v[t] = -logsumexp(logp - children - rho_t[:, :, None] * x, axis=2)
        lam[t] = lam_t
        rho[t] = rho_t
    return OracleSolution(v, rho, lam, worst, {"clearing_residual": worst})


def node_equilibrium_closed_form(tree, children_values, alpha):
    """Closed-form node price ``-tanh(c/2)/sqrt(dt)`` used to cross-check the root finder.

    ``c = sum_i alpha_i log(A_+^i / A_-^i)`` where ``A_+`` and ``A_-`` sum
    ``exp(-v_c)`` over the B-up and B-down children.
    """
    e = np.exp(-np.asarray(children_values, dtype=float))
    a_up = e[..., 0] + e[..., 1]
    a_dn = e[..., 2] + e[..., 3]
    c = np.tensordot(alpha, np.log(a_up / a_dn), axes=(0, 0))
    return -np.tanh(c / 2.0) / tree.sqdt
