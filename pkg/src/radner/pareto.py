"""Pareto and pre-Pareto allocations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import aggregate
from .lattice import (
    Measure,
    girsanov_extract,
    integrate,
    martingale_representation,
    measure_from_density,
    normalized_exponential,
    density_process,
    stochastic_exponential,
)


@dataclass(frozen=True)
class ParetoCheck:
    """``ok`` is true iff every pairwise difference is constant up to ``tol`` (inclusive)."""

    ok: bool
    constants: np.ndarray  # mean of G^i - G^1
    spread: float

    def __bool__(self):
        return self.ok


def pareto_check(tree, G, tol: float = 1e-10, measure: Measure | None = None) -> ParetoCheck:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    weights = (measure or Measure.reference(tree)).distribution()
    const = (G - G[0]) @ weights
    spread = 0.0
    for i in range(G.shape[0]):
        for j in range(i + 1, G.shape[0]):
            d = G[i] - G[j]
            spread = max(spread, float(np.max(np.abs(d - d @ weights))))
    return ParetoCheck(spread <= tol, const, spread)


@dataclass(frozen=True)
class ParetoAnalysis:
    """Result of :func:`pre_pareto_check`.

    ``residuals[i]`` is the largest non-replicable part (W-coefficient or
    cross coefficient under Q) of ``G^i - G^1``.  ``phi``, ``y``, ``rho`` and
    ``final`` are only filled for pre-Pareto allocations; ``final`` also
    needs the non-recombining tree.
    """

    verdict: str
    lam: list
    nu: list
    measure: Measure
    residuals: np.ndarray
    y: np.ndarray | None = None
    phi: list | None = None
    rho: list | None = None
    final: np.ndarray | None = None
    final_check: ParetoCheck | None = None
    notes: list = field(default_factory=list)

    @property
    def residual(self) -> float:
        return float(self.residuals.max()) if self.residuals.size else 0.0

    @property
    def is_pre_pareto(self) -> bool:
        return self.verdict in ("pareto", "pre-pareto")


def pricing_measure(tree, aggregate_endowment, sign: float = -1.0):
    """Measure with density ``exp(sign * A[G]) / E[...]`` and its Girsanov pair."""
    Z_T = normalized_exponential(tree, aggregate_endowment, sign)
    Q = measure_from_density(tree, Z_T)
    pair = girsanov_extract(tree, density_process(tree, Z_T))
    return Q, pair


def pre_pareto_check(pop, tol: float = 1e-8) -> ParetoAnalysis:
    tree = pop.tree
    G = pop.G
    Q, pair = pricing_measure(tree, pop.aggregate(G))
    I = pop.size
    reps = [martingale_representation(tree, G[i] - G[0], Q) for i in range(I)]
    residuals = np.array([
        max(max(float(np.max(np.abs(w))) for w in r.w), r.max_cross()) for r in reps
    ])
    if pareto_check(tree, G, tol):
        verdict = "pareto"
    elif residuals.max() <= tol:
        verdict = "pre-pareto"
    else:
        return ParetoAnalysis("neither", pair.b, pair.w, Q, residuals)
    y = np.array([r.gamma[0][0] for r in reps])
    phi = [np.stack([r.b[t] for r in reps]) for t in range(tree.N)]
    rho = [aggregate(pop.alpha, p)[None, :] - p for p in phi]
    final = final_check = None
    notes = []
    if tree.recombining:
        notes.append("final allocation needs the non-recombining tree; skipped")
    else:
        gains = integrate(tree, rho, drift=[l[None, :] for l in pair.b])
        final = G + gains[-1]
        final_check = pareto_check(tree, final, max(tol, 1e-10))
    return ParetoAnalysis(verdict, pair.b, pair.w, Q, residuals, y, phi, rho, final, final_check, notes)


def construct_pre_pareto(tree, alpha, lam, nu, y, phi) -> np.ndarray:
    """Allocation with aggregate pricing density ``E(-lam.B - nu.W)_T`` and
    pairwise differences ``y^i - y^j + (phi^i - phi^j) . B^lam_T``.

    ``phi`` is a list of per-level arrays of shape ``(I, nodes)`` (or
    ``(I,)`` for deterministic integrands).  Needs the full tree.
    """
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(y, dtype=float)
    Z = stochastic_exponential(tree, lam, nu)
    agg = -np.log(Z[-1])
    phi = [np.broadcast_to(np.asarray(p, dtype=float).reshape(len(alpha), -1), (len(alpha), tree.size(t)))
           for t, p in enumerate(phi)]
    centred = [p - aggregate(alpha, p)[None, :] for p in phi]
    gains = integrate(tree, centred, drift=[l[None, :] for l in lam])[-1]
    return agg[None, :] + (y - alpha @ y)[:, None] + gains

