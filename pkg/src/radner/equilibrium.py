"""Equilibria as fixed points of the excess-demand map ``F(lam) = A[mu^{lam, G}]``."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .agents import certainty_equivalent
from .bsde import SingleSolution, SystemSolution, solve_eta_system, solve_single, solve_system_direct
from .errors import ConvergenceError, ValidationError
from .lattice import (
    Measure,
    bmo_norm,
    exponential_weight,
    martingale_representation,
    measure_from_density,
    normalized_exponential,
)
from .pareto import ParetoAnalysis, ParetoCheck, construct_pre_pareto, pareto_check, pre_pareto_check

__all__ = [
    "EquilibriumResult",
    "ParetoAnalysis",
    "ParetoCheck",
    "construct_pre_pareto",
    "excess_demand",
    "near_pre_pareto_solve",
    "pareto_check",
    "picard_solve",
    "pre_pareto_check",
    "separable_equilibrium",
    "verify_equilibrium",
]


@dataclass
class EquilibriumResult:
    """An equilibrium candidate and how it was obtained.

    ``trace`` holds per-iteration lists ``residual`` (``|F(lam_k) - lam_k|_bmo``),
    ``ratio`` (empirical contraction ratios) and ``norm`` (``|lam_k|_bmo``).
    """

    lam: list
    system: SystemSolution
    method: str
    converged: bool = True
    iterations: int = 0
    trace: dict = field(default_factory=lambda: {"residual": [], "ratio": [], "norm": []})
    warnings: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def rho(self) -> list:
        """Risk-denominated strategies ``lam - mu^i`` (agent axis first)."""
        return [l[None, :] - m for l, m in zip(self.lam, self.system.mu)]


def _solve_agents(tree, lam, G, measure, threads):
    if not threads or threads <= 1 or G.shape[0] == 1:
        return solve_single(tree, lam, G, measure)
    chunks = np.array_split(np.arange(G.shape[0]), min(threads, G.shape[0]))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda idx: solve_single(tree, lam, G[idx], measure), chunks))
    cat = lambda name: [np.concatenate([getattr(p, name)[t] for p in parts]) for t in range(len(getattr(parts[0], name)))]
    return SingleSolution(cat("Y"), cat("mu"), cat("nu"), cat("cross"), cat("driver"), parts[0].lam)


def _system_under(pop, lam, measure=None, threads=None) -> SystemSolution:
    sol = _solve_agents(pop.tree, lam, pop.G, measure, threads)
    return SystemSolution(sol.Y, sol.mu, sol.nu, sol.cross, sol.driver, list(sol.lam), pop.alpha)


def excess_demand(lam, pop, measure: Measure | None = None, threads: int | None = None) -> list:
    """``F(lam) = A[mu^{lam, G}]`` with one single-agent sweep per agent."""
    sol = _solve_agents(pop.tree, lam, pop.G, measure, threads)
    return [np.tensordot(pop.alpha, m, axes=(0, 0)) for m in sol.mu]


def _diff(a, b):
    return [x - y for x, y in zip(a, b)]


def _lam0(pop, lam0):
    tree = pop.tree
    if lam0 is None:
        return tree.constant(0.0)
    if np.isscalar(lam0):
        return tree.constant(float(lam0))
    if len(lam0) != tree.N:
        raise ValidationError(f"initial guess needs {tree.N} levels")
    return [np.broadcast_to(np.asarray(l, dtype=float), (tree.size(t),)).copy() for t, l in enumerate(lam0)]


def picard_solve(pop, lam0=None, tol: float = 1e-10, max_iter: int = 200,
                 measure: Measure | None = None, threads: int | None = None) -> EquilibriumResult:
    """Iterate ``lam_{k+1} = F(lam_k)`` until ``|F(lam_k) - lam_k|_bmo < tol``.

    The returned ``iterations`` is the index ``k`` of the accepted iterate,
    so a starting point that already is a fixed point reports 0.  Running out
    of iterations (or diverging) raises :class:`ConvergenceError` with the
    trace attached.
    """
    if not (tol > 0):
        raise ValidationError(f"tol must be positive, got {tol!r}")
    if max_iter < 0:
        raise ValidationError("max_iter must be >= 0")
    tree = pop.tree
    lam = _lam0(pop, lam0)
    trace = {"residual": [], "ratio": [], "norm": []}
    for k in range(max_iter + 1):
        F = excess_demand(lam, pop, measure, threads)
        step = _diff(F, lam)
        res = bmo_norm(tree, step, measure)
        trace["norm"].append(bmo_norm(tree, lam, measure))
        if trace["residual"] and trace["residual"][-1] > 0:
            trace["ratio"].append(res / trace["residual"][-1])
        trace["residual"].append(res)
        if not math.isfinite(res):
            raise ConvergenceError("excess-demand iteration diverged", trace)
        if res < tol:
            system = _system_under(pop, lam, measure, threads)
            return EquilibriumResult(lam, system, "picard", True, k, trace)
        lam = F
    raise ConvergenceError(
        f"no fixed point within {max_iter} iterations (last residual {trace['residual'][-1]:.3e})", trace
    )


def solve_direct(pop, measure: Measure | None = None) -> EquilibriumResult:
    system = solve_system_direct(pop.tree, pop.G, pop.alpha, measure)
    return EquilibriumResult(list(system.lam), system, "direct")


def default_eps(tree, scale: float = 0.0) -> float:
    """Discretization slack ``10 dt (1 + scale)``."""
    return 10.0 * tree.dt * (1.0 + scale)


def verify_equilibrium(result: EquilibriumResult, pop, oracle_check: bool = False,
                       eps: float | None = None, measure: Measure | None = None,
                       fixed_point_tol: float = 1e-8) -> dict:
    """Clearing, fixed-point and a-priori checks for any equilibrium candidate."""
    tree = pop.tree
    lam = result.lam
    rho = result.rho
    clearing = max(float(np.max(np.abs(np.tensordot(pop.alpha, r, axes=(0, 0))))) for r in rho)
    F = excess_demand(lam, pop, measure)
    fp = bmo_norm(tree, _diff(F, lam), measure)
    ce = certainty_equivalent(tree, pop.G)
    ce_norms = np.atleast_1d(bmo_norm(tree, ce.pair, measure))
    lam_norm = bmo_norm(tree, lam, measure)
    bound = float(ce_norms.max())
    eps = default_eps(tree, bound) if eps is None else eps
    report = {
        "clearing_residual": clearing,
        "fixed_point_residual": fp,
        "fixed_point_ok": fp <= fixed_point_tol,
        "lambda_bmo": lam_norm,
        "ce_bmo_max": bound,
        "a_priori_eps": eps,
        "a_priori_ok": lam_norm <= bound + eps,
        "max_cross": result.system.max_cross(),
    }
    if oracle_check:
        from .oracle import optimal_strategy_dp, strategy_value

        gaps = []
        for i in range(pop.size):
            best = optimal_strategy_dp(tree, lam, pop.G[i], measure)
            mine = strategy_value(tree, lam, pop.G[i], [r[i] for r in rho], measure)
            gaps.append(float(best.value[0][0] - mine[0][0]))
        report["oracle_gaps"] = gaps
        report["oracle_gap_max"] = max(gaps)
    return report


def _group_constant(values, keys, tol):
    """Largest deviation of ``values`` from the first value of each key group."""
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    starts = np.r_[0, np.flatnonzero(np.diff(k)) + 1]
    first = np.repeat(values[..., order][..., starts], np.diff(np.r_[starts, k.size]), axis=-1)
    canon = np.empty_like(values)
    canon[..., order] = first
    return float(np.max(np.abs(values - canon))) if values.size else 0.0, canon


def separable_equilibrium(pop, GB, GW, tol: float = 1e-10, measure: Measure | None = None) -> EquilibriumResult:
    """Equilibrium for ``G = G^B + G^W`` driven by the B-part only.

    ``lam`` and ``mu`` come from the direct sweep of ``G^B``, so they are
    functions of the B-moves alone; ``Y = Y^B + Y^W`` where ``Y^W`` solves
    the single-agent equation of ``G^W`` with ``lam = 0``.
    """
    tree = pop.tree
    GB = np.atleast_2d(np.asarray(GB, dtype=float))
    GW = np.atleast_2d(np.asarray(GW, dtype=float))
    if GB.shape != pop.G.shape or GW.shape != pop.G.shape:
        raise ValidationError("separable parts must match the endowment shape")
    problems = []
    gap = float(np.max(np.abs(pop.G - GB - GW)))
    if gap > tol:
        problems.append(f"G differs from G^B + G^W by {gap:.3e}")
    kb, kw = tree.history_keys(tree.N)
    dev_b, GB = _group_constant(GB, kb, tol)
    dev_w, GW = _group_constant(GW, kw, tol)
    if dev_b > tol:
        problems.append(f"G^B varies with the W-moves (by {dev_b:.3e})")
    if dev_w > tol:
        problems.append(f"G^W varies with the B-moves (by {dev_w:.3e})")
    if problems:
        raise ValidationError("allocation is not separable: " + "; ".join(problems), problems)
    sys_b = solve_system_direct(tree, GB, pop.alpha, measure)
    sol_w = solve_single(tree, tree.constant(0.0), GW, measure)
    lam = list(sys_b.lam)
    system = SystemSolution(
        [yb + yw for yb, yw in zip(sys_b.Y, sol_w.Y)],
        [mb + mw for mb, mw in zip(sys_b.mu, sol_w.mu)],
        [nb + nw for nb, nw in zip(sys_b.nu, sol_w.nu)],
        [cb + cw for cb, cw in zip(sys_b.cross, sol_w.cross)],
        [fb + fw for fb, fw in zip(sys_b.driver, sol_w.driver)],
        lam,
        pop.alpha,
    )
    F = excess_demand(lam, pop, measure)
    direct = solve_system_direct(tree, pop.G, pop.alpha, measure)
    lam_exp = certainty_equivalent(tree, pop.aggregate(GB)).m
    extras = {
        "fixed_point_residual": bmo_norm(tree, _diff(F, lam), measure),
        "direct_gap": max(float(np.max(np.abs(a - b))) for a, b in zip(lam, direct.lam)),
        "lambda_exponential": lam_exp,
        "exponential_gap": max(float(np.max(np.abs(a - b))) for a, b in zip(lam, lam_exp)),
    }
    return EquilibriumResult(lam, system, "separable", extras=extras)


def weighted_rep_norm(tree, X, eta, kappa, measure: Measure | None = None):
    """Per-agent weighted bmo norms of the representation of ``X`` under ``measure``.

    The weight is ``exp(kappa * int |eta|^2 dt)`` with ``|eta|^2`` summed over agents.
    """
    X = np.atleast_2d(X)
    rep = martingale_representation(tree, X, measure)
    eta_sq = [np.sum(np.square(e), axis=0) for e in eta] if eta is not None else tree.constant(0.0)
    weight = exponential_weight(tree, eta_sq, kappa)
    return np.atleast_1d(bmo_norm(tree, rep.pair, measure, weight))


def _check_kappa(kappa, eta_zero):
    if kappa is None:
        return
    if math.isinf(kappa) and kappa > 0:
        if not eta_zero:
            raise ValidationError("kappa = inf is only allowed when eta vanishes")
        return
    if not kappa > 2:
        raise ValidationError(f"kappa must exceed 2, got {kappa!r}")


def near_pre_pareto_solve(pop, G_prime, tol: float = 1e-8, max_iter: int = 200,
                          kappa: float | None = None, convention: str = "proof",
                          pre_pareto_tol: float = 1e-8, threads: int | None = None) -> EquilibriumResult:
    """Equilibrium of ``G`` obtained by perturbing around a pre-Pareto ``G'``.

    The eta-system for ``G - G'`` is solved under the measure with density
    proportional to ``exp(-A[G'])`` (``convention="proof"``) or
    ``exp(+A[G'])`` (``convention="statement"``), with ``eta`` the strategies
    of ``G'``.  The candidate ``lam' + A[mu~]`` is checked against the
    excess-demand map under the original measure; if its residual exceeds
    ``tol`` it is polished by Picard iteration (at most ``max_iter`` steps).
    """
    if convention not in ("proof", "statement"):
        raise ValidationError("convention must be 'proof' or 'statement'")
    tree = pop.tree
    G_prime = np.atleast_2d(np.asarray(G_prime, dtype=float))
    if G_prime.shape != pop.G.shape:
        raise ValidationError("G' must have the shape of G")
    analysis = pre_pareto_check(pop.with_endowments(G_prime), pre_pareto_tol)
    if not analysis.is_pre_pareto:
        raise ValidationError(f"G' is not pre-Pareto (replication residual {analysis.residual:.3e})")
    eta = analysis.rho
    eta_zero = not any(np.any(e != 0) for e in eta)
    _check_kappa(kappa, eta_zero)
    sign = -1.0 if convention == "proof" else 1.0
    P_hat = measure_from_density(tree, normalized_exponential(tree, pop.aggregate(G_prime), sign))
    tilde = solve_eta_system(tree, pop.G - G_prime, pop.alpha, eta, P_hat)
    lam = [lp + lt for lp, lt in zip(analysis.lam, tilde.lam)]
    residual = bmo_norm(tree, _diff(excess_demand(lam, pop, threads=threads), lam))

    warnings = []
    # eta certificate, scanning kappa when none is given
    kappas = [kappa] if kappa is not None else ([math.inf] if eta_zero else list(np.geomspace(2.05, 400.0, 48)))
    best = None
    for k in kappas:
        try:
            norms = weighted_rep_norm(tree, pop.G - G_prime, eta, k, P_hat)
        except ValidationError:
            # weights need the full tree when eta is nonzero
            break
        margin = constants.eta_threshold(k) - float(norms.max())
        if best is None or margin > best[2]:
            best = (k, float(norms.max()), margin)
    if best is None:
        warnings.append("eta certificate not evaluated (needs the non-recombining tree)")
    elif not best[2] > 0:
        warnings.append(
            f"eta certificate fails: weighted norm {best[1]:.6g} >= threshold {constants.eta_threshold(best[0]):.6g}"
        )
    extras = {
        "lambda_prime": analysis.lam,
        "eta": eta,
        "convention": convention,
        "candidate_residual": residual,
        "polished": False,
        "top_exponential_moment": math.inf,
        "eta_certificate": None if best is None else {
            "kappa": best[0], "value": best[1], "threshold": constants.eta_threshold(best[0]),
            "passed": best[2] > 0,
        },
    }
    if residual <= tol:
        system = _system_under(pop, lam, threads=threads)
        return EquilibriumResult(lam, system, "near-pre-pareto", True, 0,
                                 {"residual": [residual], "ratio": [], "norm": [bmo_norm(tree, lam)]},
                                 warnings, extras)
    warnings.append(f"candidate residual {residual:.3e} above tol; polished by Picard iteration")
    polished = picard_solve(pop, lam, tol, max_iter, threads=threads)
    extras["polished"] = True
    polished.method = "near-pre-pareto"
    polished.warnings = warnings
    polished.extras = extras
    return polished
