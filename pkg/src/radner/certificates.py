"""Sufficient conditions for existence, evaluated on the tree.

Every certificate compares a computed quantity with a fixed threshold and
passes only when the quantity is strictly below it.  Adding a constant to a
single agent's endowment does not move the equilibrium, so the size-based
certificates (L-infinity and population) are evaluated after removing the
best such constant from each agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .agents import Population, certainty_equivalent, endowment_heterogeneity, population_stats
from .errors import ValidationError
from .lattice import Measure, bmo_norm, martingale_representation, measure_from_density, normalized_exponential


@dataclass(frozen=True)
class Certificate:
    name: str
    value: float | None
    threshold: float | None
    passed: bool | None  # None: not evaluated
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed, "details": self.details}


@dataclass(frozen=True)
class CertificateReport:
    pareto_distance: Certificate
    linf: Certificate
    horizon: Certificate
    population: Certificate
    eta: Certificate
    thresholds: dict = field(default_factory=lambda: dict(constants.ALL))

    def items(self):
        return [self.pareto_distance, self.linf, self.horizon, self.population, self.eta]

    @property
    def any_passed(self) -> bool:
        return any(c.passed for c in self.items())

    def to_dict(self):
        return {"certificates": {c.name: c.to_dict() for c in self.items()}, "thresholds": dict(self.thresholds)}


def _candidates(pop, xi_c):
    out = []
    if xi_c is not None:
        arr = np.asarray(xi_c, dtype=float)
        rows = arr[None, :] if arr.ndim == 1 else arr
        for r in rows:
            if r.shape != (pop.tree.size(pop.tree.N),) or not np.all(np.isfinite(r)):
                raise ValidationError("xi_c candidates must be finite terminal values")
            out.append(("user", r))
    out.append(("aggregate", pop.aggregate(pop.G)))
    return out


def pareto_distance(pop, xi):
    """``max_i |(m^i - m^c, n^i - n^c)|_bmo(P^c)`` for one candidate ``xi``."""
    tree = pop.tree
    ce = certainty_equivalent(tree, pop.G)
    cc = certainty_equivalent(tree, xi)
    Pc = measure_from_density(tree, normalized_exponential(tree, xi))
    diff = ([m - mc[None, :] for m, mc in zip(ce.m, cc.m)], [n - nc[None, :] for n, nc in zip(ce.n, cc.n)])
    return np.atleast_1d(bmo_norm(tree, diff, Pc))


def malliavin_sup(pop, xi):
    """Per agent ``(sup|m_bar|, sup|n_bar|)`` of ``G^i - xi`` under the reference measure."""
    rep = martingale_representation(pop.tree, pop.G - xi[None, :])
    sb = np.max(np.stack([np.max(np.abs(b), axis=-1) for b in rep.b]), axis=0)
    sw = np.max(np.stack([np.max(np.abs(w), axis=-1) for w in rep.w]), axis=0)
    return sb, sw


def certify(pop, xi_c=None, kappa: float | None = None, lipschitz_bounds=None, *,
            eta=None, eta_measure: Measure | None = None,
            chi0: float | None = None, delta0: float | None = None) -> CertificateReport:
    """Evaluate the five smallness certificates.

    ``xi_c`` holds one or more translation candidates; ``A[G]`` is always
    tried too and the best candidate is reported.  ``lipschitz_bounds`` may
    supply ``(sup|D^b|, sup|D^w|)`` bounds that replace the tree estimates in
    the horizon certificate.  ``eta`` (per-agent, default zero) and ``kappa``
    feed the weighted-bmo certificate, which measures ``G - xi`` under
    ``eta_measure`` (default: the measure with density proportional to
    ``exp(-xi)``).
    """
    tree = pop.tree
    cands = _candidates(pop, xi_c)

    # (a) distance to Pareto
    rows = []
    for label, xi in cands:
        d = pareto_distance(pop, xi)
        rows.append({"candidate": label, "value": float(d.max()), "per_agent": d.tolist()})
    best_a = min(rows, key=lambda r: r["value"])
    cert_a = Certificate("pareto_distance", best_a["value"], constants.PARETO_DISTANCE,
                         best_a["value"] < constants.PARETO_DISTANCE,
                         {"best_candidate": best_a["candidate"], "candidates": rows})

    # (b) L-infinity distance, after the best per-agent constant shift
    rows = []
    for label, xi in cands:
        d = pop.G - xi[None, :]
        v = float(np.max(0.5 * (d.max(axis=1) - d.min(axis=1))))
        rows.append({"candidate": label, "value": v, "unshifted": float(np.max(np.abs(d)))})
    best_b = min(rows, key=lambda r: r["value"])
    cert_b = Certificate("linf", best_b["value"], constants.LINF, best_b["value"] < constants.LINF,
                         {"best_candidate": best_b["candidate"], "candidates": rows})

    # (c) horizon
    rows = []
    for label, xi in cands:
        if lipschitz_bounds is not None:
            db, dw = (float(x) for x in lipschitz_bounds)
            sq = db * db + dw * dw
            src = "user bounds"
        else:
            sb, sw = malliavin_sup(pop, xi)
            sq = float(np.max(sb**2 + sw**2))
            src = "tree estimate"
        rows.append({"candidate": label, "sup_sq": sq, "T_star": constants.horizon_bound(sq), "source": src})
    best_c = max(rows, key=lambda r: r["T_star"])
    t_star = best_c["T_star"]
    cert_c = Certificate("horizon", tree.T, t_star, tree.T < t_star,
                         {"best_candidate": best_c["candidate"], "margin": t_star - tree.T, "candidates": rows})

    # (d) population size and homogeneity
    src = pop.source
    if src is None:
        cert_d = Certificate("population", None, None, None, {"reason": "no risk tolerances attached"})
    else:
        # constant shifts of single endowments leave the equilibrium unchanged
        src = Population(src.tree, src.delta, src.E - 0.5 * (src.E.max(axis=1) + src.E.min(axis=1))[:, None])
        chi_actual = endowment_heterogeneity(src.E)
        c0 = chi_actual if chi0 is None else float(chi0)
        d0 = float(src.delta.min()) if delta0 is None else float(delta0)
        if not c0 < 0.5:
            cert_d = Certificate("population", float(src.size), None, False,
                                 {"chi": chi_actual, "chi0": c0, "reason": "heterogeneity index not below 1/2"})
        else:
            stats = population_stats(src, c0, d0)
            ok = src.size >= stats.I0 and stats.chi <= c0 and float(src.delta.min()) >= d0
            cert_d = Certificate("population", float(src.size), float(stats.I0), ok, {
                "chi": stats.chi, "chi0": c0, "delta0": d0, "min_delta": float(src.delta.min()),
                "total_norm": stats.total_norm, "I0": stats.I0,
            })

    # (e) weighted bmo
    eta_zero = eta is None or not any(np.any(np.asarray(e) != 0) for e in eta)
    k = kappa
    if k is None and eta_zero:
        k = math.inf
    if k is None:
        cert_e = Certificate("eta", None, None, None, {"reason": "kappa required for nonzero eta"})
    else:
        if not (k > 2):
            raise ValidationError(f"kappa must exceed 2, got {k!r}")
        if math.isinf(k) and not eta_zero:
            raise ValidationError("kappa = inf is only allowed when eta vanishes")
        from .equilibrium import weighted_rep_norm

        eta_levels = None if eta_zero else [np.atleast_2d(np.asarray(e, dtype=float)) for e in eta]
        thr = constants.eta_threshold(k)
        rows = []
        for label, xi in cands:
            # the perturbation G - xi is measured under P^c unless a measure is supplied
            Q = eta_measure or measure_from_density(tree, normalized_exponential(tree, xi))
            norms = weighted_rep_norm(tree, pop.G - xi[None, :], eta_levels, k, Q)
            rows.append({"candidate": label, "value": float(norms.max()), "per_agent": norms.tolist()})
        best_e = min(rows, key=lambda r: r["value"])
        cert_e = Certificate("eta", best_e["value"], thr, best_e["value"] < thr,
                             {"kappa": k, "best_candidate": best_e["candidate"], "candidates": rows})
    return CertificateReport(cert_a, cert_b, cert_c, cert_d, cert_e)
