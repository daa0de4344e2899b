"""Populations of exponential-utility agents and their certainty equivalents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .constants import LINF
from .errors import DomainError, ValidationError
from .lattice import Measure, PredictablePair, bmo_norm

LINF_THRESHOLD = LINF


def _terminal_matrix(tree, values, what):
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    if arr.ndim != 2 or arr.shape[1] != tree.size(tree.N):
        raise ValidationError(
            f"{what} must have one row of {tree.size(tree.N)} terminal values per agent, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} must be finite on every terminal node")
    return arr


@dataclass(frozen=True)
class Population:
    """Risk tolerances ``delta`` (shape ``(I,)``) and endowments ``E`` (``(I, paths)``)."""

    tree: object
    delta: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        E = _terminal_matrix(self.tree, self.E, "endowments")
        if delta.ndim != 1 or delta.size < 1:
            raise ValidationError("need at least one agent")
        bad = [i for i, d in enumerate(delta) if not (math.isfinite(d) and d > 0)]
        if bad:
            raise ValidationError(
                f"risk tolerance must be positive for agents {bad}",
                [f"agents[{i}].delta = {delta[i]!r} is not positive" for i in bad],
            )
        if E.shape[0] != delta.size:
            raise ValidationError(f"{delta.size} risk tolerances but {E.shape[0]} endowments")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "E", E)

    @property
    def size(self) -> int:
        return self.delta.size


@dataclass(frozen=True)
class RiskAwarePopulation:
    """Weights ``alpha`` summing to one and risk-denominated endowments ``G``."""

    tree: object
    alpha: np.ndarray
    G: np.ndarray
    source: Population | None = None

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        G = _terminal_matrix(self.tree, self.G, "endowments")
        if alpha.ndim != 1 or alpha.size != G.shape[0]:
            raise ValidationError(f"{alpha.size} weights but {G.shape[0]} endowments")
        if np.any(alpha <= 0) or np.any(alpha > 1) or not np.all(np.isfinite(alpha)):
            raise ValidationError("weights must lie in (0, 1]")
        if abs(alpha.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {alpha.sum()!r}, not 1")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "G", G)

    @property
    def size(self) -> int:
        return self.alpha.size

    def aggregate(self, x):
        return aggregate(self.alpha, x)

    def with_endowments(self, G) -> "RiskAwarePopulation":
        return RiskAwarePopulation(self.tree, self.alpha, G)


def reparametrize(pop: Population) -> RiskAwarePopulation:
    """``G^i = E^i / delta^i`` and ``alpha^i = delta^i / sum_j delta^j``."""
    alpha = pop.delta / pop.delta.sum()
    return RiskAwarePopulation(pop.tree, alpha, pop.E / pop.delta[:, None], source=pop)


def aggregate(alpha, x):
    """Weighted sum over the leading (agent) axis of ``x``.

    ``x`` may be a stacked array or a list of per-agent arrays.
    """
    alpha = np.asarray(alpha, dtype=float)
    if isinstance(x, (list, tuple)):
        if len(x) != alpha.size:
            raise ValidationError(f"expected {alpha.size} per-agent values, got {len(x)}")
        x = np.stack([np.asarray(v, dtype=float) for v in x])
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[0] != alpha.size:
        raise ValidationError(f"expected {alpha.size} per-agent values, got shape {x.shape}")
    return np.tensordot(alpha, x, axes=(0, 0))


@dataclass(frozen=True)
class CertaintyEquivalent:
    """``X_t = -log E_t[exp(-G)]`` with its Girsanov pair ``(m, n)``.

    ``drift_residual[t]`` is ``E_t[X_{t+1}] - X_t - (m^2 + n^2) dt / 2``,
    which vanishes in the continuous-time limit.
    """

    X: list
    m: list
    n: list
    drift_residual: list = field(repr=False)

    @property
    def pair(self) -> PredictablePair:
        return PredictablePair(self.m, self.n)


def certainty_equivalent(tree, G) -> CertaintyEquivalent:
    """Certainty-equivalent process of terminal values ``G``.

    Works row-wise when ``G`` carries a leading agent axis.  Conditional
    expectations are evaluated in log space so large ``|G|`` does not
    overflow; a non-finite ``G`` is rejected.
    """
    G = np.asarray(G, dtype=float)
    if G.shape[-1] != tree.size(tree.N):
        raise ValidationError("certainty_equivalent expects terminal values")
    if not np.all(np.isfinite(G)):
        raise DomainError("exp(-G) is not finite on every path; rescale the endowment")
    X = [None] * (tree.N + 1)
    X[tree.N] = G
    m, n, resid = [None] * tree.N, [None] * tree.N, [None] * tree.N
    for t in range(tree.N - 1, -1, -1):
        nxt = tree.children(t, X[t + 1])
        X[t] = -logsumexp(-nxt, axis=-1) + math.log(4.0)
        ratio = np.exp(-(nxt - X[t][..., None]))
        m[t] = -(ratio @ tree.dB) / 4.0 / tree.dt
        n[t] = -(ratio @ tree.dW) / 4.0 / tree.dt
        resid[t] = nxt.mean(axis=-1) - X[t] - 0.5 * (m[t] ** 2 + n[t] ** 2) * tree.dt
    if not all(np.all(np.isfinite(x)) for x in X):
        raise DomainError("certainty equivalent overflowed; rescale the endowment")
    return CertaintyEquivalent(X, m, n, resid)


def endowment_heterogeneity(E) -> float:
    """``max_{i,j} |E^i - E^j|_inf / (|E^i|_inf + |E^j|_inf)``, with 0/0 read as 0."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    norms = np.max(np.abs(E), axis=1)
    worst = 0.0
    for i in range(E.shape[0]):
        for j in range(i + 1, E.shape[0]):
            denom = norms[i] + norms[j]
            if denom > 0:
                worst = max(worst, float(np.max(np.abs(E[i] - E[j]))) / denom)
    return worst


def agent_count_bound(total_norm: float, chi0: float, delta0: float) -> int:
    """Smallest ``I`` with ``total_norm / (delta0 (1 - 2 chi0) I)`` below the L-infinity level."""
    if not (0.0 <= chi0 < 0.5):
        raise ValidationError(f"chi0 must lie in [0, 1/2), got {chi0!r}")
    if not (math.isfinite(delta0) and delta0 > 0):
        raise ValidationError(f"delta0 must be positive, got {delta0!r}")
    if total_norm < 0 or not math.isfinite(total_norm):
        raise ValidationError("total endowment norm must be finite")
    x = total_norm / (delta0 * (1.0 - 2.0 * chi0) * LINF_THRESHOLD)
    count = max(1, math.floor(x) + 1)
    # guard the floor against rounding right at an integer
    while count > 1 and total_norm / (delta0 * (1.0 - 2.0 * chi0) * (count - 1)) < LINF_THRESHOLD:
        count -= 1
    while not total_norm / (delta0 * (1.0 - 2.0 * chi0) * count) < LINF_THRESHOLD:
        count += 1
    return count


@dataclass(frozen=True)
class PopulationStats:
    chi: float
    I0: int
    endowment_norms: np.ndarray
    total_norm: float
    scaled_norms: np.ndarray  # |E^i|_inf / delta^i


def population_stats(pop: Population, chi0: float, delta0: float) -> PopulationStats:
    total = float(np.max(np.abs(pop.E.sum(axis=0))))
    norms = np.max(np.abs(pop.E), axis=1)
    return PopulationStats(
        chi=endowment_heterogeneity(pop.E),
        I0=agent_count_bound(total, chi0, delta0),
        endowment_norms=norms,
        total_norm=total,
        scaled_norms=norms / pop.delta,
    )


def certainty_bmo(tree, ce: CertaintyEquivalent, measure: Measure | None = None):
    """bmo norm of ``(m, n)``, per agent when ``ce`` is stacked."""
    return bmo_norm(tree, ce.pair, measure)
