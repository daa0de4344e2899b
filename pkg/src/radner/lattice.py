"""Exact discrete scaffolding for a planar Brownian motion (B, W).

Each step moves (B, W) by (+-sqrt(dt), +-sqrt(dt)); the four children of a
node are ordered

    c = 0: (+, +)    c = 1: (+, -)    c = 2: (-, +)    c = 3: (-, -)

so that bit 1 of ``c`` flips the B-increment and bit 0 flips the W-increment.
Two node layouts share one interface:

* :class:`Tree` keeps every path (level ``t`` has ``4**t`` nodes, node ``k``
  has children ``4k .. 4k+3``).  Anything path dependent (stochastic
  integrals, stochastic exponentials, running weights) needs this layout.
* :class:`RecombiningTree` stores one node per state ``(B_t, W_t)`` (level
  ``t`` has ``(t+1)**2`` nodes).  It is exact for quantities that are
  functions of the current state, which covers every backward recursion
  driven by a terminal value ``g(B_T, W_T)``.

Processes are plain lists of numpy arrays indexed by level.  An adapted
process has ``N + 1`` entries, a predictable one has ``N`` (the value at
level ``t`` is held on ``[t, t + dt)``).  Arrays may carry leading axes (for
instance one row per agent); the node axis is always last.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, DomainError, ValidationError

DEFAULT_PATH_BUDGET = 4**12
PATH_BUDGET_ENV = "RADNER_PATH_BUDGET"

SIGN_B = np.array([1.0, 1.0, -1.0, -1.0])
SIGN_W = np.array([1.0, -1.0, 1.0, -1.0])
SIGN_BW = SIGN_B * SIGN_W

DENSITY_TOLERANCE = 1e-9
MARTINGALE_TOLERANCE = 1e-12


def path_budget() -> int:
    raw = os.environ.get(PATH_BUDGET_ENV)
    if raw is None:
        return DEFAULT_PATH_BUDGET
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"{PATH_BUDGET_ENV}={raw!r} is not an integer") from None
    if value < 4:
        raise ValidationError(f"{PATH_BUDGET_ENV} must be at least 4, got {value}")
    return value


class _BaseTree:
    recombining: bool = False

    def __init__(self, T: float, N: int):
        if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
            raise ValidationError(f"steps N must be an integer, got {N!r}")
        if N < 1:
            raise ValidationError(f"steps N must be >= 1, got {N}")
        if not (isinstance(T, (int, float, np.floating)) and math.isfinite(T) and T > 0):
            raise ValidationError(f"horizon T must be a positive finite number, got {T!r}")
        self.T = float(T)
        self.N = int(N)
        self.dt = self.T / self.N
        self.sqdt = math.sqrt(self.dt)
        self.dB = SIGN_B * self.sqdt
        self.dW = SIGN_W * self.sqdt

    def __repr__(self):
        return f"{type(self).__name__}(T={self.T}, N={self.N})"

    def size(self, t: int) -> int:
        raise NotImplementedError

    def children(self, t: int, values: np.ndarray) -> np.ndarray:
        """Arrange level ``t + 1`` values as ``(..., size(t), 4)``."""
        raise NotImplementedError

    def scatter(self, t: int, child_values: np.ndarray) -> np.ndarray:
        """Sum ``(..., size(t), 4)`` contributions onto level ``t + 1`` nodes."""
        raise NotImplementedError

    def state(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Values of ``(B_t, W_t)`` at every node of level ``t``."""
        raise NotImplementedError

    def history_keys(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Integer labels of the B-history and W-history of each node.

        Two nodes share a B-label exactly when they were reached through the
        same sequence of B-moves.
        """
        raise NotImplementedError

    def level_of(self, n_nodes: int) -> int:
        for t in range(self.N + 1):
            if self.size(t) == n_nodes:
                return t
        raise ValidationError(f"no level of {self!r} has {n_nodes} nodes")

    def terminal(self, func) -> np.ndarray:
        """Evaluate ``func(B_T, W_T)`` on the terminal level."""
        b, w = self.state(self.N)
        return np.asarray(func(b, w), dtype=float) * np.ones(self.size(self.N))

    def zeros(self, lead: tuple = (), predictable: bool = True) -> list[np.ndarray]:
        top = self.N if predictable else self.N + 1
        return [np.zeros(lead + (self.size(t),)) for t in range(top)]

    def constant(self, value, lead: tuple = (), predictable: bool = True) -> list[np.ndarray]:
        top = self.N if predictable else self.N + 1
        value = np.asarray(value, dtype=float)
        return [np.broadcast_to(value[..., None], lead + (self.size(t),)).copy() if value.ndim
                else np.full(lead + (self.size(t),), float(value)) for t in range(top)]

    def spread(self, t: int, values: np.ndarray) -> np.ndarray:
        """Copy level-``t`` values onto each of their children (full tree only)."""
        raise ValidationError("path-dependent quantities need the non-recombining Tree")

    def flatten_children(self, t: int, child_values: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`children` (full tree only)."""
        raise ValidationError("path-dependent quantities need the non-recombining Tree")


class Tree(_BaseTree):
    """Non-recombining quaternary tree holding every path of the walk."""

    recombining = False

    def size(self, t):
        return 4**t

    def children(self, t, values):
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + (4**t, 4))

    def scatter(self, t, child_values):
        child_values = np.asarray(child_values)
        return child_values.reshape(child_values.shape[:-2] + (4 ** (t + 1),))

    def spread(self, t, values):
        return np.repeat(np.asarray(values), 4, axis=-1)

    def flatten_children(self, t, child_values):
        return self.scatter(t, child_values)

    def _digits(self, t):
        k = np.arange(4**t, dtype=np.int64)
        return [(k >> (2 * (t - 1 - u))) & 3 for u in range(t)]

    def state(self, t):
        b = np.zeros(4**t)
        w = np.zeros(4**t)
        for digit in self._digits(t):
            b += SIGN_B[digit]
            w += SIGN_W[digit]
        return b * self.sqdt, w * self.sqdt

    def history_keys(self, t):
        kb = np.zeros(4**t, dtype=np.int64)
        kw = np.zeros(4**t, dtype=np.int64)
        for digit in self._digits(t):
            kb = 2 * kb + (digit >> 1)
            kw = 2 * kw + (digit & 1)
        return kb, kw


class RecombiningTree(_BaseTree):
    """Recombining lattice; node ``i * (t + 1) + j`` has seen ``i`` down-moves
    of B and ``j`` down-moves of W."""

    recombining = True

    def size(self, t):
        return (t + 1) ** 2

    def children(self, t, values):
        values = np.asarray(values)
        lead = values.shape[:-1]
        v = values.reshape(lead + (t + 2, t + 2))
        out = np.stack(
            [v[..., :-1, :-1], v[..., :-1, 1:], v[..., 1:, :-1], v[..., 1:, 1:]], axis=-1
        )
        return out.reshape(lead + ((t + 1) ** 2, 4))

    def scatter(self, t, child_values):
        child_values = np.asarray(child_values)
        lead = child_values.shape[:-2]
        c = child_values.reshape(lead + (t + 1, t + 1, 4))
        out = np.zeros(lead + (t + 2, t + 2))
        out[..., :-1, :-1] += c[..., 0]
        out[..., :-1, 1:] += c[..., 1]
        out[..., 1:, :-1] += c[..., 2]
        out[..., 1:, 1:] += c[..., 3]
        return out.reshape(lead + ((t + 2) ** 2,))

    def history_keys(self, t):
        idx = np.arange((t + 1) ** 2)
        return idx // (t + 1), idx % (t + 1)

    def state(self, t):
        i, j = self.history_keys(t)
        return (t - 2.0 * i) * self.sqdt, (t - 2.0 * j) * self.sqdt


def build_tree(T: float, N: int, *, recombining: bool = False, budget: int | None = None):
    """Build the lattice for horizon ``T`` split into ``N`` steps.

    The full tree refuses to allocate more than ``budget`` terminal paths
    (default ``4**12``, overridable through ``RADNER_PATH_BUDGET``).
    """
    if recombining:
        return RecombiningTree(T, N)
    tree = Tree(T, N)
    limit = path_budget() if budget is None else int(budget)
    if 4**tree.N > limit:
        raise CapacityError(
            f"4**{tree.N} = {4**tree.N} terminal paths exceed the path budget {limit}; "
            f"use fewer steps, a recombining lattice, or raise {PATH_BUDGET_ENV}"
        )
    return tree


@dataclass(frozen=True)
class PredictablePair:
    """Two predictable processes (B-component, W-component), levels 0..N-1."""

    b: list
    w: list

    def __sub__(self, other):
        return PredictablePair([x - y for x, y in zip(self.b, other.b)],
                               [x - y for x, y in zip(self.w, other.w)])

    def __add__(self, other):
        return PredictablePair([x + y for x, y in zip(self.b, other.b)],
                               [x + y for x, y in zip(self.w, other.w)])


@dataclass(frozen=True)
class MartingaleRep:
    """``gamma_t = E_t[X]`` and its one-step coefficients.

    Under the measure used to build it,
    ``gamma_{t+1} - gamma_t = b (dB - E dB) + w (dW - E dW) + cross (dB dW - E dB dW) / sqrt(dt)``
    holds exactly at every node.
    """

    gamma: list
    b: list
    w: list
    cross: list

    @property
    def pair(self) -> PredictablePair:
        return PredictablePair(self.b, self.w)

    def max_cross(self) -> float:
        return max((float(np.max(np.abs(c))) for c in self.cross), default=0.0)


class Measure:
    """One-step transition probabilities on a tree.

    ``probs[t]`` has shape ``(size(t), 4)``; ``None`` stands for the
    reference measure with probability 1/4 per child.
    """

    def __init__(self, tree, probs: Sequence[np.ndarray] | None = None, renormalization: float = 0.0):
        self.tree = tree
        if probs is not None:
            probs = tuple(np.asarray(p, dtype=float) for p in probs)
            if len(probs) != tree.N:
                raise ValidationError(f"expected {tree.N} levels of transitions, got {len(probs)}")
            for t, p in enumerate(probs):
                if p.shape != (tree.size(t), 4):
                    raise ValidationError(f"level {t}: transitions of shape {p.shape}")
                if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0):
                    raise ValidationError(f"level {t}: transitions must be >= 0 and sum to 1")
        self.probs = probs
        self.renormalization = renormalization

    @classmethod
    def reference(cls, tree):
        return cls(tree)

    @property
    def is_reference(self) -> bool:
        return self.probs is None

    def transitions(self, t: int) -> np.ndarray:
        if self.probs is None:
            return np.full((self.tree.size(t), 4), 0.25)
        return self.probs[t]

    def expect(self, t: int, values_next: np.ndarray) -> np.ndarray:
        """``E_t[v_{t+1}]`` at every node of level ``t``."""
        c = self.tree.children(t, values_next)
        # explicit sums keep results independent of array layout and batching
        if self.probs is None:
            return (c[..., 0] + c[..., 1] + c[..., 2] + c[..., 3]) * 0.25
        p = self.probs[t]
        return c[..., 0] * p[:, 0] + c[..., 1] * p[:, 1] + c[..., 2] * p[:, 2] + c[..., 3] * p[:, 3]

    def increment_means(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``E_t[dB]``, ``E_t[dW]`` and ``E_t[dB dW] / sqrt(dt)`` per node."""
        s = self.tree.sqdt
        if self.probs is None:
            z = np.zeros(self.tree.size(t))
            return z, z, z
        p = self.probs[t]
        return p @ SIGN_B * s, p @ SIGN_W * s, p @ SIGN_BW * s

    def rollback(self, values: np.ndarray, start: int, stop: int = 0) -> list[np.ndarray]:
        """Conditional expectations of level-``start`` values at levels ``stop..start``."""
        out = [np.asarray(values, dtype=float)]
        for t in range(start - 1, stop - 1, -1):
            out.append(self.expect(t, out[-1]))
        return out[::-1]

    def process(self, terminal: np.ndarray) -> list[np.ndarray]:
        """The martingale ``E_t[X]`` for ``t = 0..N``."""
        return self.rollback(terminal, self.tree.N, 0)

    def mean(self, terminal: np.ndarray) -> float:
        return float(self.process(terminal)[0][..., 0]) if np.ndim(terminal) == 1 else \
            self.process(terminal)[0][..., 0]

    def distribution(self, t: int | None = None) -> np.ndarray:
        """Probability of each node of level ``t`` (default: terminal)."""
        t = self.tree.N if t is None else t
        mass = np.ones(1)
        for u in range(t):
            mass = self.tree.scatter(u, mass[:, None] * self.transitions(u))
        return mass


def _level_of(tree, values):
    return tree.level_of(np.shape(values)[-1])


def conditional_expectation(tree, X, node: tuple[int, int], measure: Measure | None = None) -> float:
    """``E[X | node]`` for ``X`` given on some level at or after the node's.

    ``X`` is either the array of values on one level (its length identifies
    the level) or an adapted process, in which case its last level is used.
    """
    if isinstance(X, (list, tuple)):
        X = X[-1]
    X = np.asarray(X, dtype=float)
    level, index = node
    if not 0 <= level <= tree.N or not 0 <= index < tree.size(level):
        raise ValidationError(f"node {node} does not exist on {tree!r}")
    s = _level_of(tree, X)
    if s < level:
        raise ValidationError(f"values live on level {s}, before the node's level {level}")
    measure = measure or Measure.reference(tree)
    return float(measure.rollback(X, s, level)[0][index])


def one_step_coefficients(tree, t: int, values_next: np.ndarray):
    """Project level-``t+1`` values on ``{1, dB, dW, dB dW / sqrt(dt)}``.

    Returns ``(mean, b, w, cross)`` with ``v_{t+1} = mean + b dB + w dW + cross dB dW / sqrt(dt)``
    exactly, where ``mean`` is the reference-measure average.  The
    coefficients do not depend on the probability measure.
    """
    c = tree.children(t, values_next)
    up, down = c[..., 0] + c[..., 1], c[..., 2] + c[..., 3]
    plus, minus = c[..., 0] + c[..., 2], c[..., 1] + c[..., 3]
    same, diff = c[..., 0] + c[..., 3], c[..., 1] + c[..., 2]
    s = tree.sqdt
    return (up + down) * 0.25, (up - down) * 0.25 / s, (plus - minus) * 0.25 / s, (same - diff) * 0.25 / s


def martingale_representation(tree, X: np.ndarray, measure: Measure | None = None) -> MartingaleRep:
    """Exact martingale representation of terminal values ``X``."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != tree.size(tree.N):
        raise ValidationError("martingale_representation expects terminal values")
    if not np.all(np.isfinite(X)):
        raise ValidationError("terminal values must be finite")
    measure = measure or Measure.reference(tree)
    gamma = measure.process(X)
    b, w, cross = [], [], []
    for t in range(tree.N):
        _, bt, wt, ct = one_step_coefficients(tree, t, gamma[t + 1])
        b.append(bt)
        w.append(wt)
        cross.append(ct)
    return MartingaleRep(gamma, b, w, cross)


def reconstruction_error(tree, rep: MartingaleRep, measure: Measure | None = None) -> float:
    """Largest one-step mismatch of ``rep`` against its own increments."""
    measure = measure or Measure.reference(tree)
    worst = 0.0
    for t in range(tree.N):
        eb, ew, ebw = measure.increment_means(t)
        pred = (rep.gamma[t][..., None]
                + rep.b[t][..., None] * (tree.dB - eb[:, None])
                + rep.w[t][..., None] * (tree.dW - ew[:, None])
                + rep.cross[t][..., None] * (SIGN_BW * tree.sqdt - ebw[:, None]))
        worst = max(worst, float(np.max(np.abs(pred - tree.children(t, rep.gamma[t + 1])))))
    return worst


def normalized_exponential(tree, x: np.ndarray, sign: float = -1.0) -> np.ndarray:
    """``exp(sign * x) / E[exp(sign * x)]`` evaluated without overflow."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("exponent must be finite on every path")
    y = sign * x
    z = np.exp(y - y.max())
    return z / Measure.reference(tree).mean(z)


def measure_from_density(tree, Z_T: np.ndarray) -> Measure:
    """Measure with ``dQ/dP = Z_T`` relative to the reference measure.

    Densities whose mean is within 1e-9 of one are renormalized (the removed
    discrepancy is kept in ``Measure.renormalization``); others are rejected.
    """
    Z_T = np.asarray(Z_T, dtype=float)
    if Z_T.shape != (tree.size(tree.N),):
        raise ValidationError("density must be given on the terminal level")
    if not np.all(np.isfinite(Z_T)) or np.any(Z_T <= 0):
        raise DomainError("density must be strictly positive and finite")
    ref = Measure.reference(tree)
    mean = ref.mean(Z_T)
    if abs(mean - 1.0) > DENSITY_TOLERANCE:
        raise DomainError(f"density has mean {mean!r}, not 1")
    Z = ref.process(Z_T / mean)
    probs = [0.25 * tree.children(t, Z[t + 1]) / Z[t][:, None] for t in range(tree.N)]
    # absorb rounding so each row sums to one exactly
    probs = [p / p.sum(axis=1, keepdims=True) for p in probs]
    return Measure(tree, probs, renormalization=abs(mean - 1.0))


def density_process(tree, Z_T: np.ndarray) -> list[np.ndarray]:
    return Measure.reference(tree).process(np.asarray(Z_T, dtype=float))


def stochastic_exponential(tree, b, w=None) -> list[np.ndarray]:
    """Discrete exponential ``Z_{t+1} = Z_t (1 - b_t dB - w_t dW)``, ``Z_0 = 1``."""
    w = w if w is not None else [np.zeros_like(x) for x in b]
    Z = [np.ones(1)]
    for t in range(tree.N):
        factor = 1.0 - b[t][:, None] * tree.dB - w[t][:, None] * tree.dW
        if np.any(factor <= 0):
            raise DomainError(f"level {t}: |b| + |w| too large for a positive exponential")
        Z.append(tree.flatten_children(t, Z[t][:, None] * factor))
    return Z


def girsanov_extract(tree, Z: Sequence[np.ndarray]) -> PredictablePair:
    """Recover ``(lambda, nu)`` from a positive reference-measure martingale.

    ``lambda_t = -E_t[(Z_{t+1}/Z_t) dB] / dt`` and likewise for ``nu`` with
    ``dW``; this inverts :func:`stochastic_exponential` exactly.
    """
    if len(Z) != tree.N + 1:
        raise ValidationError(f"expected {tree.N + 1} levels, got {len(Z)}")
    ref = Measure.reference(tree)
    lam, nu = [], []
    for t in range(tree.N):
        zt = np.asarray(Z[t], dtype=float)
        if np.any(zt <= 0) or np.any(np.asarray(Z[t + 1]) <= 0):
            raise DomainError("density process must be strictly positive")
        drift = ref.expect(t, Z[t + 1]) - zt
        if np.max(np.abs(drift)) > MARTINGALE_TOLERANCE * max(1.0, float(np.max(np.abs(zt)))):
            raise DomainError(f"level {t}: input is not a martingale (drift {np.max(np.abs(drift)):.3e})")
        ratio = tree.children(t, Z[t + 1]) / zt[:, None]
        lam.append(-(ratio @ tree.dB) / 4.0 / tree.dt)
        nu.append(-(ratio @ tree.dW) / 4.0 / tree.dt)
    return PredictablePair(lam, nu)


def relative_entropy(Q: Measure, P: Measure | None = None) -> float:
    """``H(Q|P) = E^Q[log dQ/dP]``; ``math.inf`` when Q charges a P-null path."""
    tree = Q.tree
    P = P or Measure.reference(tree)
    h = np.zeros(tree.size(tree.N))
    for t in range(tree.N - 1, -1, -1):
        q = Q.transitions(t)
        p = P.transitions(t)
        if np.any((p == 0) & (q > 0)):
            return math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where(q > 0, np.log(np.where(q > 0, q, 1.0) / np.where(p > 0, p, 1.0)), 0.0)
        h = (q * (log_ratio + tree.children(t, h))).sum(axis=1)
    return max(float(h[0]), 0.0)


def integrate(tree, b, w=None, drift=None) -> list[np.ndarray]:
    """Adapted process ``sum_{u<t} b_u (dB_u + drift_u dt) + w_u dW_u``."""
    out = [np.zeros(np.shape(b[0])[:-1] + (1,))]
    for t in range(tree.N):
        inc = b[t][..., None] * tree.dB
        if drift is not None:
            inc = inc + (b[t] * drift[t] * tree.dt)[..., None]
        if w is not None:
            inc = inc + w[t][..., None] * tree.dW
        out.append(tree.flatten_children(t, out[t][..., None] + inc))
    return out


def exponential_weight(tree, eta_sq, kappa: float) -> list[np.ndarray]:
    """Running weight ``w_t = exp(kappa * sum_{u<t} |eta_u|^2 dt)``, levels 0..N."""
    if not any(np.any(e != 0) for e in eta_sq):
        return tree.constant(1.0, predictable=False)
    if math.isinf(kappa):
        raise ValidationError("kappa = inf is only allowed for eta = 0")
    out = [np.ones(1)]
    for t in range(tree.N):
        out.append(tree.spread(t, out[t] * np.exp(kappa * eta_sq[t] * tree.dt)))
    return out


def bmo_norm(tree, pair, measure: Measure | None = None, weight=None) -> float:
    """Discrete bmo norm of a predictable pair (or of a single process).

    ``sqrt(max_nodes E_node[sum_{u >= t} w_u^2 (b_u^2 + w-comp_u^2) dt])``.
    On a finite tree the supremum over stopping times is attained by stopping
    at a node, so the maximum over all nodes is exact.
    """
    if isinstance(pair, PredictablePair):
        sq = [np.square(b) + np.square(w) for b, w in zip(pair.b, pair.w)]
    elif isinstance(pair, tuple) and len(pair) == 2:
        sq = [np.square(b) + np.square(w) for b, w in zip(*pair)]
    else:
        sq = [np.square(b) for b in pair]
    if len(sq) != tree.N:
        raise ValidationError(f"expected {tree.N} predictable levels, got {len(sq)}")
    measure = measure or Measure.reference(tree)
    lead = np.shape(sq[0])[:-1]
    acc = np.zeros(lead + (tree.size(tree.N),))
    worst = np.zeros(lead)
    for t in range(tree.N - 1, -1, -1):
        integrand = sq[t] if weight is None else np.square(weight[t]) * sq[t]
        acc = integrand * tree.dt + measure.expect(t, acc)
        worst = np.maximum(worst, acc.max(axis=-1))
    return np.sqrt(worst) if lead else float(np.sqrt(worst))


def sup_norm(process) -> float:
    """Largest absolute value over all levels and nodes."""
    if isinstance(process, np.ndarray):
        return float(np.max(np.abs(process)))
    return max(float(np.max(np.abs(x))) for x in process)
