"""Explicit backward schemes for the single-agent and equilibrium BSDEs.

At level ``t`` the coefficients ``(mu, nu)`` are read off the exact
one-step representation of ``Y_{t+1}`` and the value is rolled back with

    Y_t = E_t[Y_{t+1}] - f(mu, nu) dt.

The same per-node algebra is shared by every solver here, which is what
makes the direct system sweep an exact fixed point of the excess-demand map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .lattice import Measure, PredictablePair, one_step_coefficients


def _as_terminal(tree, G):
    G = np.asarray(G, dtype=float)
    if G.shape[-1] != tree.size(tree.N):
        raise ValidationError(f"terminal values need {tree.size(tree.N)} entries, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ValidationError("terminal values must be finite")
    return G


def _check_predictable(tree, process, name, lead=()):
    if process is None:
        return None
    if len(process) != tree.N:
        raise ValidationError(f"{name} needs {tree.N} predictable levels, got {len(process)}")
    out = []
    for t, x in enumerate(process):
        x = np.asarray(x, dtype=float)
        try:
            x = np.broadcast_to(x, lead + (tree.size(t),))
        except ValueError:
            raise ValidationError(f"{name} at level {t} has shape {x.shape}") from None
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"{name} at level {t} is not finite")
        out.append(x)
    return out


def driver(mu, nu, lam, eta=None):
    """``nu^2/2 - lam^2/2 + lam (mu - eta)``; ``eta=None`` skips the shift."""
    shifted = mu if eta is None else mu - eta
    return 0.5 * nu * nu - 0.5 * lam * lam + lam * shifted


@dataclass(frozen=True)
class SingleSolution:
    """Output of :func:`solve_single`; arrays may carry a leading agent axis."""

    Y: list
    mu: list
    nu: list
    cross: list
    driver: list
    lam: list

    @property
    def rho(self) -> list:
        """Primal strategy ``lam - mu``."""
        return [l - m for l, m in zip(self.lam, self.mu)]

    @property
    def pair(self) -> PredictablePair:
        return PredictablePair(self.mu, self.nu)

    def max_cross(self) -> float:
        return max(float(np.max(np.abs(c))) for c in self.cross)


@dataclass(frozen=True)
class SystemSolution:
    """Per-agent ``(Y, mu, nu)`` stacked on axis 0, plus ``lam = A[mu]``."""

    Y: list
    mu: list
    nu: list
    cross: list
    driver: list
    lam: list
    alpha: np.ndarray

    @property
    def rho(self) -> list:
        return [l[None, :] - m for l, m in zip(self.lam, self.mu)]

    def agent(self, i: int) -> SingleSolution:
        return SingleSolution(
            [y[i] for y in self.Y], [m[i] for m in self.mu], [n[i] for n in self.nu],
            [c[i] for c in self.cross], [f[i] for f in self.driver], self.lam,
        )

    def pairs(self) -> PredictablePair:
        return PredictablePair(self.mu, self.nu)

    def max_cross(self) -> float:
        return max(float(np.max(np.abs(c))) for c in self.cross)

    def clearing_residual(self) -> float:
        """``max |lam - A[mu]|`` over nodes; zero for a direct sweep."""
        return max(float(np.max(np.abs(l - np.tensordot(self.alpha, m, axes=(0, 0)))))
                   for l, m in zip(self.lam, self.mu))

    def aggregate_identity(self, tree, measure: Measure | None = None):
        """Check the drift of ``Y^A = A[Y]`` node by node.

        Returns ``(residual, gap)``: ``residual`` is the largest mismatch in
        ``E_t[Y^A_{t+1}] - Y^A_t = (lam^2/2 + A[nu]^2/2 + gap) dt`` and
        ``gap = (A[nu^2] - A[nu]^2)/2`` is the smallest convexity gap seen.
        """
        measure = measure or Measure.reference(tree)
        a = self.alpha
        resid, gap_min = 0.0, np.inf
        for t in range(tree.N):
            ya_next = np.tensordot(a, self.Y[t + 1], axes=(0, 0))
            ya = np.tensordot(a, self.Y[t], axes=(0, 0))
            anu = np.tensordot(a, self.nu[t], axes=(0, 0))
            gap = 0.5 * (np.tensordot(a, self.nu[t] ** 2, axes=(0, 0)) - anu**2)
            lhs = measure.expect(t, ya_next) - ya
            rhs = (0.5 * self.lam[t] ** 2 + 0.5 * anu**2 + gap) * tree.dt
            resid = max(resid, float(np.max(np.abs(lhs - rhs))))
            gap_min = min(gap_min, float(gap.min()))
        return resid, gap_min


def solve_single(tree, lam, G, measure: Measure | None = None) -> SingleSolution:
    """Explicit scheme for ``dY = mu dB + nu dW + (nu^2/2 - lam^2/2 + lam mu) dt``, ``Y_T = G``.

    ``G`` may be stacked over agents (shape ``(I, paths)``); ``lam`` is shared.
    """
    G = _as_terminal(tree, G)
    lam = _check_predictable(tree, lam, "lambda")
    measure = measure or Measure.reference(tree)
    Y = [None] * (tree.N + 1)
    Y[tree.N] = G
    mu, nu, cross, drv = ([None] * tree.N for _ in range(4))
    for t in range(tree.N - 1, -1, -1):
        _, b, w, c = one_step_coefficients(tree, t, Y[t + 1])
        f = driver(b, w, lam[t])
        Y[t] = measure.expect(t, Y[t + 1]) - f * tree.dt
        mu[t], nu[t], cross[t], drv[t] = b, w, c, f
    return SingleSolution(Y, mu, nu, cross, drv, list(lam))


def _system_sweep(tree, G, alpha, eta, measure):
    G = np.atleast_2d(_as_terminal(tree, G))
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (G.shape[0],):
        raise ValidationError(f"{alpha.size} weights for {G.shape[0]} endowments")
    measure = measure or Measure.reference(tree)
    Y = [None] * (tree.N + 1)
    Y[tree.N] = G
    mu, nu, cross, drv, lam = ([None] * tree.N for _ in range(5))
    for t in range(tree.N - 1, -1, -1):
        _, b, w, c = one_step_coefficients(tree, t, Y[t + 1])
        lt = np.tensordot(alpha, b, axes=(0, 0))
        f = driver(b, w, lt, None if eta is None else eta[t])
        Y[t] = measure.expect(t, Y[t + 1]) - f * tree.dt
        mu[t], nu[t], cross[t], drv[t], lam[t] = b, w, c, f, lt
    return SystemSolution(Y, mu, nu, cross, drv, lam, alpha)


def solve_system_direct(tree, G, alpha, measure: Measure | None = None) -> SystemSolution:
    """One backward sweep of the equilibrium system with ``lam = A[mu]`` per node."""
    return _system_sweep(tree, G, alpha, None, measure)


def solve_eta_system(tree, G, alpha, eta, measure: Measure | None = None) -> SystemSolution:
    """Backward sweep with driver ``nu^2/2 - A[mu]^2/2 + A[mu] (mu - eta)``.

    ``eta`` is a per-agent predictable process (levels of shape ``(I, nodes)``).
    """
    G = np.atleast_2d(_as_terminal(tree, G))
    eta = _check_predictable(tree, eta, "eta", lead=(G.shape[0],))
    return _system_sweep(tree, G, alpha, eta, measure)
