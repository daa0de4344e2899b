"""Shared fixtures: small scenarios whose expected values are derived by hand."""

from __future__ import annotations

import math

import numpy as np

from radner import (
    RiskAwarePopulation,
    bmo_norm,
    build_tree,
    certainty_equivalent,
    certify,
)
from radner.constants import PARETO_DISTANCE

BALL = (math.sqrt(2) - 1) / 2

# criterion number -> (passed, one-line summary); printed at the end of the run
CRITERIA: dict = {}


def record(num, ok, line):
    ok = bool(ok)
    CRITERIA[num] = (ok, line)
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}: {line}")
    assert ok, line


def affine_population(tree, alpha, a, b):
    B, W = tree.state(tree.N)
    G = np.array([ai * B + bi * W for ai, bi in zip(a, b)])
    return RiskAwarePopulation(tree, alpha, G)


def _shape(rng, B, W):
    c = rng.normal(size=5)
    return c[0] * B + c[1] * W + c[2] * B * W + c[3] * np.sin(B + W) + c[4] * np.abs(B)


def random_scenario(rng, N=3):
    """A random population scaled to just inside the pareto-distance certificate.

    Staying close to the boundary makes the contraction and lemma checks
    meaningful rather than trivially satisfied.
    """
    T = float(rng.uniform(0.5, 1.5))
    tree = build_tree(T, N)
    I = int(rng.integers(2, 5))
    alpha = rng.dirichlet(np.ones(I))
    alpha = alpha / alpha.sum()
    B, W = tree.state(N)
    shape = np.array([_shape(rng, B, W) for _ in range(I)])
    target = float(rng.uniform(0.5, 0.98))

    def distance(s):
        return certify(RiskAwarePopulation(tree, alpha, s * shape)).pareto_distance.value

    # the distance is close to linear in the scale; two secant steps suffice
    s = 1.0
    for _ in range(3):
        s *= target * PARETO_DISTANCE / distance(s)
    pop = RiskAwarePopulation(tree, alpha, s * shape)
    assert certify(pop).pareto_distance.passed
    return pop


def random_adapted(rng, tree, radius):
    """A random predictable process with bmo norm equal to ``radius``."""
    lam = [rng.normal(size=tree.size(t)) for t in range(tree.N)]
    return [l * (radius / bmo_norm(tree, lam)) for l in lam]


def ce_norms(pop):
    ce = certainty_equivalent(pop.tree, pop.G)
    return np.atleast_1d(bmo_norm(pop.tree, (ce.m, ce.n))), ce
