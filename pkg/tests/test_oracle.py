import math

import numpy as np
import pytest

from radner import (
    CapacityError,
    MonotonicityError,
    RiskAwarePopulation,
    brute_force_equilibrium,
    build_tree,
    girsanov_extract,
    optimal_strategy_dp,
    solve_system_direct,
)
from radner.lattice import density_process, integrate, normalized_exponential
from radner.oracle import node_equilibrium_closed_form, optimize_nodes, strategy_value


def test_no_incentive_to_trade():
    tree = build_tree(1.0, 2)
    sol = optimal_strategy_dp(tree, tree.constant(0.0), np.zeros(16))
    assert max(float(np.max(np.abs(r))) for r in sol.rho) < 1e-14
    assert sol.root_utility == pytest.approx(-1.0)


def test_full_hedge():
    tree = build_tree(1.0, 3)
    B, _ = tree.state(3)
    sol = optimal_strategy_dp(tree, tree.constant(0.0), 0.4 * B)
    assert all(np.allclose(r, -0.4, atol=1e-12) for r in sol.rho)
    assert sol.value[0][0] == pytest.approx(0.0, abs=1e-12)


def test_single_step_positive_price():
    tree = build_tree(1.0, 1)
    lam = 0.1
    sol = optimal_strategy_dp(tree, [np.array([lam])], np.zeros(4))
    x = lam + np.array([1.0, -1.0])
    # first-order condition: sum x exp(-rho x) = 0  =>  rho = log((1+lam)/(1-lam)) / 2
    assert sol.rho[0][0] == pytest.approx(0.5 * math.log(x[0] / -x[1]), abs=1e-13)
    assert sol.root_utility > -1.0


def test_optimize_nodes_rejects_arbitrage():
    from radner import DomainError

    with pytest.raises(DomainError):
        optimize_nodes(np.array([[0.1, 0.2, 0.3, 0.4]]), np.zeros((1, 4)))


def test_optimize_nodes_stiff_rows():
    x = np.array([[1.0, 1.0, -1.0, -1.0], [1e-3, 1e-3, -1.0, -1.0]])
    logw = np.array([[0.0, 0.0, -30.0, -30.0], [0.0, 0.0, 0.0, 0.0]])
    rho, grad = optimize_nodes(x, logw)
    assert np.all(np.isfinite(rho)) and np.all(grad < 1e-10)


def test_equilibrium_symmetry_and_constants():
    tree = build_tree(1.0, 3)
    B, _ = tree.state(3)
    sym = brute_force_equilibrium(RiskAwarePopulation(tree, [0.5, 0.5], np.array([0.3 * B, -0.3 * B])))
    assert max(float(np.max(np.abs(l))) for l in sym.lam) < 1e-12
    const = brute_force_equilibrium(RiskAwarePopulation(tree, [0.2, 0.8], np.array([np.ones(64), -np.ones(64)])))
    assert max(float(np.max(np.abs(l))) for l in const.lam) < 1e-12
    assert max(float(np.max(np.abs(r))) for r in const.rho) < 1e-12


def test_closed_form_node_price():
    tree = build_tree(1.0, 2)
    B, W = tree.state(2)
    G = np.array([0.3 * np.tanh(B) + 0.2 * W, -0.1 * B * W])
    pop = RiskAwarePopulation(tree, [0.7, 0.3], G)
    orc = brute_force_equilibrium(pop)
    for t in range(2):
        closed = node_equilibrium_closed_form(tree, tree.children(t, orc.value[t + 1]), pop.alpha)
        assert np.allclose(orc.lam[t], closed, atol=1e-12)


def test_affine_oracle_near_linear_price():
    tree = build_tree(1.0, 2)
    B, W = tree.state(2)
    pop = RiskAwarePopulation(tree, [0.5, 0.5], np.array([0.2 * B + 0.1 * W, 0.0 * B]))
    orc = brute_force_equilibrium(pop)
    assert max(float(np.max(np.abs(l - 0.1))) for l in orc.lam) <= 0.1 * tree.dt


def test_bsde_strategy_near_optimal():
    tree = build_tree(1.0, 4)
    B, W = tree.state(4)
    G = np.array([0.3 * np.sin(B) + 0.2 * W, 0.1 * B * W])
    sol = solve_system_direct(tree, G, [0.5, 0.5])
    for i in range(2):
        best = optimal_strategy_dp(tree, sol.lam, G[i]).value[0][0]
        mine = strategy_value(tree, sol.lam, G[i], [l - m[i] for l, m in zip(sol.lam, sol.mu)])[0][0]
        assert 0 <= best - mine <= tree.dt


def test_duality_spot_check():
    tree = build_tree(1.0, 3)
    B, W = tree.state(3)
    G = 0.3 * np.tanh(B) + 0.1 * W * B
    lam = [np.full(tree.size(t), 0.2) for t in range(3)]
    sol = optimal_strategy_dp(tree, lam, G)
    wealth = integrate(tree, sol.rho, drift=lam)[-1] + G
    pair = girsanov_extract(tree, density_process(tree, normalized_exponential(tree, wealth)))
    assert max(float(np.max(np.abs(b - l))) for b, l in zip(pair.b, lam)) < 1e-8


def test_monotonicity_error_carries_diagnostics(monkeypatch):
    import radner.oracle as oracle

    tree = build_tree(1.0, 1)
    pop = RiskAwarePopulation(tree, [0.5, 0.5], np.zeros((2, 4)))
    monkeypatch.setattr(oracle, "_demand", lambda l, *a: (l * (l - 0.5) * (l + 0.5), None))
    with pytest.raises(MonotonicityError) as err:
        brute_force_equilibrium(pop)
    assert "demand" in err.value.diagnostics


def test_budgets():
    with pytest.raises(CapacityError):
        brute_force_equilibrium(RiskAwarePopulation(build_tree(1.0, 5), [1.0], np.zeros((1, 4**5))))
