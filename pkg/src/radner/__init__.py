"""Radner equilibria with exponential utilities on an exact binary-tree filtration."""

__version__ = "0.1.0"

from .agents import (
    CertaintyEquivalent,
    Population,
    RiskAwarePopulation,
    aggregate,
    certainty_equivalent,
    population_stats,
    reparametrize,
)
from .bsde import SingleSolution, SystemSolution, solve_eta_system, solve_single, solve_system_direct
from .certificates import CertificateReport, certify
from .equilibrium import (
    EquilibriumResult,
    ParetoAnalysis,
    excess_demand,
    near_pre_pareto_solve,
    pareto_check,
    picard_solve,
    pre_pareto_check,
    separable_equilibrium,
    verify_equilibrium,
)
from .errors import CapacityError, ConvergenceError, DomainError, MonotonicityError, RadnerError, ValidationError
from .lattice import (
    Measure,
    MartingaleRep,
    PredictablePair,
    RecombiningTree,
    Tree,
    bmo_norm,
    build_tree,
    conditional_expectation,
    girsanov_extract,
    martingale_representation,
    measure_from_density,
    relative_entropy,
    stochastic_exponential,
)
from .oracle import OracleSolution, brute_force_equilibrium, optimal_strategy_dp
