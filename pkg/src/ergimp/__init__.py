"""Average-reward impulse control on finite Markov chains."""
from .chain import (
    StateGrid,
    TransitionKernel,
    build_custom_kernel,
    build_grid,
    build_ou_kernel,
    ergodicity_profile,
    expected_hitting_time,
    stationary_distribution,
)
from .potentials import RewardSpec, q_alpha, resolvent
from .qvi_discounted import (
    CostSpec,
    constant_cost,
    proportional_cost,
    separated_cost,
    solve_discounted_qvi,
)
from .qvi_ergodic import ErgodicSolution, solve_ergodic_qvi_bisection, vanishing_discount
from .strategy import ImpulsePolicy, controlled_kernel, cycle_stats, extract_policy, occupation_measure
from .simulate import simulate_paths
from .truncation import assumption_C_ratio, build_truncations, truncation_study

__version__ = "0.1.0"
