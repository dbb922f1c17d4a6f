"""Fluid-relaxation analysis toolkit for multi-class restless bandits.

Pipeline: model -> fluid LP relaxation -> structured optimum -> priority
policy family -> (Whittle indices | budget-sweep selection) -> fluid
attractor check -> scaled simulation / exact small-instance solving.
"""

from .model import (
    BanditClass,
    DYNAMIC,
    FixedPopulation,
    InvalidModel,
    ModelInstance,
    StateId,
    ValidationReport,
    exactly_alpha_transform,
    load_model,
    mmsm_class,
    mmsm_model,
    model_to_dict,
    save_model,
    uniformization_rate,
    validate,
)
from .lp import (
    BreakpointTable,
    EquilibriumPoint,
    LpProblem,
    LpSolution,
    StructureNotFound,
    alpha_breakpoints,
    build_fluid_lp,
    build_relaxed_lp_fixed,
    relaxed_value_fixed,
    solve_lp,
    structured_optimum,
    x0_breakpoints,
)
from .simplex import Infeasible, Unbounded
from .policy import (
    IndexabilityWitness,
    NotIndexable,
    OutOfRange,
    PolicyConstraints,
    PriorityPolicy,
    WhittleIndexTable,
    abandonment_index,
    abandonment_policy,
    enumerate_pi_star_policies,
    is_in_pi_star,
    pi_star_constraints,
    pi_star_membership,
    select_policy,
    single_class_policy,
    whittle_index,
    whittle_limit,
    whittle_policy,
)
from .fluid import (
    AttractorReport,
    Diverged,
    FluidTrajectory,
    attractor_check,
    fluid_allocation,
    fluid_rhs,
    integrate,
)
from .mdp import (
    NoConvergence,
    SingleBanditMdp,
    SolveResult,
    StateSpaceTooLarge,
    build_single_bandit,
    policy_iteration_discounted,
    relative_value_iteration,
    suboptimality_table,
    value_iteration_discounted,
)
from .sim import SimConfig, SimulationResult, convergence_study, simulate
from .scenarios import SCENARIOS, load_scenario

__version__ = "0.1.0"
