"""robocp: robust optimal control by automatic scenario generation.

Solves min-max optimal control problems with parametric and time-varying
box uncertainty by alternating a finite-scenario policy optimization with
worst-case search (semi-infinite local reduction), plus a-posteriori
violation/probability bounds and a benchmark model zoo.
"""

from .ocp import (
    ContractViolation,
    DecisionBox,
    DivergedCost,
    DivergedTrajectory,
    PolicyPoint,
    RobustOcp,
    Scenario,
    Trajectory,
    UncertaintyBox,
    aggregate_G,
    g_max_finite,
    simulate,
    stage_constraint_values,
    total_cost,
)

__version__ = "0.1.0"
