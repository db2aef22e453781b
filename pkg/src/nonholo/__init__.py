"""Constrained Lagrangian dynamics: d'Alembert and vakonomic treatments of
holonomic, nonholonomic (linear and nonlinear) and higher-order constraints,
with a fixed-step integrator, an affine-body model and a scenario runner."""

from .kernel import (
    DerivativeBundle,
    Differentiator,
    EngineError,
    EvaluationError,
    Jet,
    SingularSystemError,
    differentiate,
    solve_saddle,
)
from .lagrangian import EnergyReport, LagrangianModel, RegularityError, energy, legendre, regularity
from .constraints import (
    ClassificationReport,
    ConstraintError,
    ConstraintKind,
    ConstraintSet,
    MissingAccelerationError,
    OffManifoldError,
    classify,
    frobenius_integrable,
    homogeneity_defect,
    pfaff_forms,
    velocity_rank,
    wedge_components,
)
from .state import AugmentedState, StepEval
from .dalembert import DalembertSystem, PenaltyRealization, assemble_dalembert, reaction_power
from .vakonomic import EffectiveMassError, VakonomicSystem, constraint_energy, total_energy
from .integrate import (
    IntegratorConfig,
    ProjectionError,
    SimulationResult,
    Status,
    TrajectorySample,
    project_to_manifold,
    simulate,
)
from .affine import (
    AffineConfiguration,
    AffineError,
    AffineResult,
    InertiaData,
    build_affine_model,
    compare_green,
    green_tensor,
    polar_decompose,
    simulate_affine,
    symmetry_residual,
)

__version__ = "0.1.0"

__all__ = [
    "DerivativeBundle",
    "Differentiator",
    "EngineError",
    "EvaluationError",
    "Jet",
    "SingularSystemError",
    "differentiate",
    "solve_saddle",
    "EnergyReport",
    "LagrangianModel",
    "RegularityError",
    "energy",
    "legendre",
    "regularity",
    "ClassificationReport",
    "ConstraintError",
    "ConstraintKind",
    "ConstraintSet",
    "MissingAccelerationError",
    "OffManifoldError",
    "classify",
    "frobenius_integrable",
    "homogeneity_defect",
    "pfaff_forms",
    "velocity_rank",
    "wedge_components",
    "AugmentedState",
    "StepEval",
    "DalembertSystem",
    "PenaltyRealization",
    "assemble_dalembert",
    "reaction_power",
    "EffectiveMassError",
    "VakonomicSystem",
    "constraint_energy",
    "total_energy",
    "IntegratorConfig",
    "ProjectionError",
    "SimulationResult",
    "Status",
    "TrajectorySample",
    "project_to_manifold",
    "simulate",
    "AffineConfiguration",
    "AffineError",
    "AffineResult",
    "InertiaData",
    "build_affine_model",
    "compare_green",
    "green_tensor",
    "polar_decompose",
    "simulate_affine",
    "symmetry_residual",
]
