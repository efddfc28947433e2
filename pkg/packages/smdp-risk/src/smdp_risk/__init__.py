# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from .bellman import PolicyTable, apply_L, apply_T, apply_Tf
from .config import SolverRuntimeConfig, get_runtime_cfg
from .exponential import (
    HTable,
    h_step,
    lambda_independence_violations,
    solve_exponential,
    solve_exponential_finite,
    splitting_residual,
    value_table_from_h,
)
from .headers import HeaderError, model_hash
from .model import (
    Assumption1Certificate,
    ModelFormatError,
    ModelValidationError,
    NoCertificate,
    SmdpModel,
    ValidationReport,
    cdf,
    certify_assumption1,
    default_delta,
    load_model,
    parse_model,
    quantile,
    validate,
)
from .numerics import (
    AugGrid,
    GridError,
    QuadratureRule,
    ValueTable,
    build_grid,
    build_quadrature,
    export_csv,
    interpolate,
)
from .simulate import (
    MonteCarloEstimate,
    TrajectorySample,
    discount_moments,
    estimate_value,
    sample_trajectory,
)
from .solver_finite import FiniteSolution, evaluate_markov_policy, solve_finite
from .solver_infinite import (
    NonConvergence,
    SandwichResult,
    error_bound,
    evaluate_stationary,
    improve_policy,
    policy_iteration,
    solve_infinite,
)
from .utility import (
    ExponentialUtility,
    LinearUtility,
    Log1pUtility,
    PowerUtility,
    Utility,
    UtilityDomainError,
)

__all__ = [
    # model
    "SmdpModel",
    "ValidationReport",
    "Assumption1Certificate",
    "ModelFormatError",
    "ModelValidationError",
    "NoCertificate",
    "validate",
    "certify_assumption1",
    "default_delta",
    "cdf",
    "quantile",
    "load_model",
    "parse_model",
    "model_hash",
    "HeaderError",
    # utility
    "Utility",
    "ExponentialUtility",
    "PowerUtility",
    "Log1pUtility",
    "LinearUtility",
    "UtilityDomainError",
    # numerics
    "AugGrid",
    "ValueTable",
    "QuadratureRule",
    "GridError",
    "build_grid",
    "build_quadrature",
    "interpolate",
    "export_csv",
    # operators and solvers
    "PolicyTable",
    "apply_L",
    "apply_Tf",
    "apply_T",
    "FiniteSolution",
    "solve_finite",
    "evaluate_markov_policy",
    "SandwichResult",
    "NonConvergence",
    "error_bound",
    "solve_infinite",
    "evaluate_stationary",
    "improve_policy",
    "policy_iteration",
    "HTable",
    "h_step",
    "solve_exponential",
    "solve_exponential_finite",
    "value_table_from_h",
    "splitting_residual",
    "lambda_independence_violations",
    # simulation
    "TrajectorySample",
    "MonteCarloEstimate",
    "sample_trajectory",
    "estimate_value",
    "discount_moments",
    # config
    "SolverRuntimeConfig",
    "get_runtime_cfg",
]
