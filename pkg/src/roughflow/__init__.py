"""Rough differential equations solved by sewing almost flows."""

from .algebra import TensorSeries, identity, inverse, segment_signature, tensor_product
from .analysis import (
    SolutionPath,
    apply_perturbation,
    davie_solution_check,
    inverse_flow,
    invert_step,
    solution_compare,
    solve,
)
from .driver import (
    PiecewiseLinearDriver,
    PureAreaDriver,
    SewingParameters,
    check_chen,
    driver_from_config,
    lift_smooth,
    make_holder_control,
    pure_area_driver,
)
from .errors import (
    CapabilityError,
    ConfigError,
    HorizonTooLarge,
    HypothesisViolation,
    NonConvergence,
    RoughFlowError,
)
from .fields import VectorFieldFamily, field_from_config, linear_field, trig_field
from .flows import FlowFamily, IncrementFlow, Partition, galaxy_distance, iterated_product
from .reports import DefectReport
from .schemes import (
    SchemeSpec,
    bailleul_almost_flow,
    davie_almost_flow,
    friz_victoir_almost_flow,
    step_n_euler,
)
from .sewing import convergence_study, davie_constant_continuous, davie_constant_discrete, sew

__version__ = "0.1.0"

__all__ = [
    "TensorSeries",
    "identity",
    "inverse",
    "segment_signature",
    "tensor_product",
    "SolutionPath",
    "apply_perturbation",
    "davie_solution_check",
    "inverse_flow",
    "invert_step",
    "solution_compare",
    "solve",
    "PiecewiseLinearDriver",
    "PureAreaDriver",
    "SewingParameters",
    "check_chen",
    "driver_from_config",
    "lift_smooth",
    "make_holder_control",
    "pure_area_driver",
    "CapabilityError",
    "ConfigError",
    "HorizonTooLarge",
    "HypothesisViolation",
    "NonConvergence",
    "RoughFlowError",
    "VectorFieldFamily",
    "field_from_config",
    "linear_field",
    "trig_field",
    "FlowFamily",
    "IncrementFlow",
    "Partition",
    "galaxy_distance",
    "iterated_product",
    "DefectReport",
    "SchemeSpec",
    "bailleul_almost_flow",
    "davie_almost_flow",
    "friz_victoir_almost_flow",
    "step_n_euler",
    "convergence_study",
    "davie_constant_continuous",
    "davie_constant_discrete",
    "sew",
]
