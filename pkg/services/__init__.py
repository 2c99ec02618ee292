"""
Services for the conformal-constraints lab.

Solver modules are imported directly (services.geometry,
services.lichnerowicz, ...); only the error hierarchy is re-exported here.
"""

from .errors import (
    LabError,
    SolveFailure,
    EigenFailure,
    NotFound,
    ConfigError,
    ParseError,
    UnknownKey,
    RangeError,
    MissingFile,
    NotYamabePositive,
    ConformalKillingKernel,
    InvalidInput,
    InvalidGrid,
    InvalidMetric,
    InvalidTT,
    InvalidExponent,
    InvalidTransform,
    InvalidState,
    InvalidLayout,
    PreconditionViolation,
    NoBracket,
    SingularOperator,
    NotAssociation,
    NoWitness,
)

__all__ = [
    "LabError",
    "SolveFailure",
    "EigenFailure",
    "NotFound",
    "ConfigError",
    "ParseError",
    "UnknownKey",
    "RangeError",
    "MissingFile",
    "NotYamabePositive",
    "ConformalKillingKernel",
    "InvalidInput",
    "InvalidGrid",
    "InvalidMetric",
    "InvalidTT",
    "InvalidExponent",
    "InvalidTransform",
    "InvalidState",
    "InvalidLayout",
    "PreconditionViolation",
    "NoBracket",
    "SingularOperator",
    "NotAssociation",
    "NoWitness",
]
