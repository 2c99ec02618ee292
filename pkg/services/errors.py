"""
Error hierarchy for the lab.
Every error carries a technical message, a short user-facing message,
a stable code and the process exit code the CLI maps it to.
"""

from typing import Optional, Sequence

import numpy as np


class LabError(Exception):
    """Base exception for all lab errors."""

    exit_code: int = 1

    def __init__(self, message: str, user_message: str, code: str):
        super().__init__(message)
        self.user_message = user_message
        self.code = code


# -------------------------------------------------------------------------
# Numerical failures (exit 2)
# -------------------------------------------------------------------------

class SolveFailure(LabError):
    """Raised when an iterative solver does not converge."""

    exit_code = 2

    def __init__(self, solver: str, iterations: int, residual: float, history: Optional[list] = None):
        super().__init__(
            f"{solver} did not converge after {iterations} iterations (residual {residual:.3e})",
            f"The {solver} solve failed to converge.",
            "SOLVE_FAILURE"
        )
        self.solver = solver
        self.iterations = iterations
        self.residual = residual
        self.history = history or []


class EigenFailure(LabError):
    """Raised when inverse iteration stagnates."""

    exit_code = 2

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"Inverse iteration stagnated after {iterations} iterations (residual {residual:.3e})",
            "Could not compute the first eigenpair of the conformal Laplacian.",
            "EIGEN_FAILURE"
        )
        self.iterations = iterations
        self.residual = residual


class NotFound(LabError):
    """Raised when a search exhausts its budget. Not a refutation."""

    exit_code = 2

    def __init__(self, what: str, trace=None):
        super().__init__(
            f"Search exhausted without finding {what}",
            f"No {what} found within the search budget.",
            "NOT_FOUND"
        )
        self.trace = trace


# -------------------------------------------------------------------------
# Configuration errors (exit 3)
# -------------------------------------------------------------------------

class ConfigError(LabError):
    """Base class for run-configuration errors."""

    exit_code = 3


class ParseError(ConfigError):
    """Raised for malformed or duplicated config lines."""

    def __init__(self, reason: str, lines: Sequence[int]):
        where = " and ".join(str(n) for n in lines)
        super().__init__(
            f"Config parse error at line {where}: {reason}",
            f"Line {where}: {reason}",
            "PARSE_ERROR"
        )
        self.lines = list(lines)


class UnknownKey(ConfigError):
    """Raised when a config section contains an unknown key."""

    def __init__(self, section: str, key: str):
        super().__init__(
            f"Unknown key '{key}' in section [{section}]",
            f"Unknown setting [{section}] {key}",
            "UNKNOWN_KEY"
        )
        self.section = section
        self.key = key


class RangeError(ConfigError):
    """Raised when a config value is outside its documented range."""

    def __init__(self, section: str, key: str, reason: str):
        super().__init__(
            f"Invalid value for [{section}] {key}: {reason}",
            f"[{section}] {key}: {reason}",
            "RANGE_ERROR"
        )
        self.section = section
        self.key = key


class MissingFile(ConfigError):
    """Raised when a config references a file that does not exist."""

    def __init__(self, path: str):
        super().__init__(
            f"Referenced file not found: {path}",
            f"File not found: {path}",
            "MISSING_FILE"
        )
        self.path = path


# -------------------------------------------------------------------------
# Numerical preconditions (exit 4)
# -------------------------------------------------------------------------

class NotYamabePositive(LabError):
    """Raised when the first conformal-Laplacian eigenvalue is not positive."""

    exit_code = 4

    def __init__(self, lambda1: float):
        super().__init__(
            f"First eigenvalue {lambda1:.3e} is not positive",
            "The metric is not Yamabe-positive (first eigenvalue <= 0).",
            "NOT_YAMABE_POSITIVE"
        )
        self.lambda1 = lambda1


class ConformalKillingKernel(LabError):
    """Raised when the vector Laplacian has a numerical kernel."""

    exit_code = 4

    def __init__(self, smallest: float, threshold: float, kernel_direction: np.ndarray):
        super().__init__(
            f"Vector Laplacian smallest eigenvalue {smallest:.3e} below {threshold:.3e}",
            "The geometry carries a conformal Killing field; the vector equation is not uniquely solvable.",
            "CONFORMAL_KILLING_KERNEL"
        )
        self.smallest = smallest
        self.threshold = threshold
        self.kernel_direction = kernel_direction


# -------------------------------------------------------------------------
# Input and precondition errors (exit 1)
# -------------------------------------------------------------------------

class InvalidInput(LabError):
    """Base class for invalid inputs to an operation."""

    def __init__(self, message: str, code: str):
        super().__init__(message, message, code)


class InvalidGrid(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_GRID")


class InvalidMetric(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_METRIC")


class InvalidTT(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_TT")


class InvalidExponent(InvalidInput):
    def __init__(self, p: float):
        super().__init__(f"L^p exponent must be >= 1, got {p}", "INVALID_EXPONENT")
        self.p = p


class InvalidTransform(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_TRANSFORM")


class InvalidState(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_STATE")


class InvalidLayout(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "INVALID_LAYOUT")


class PreconditionViolation(InvalidInput):
    def __init__(self, message: str):
        super().__init__(message, "PRECONDITION_VIOLATION")


class NoBracket(LabError):
    """Raised when no constant sub/supersolution pair can be verified."""

    def __init__(self, reason: str):
        super().__init__(
            f"No constant bracket: {reason}",
            "Could not bracket the Lichnerowicz solution.",
            "NO_BRACKET"
        )


class SingularOperator(LabError):
    """Raised when a linear solve meets a numerically singular operator."""

    def __init__(self, smallest: float, scale: float, kernel_direction: np.ndarray):
        super().__init__(
            f"Operator numerically singular (sigma_min {smallest:.3e}, scale {scale:.3e})",
            "The linear operator is singular.",
            "SINGULAR_OPERATOR"
        )
        self.smallest = smallest
        self.scale = scale
        self.kernel_direction = kernel_direction


class NotAssociation(LabError):
    """Raised when constraint functions fail the association clauses."""

    def __init__(self, reason: str, witness=None):
        super().__init__(
            f"Not an association: {reason}",
            "The constraint family is not admissible for the dichotomy search.",
            "NOT_ASSOCIATION"
        )
        self.witness = witness


class NoWitness(LabError):
    """Raised when no half-continuity witness is found. Not a disproof."""

    def __init__(self, budget: int):
        super().__init__(
            f"No half-continuity witness within {budget} samples",
            "No half-continuity witness found.",
            "NO_WITNESS"
        )
        self.budget = budget
