"""
Built-in half-continuity examples addressable by name.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from models.halfcont import ParamMap, TAssociation
from services.errors import InvalidInput


@dataclass
class GalleryExample:
    """An association for the dichotomy search, or a map and point for the witness search."""

    name: str
    association: Optional[TAssociation] = None
    witness_map: Optional[Callable[[np.ndarray], np.ndarray]] = None
    witness_point: Optional[np.ndarray] = None


def _norm_constraint(a: float):
    def F(t: float, x: np.ndarray) -> float:
        return float(np.max(np.abs(x))) - a
    return F


def schaefer(a: float = 2.0, name: str = "schaefer") -> GalleryExample:
    """T(t,x) = x^2 + 1 with the single constraint ||x|| - a."""
    quadratic_map = ParamMap(
        dimension=1,
        evaluator=lambda t, x: x ** 2 + 1.0,
        jacobian=lambda t, x: np.diag(2.0 * x),
        name="x^2+1",
    )
    return GalleryExample(name=name, association=TAssociation(
        map=quadratic_map, constraints=[_norm_constraint(a)], name=f"{name}(a={a})"))


def quadratic(a: float = 2.0) -> GalleryExample:
    return schaefer(a, name="quadratic")


def linear(a: float = 2.0) -> GalleryExample:
    """T(t,x) = (x + 1)/2, fixed point 1 of T(1, .)."""
    linear_map = ParamMap(dimension=1, evaluator=lambda t, x: 0.5 * (x + 1.0), name="(x+1)/2")
    return GalleryExample(name="linear", association=TAssociation(
        map=linear_map, constraints=[_norm_constraint(a)], name=f"linear(a={a})"))


def step_map(y: np.ndarray) -> np.ndarray:
    """3 on [0,1), 2 elsewhere. Half-continuous, not continuous at 1."""
    y = np.asarray(y, dtype=float)
    return np.where((y >= 0.0) & (y < 1.0), 3.0, 2.0)


def step(a: float = 2.0) -> GalleryExample:
    return GalleryExample(name="step", witness_map=step_map, witness_point=np.array([1.0]))


GALLERY = {
    "quadratic": quadratic,
    "linear": linear,
    "step": step,
    "schaefer": schaefer,
}


def get_example(name: str, a: float = 2.0) -> GalleryExample:
    """
    Raises:
        InvalidInput: unknown example name
    """
    try:
        builder = GALLERY[name]
    except KeyError:
        raise InvalidInput(f"unknown gallery example '{name}' (choose from {sorted(GALLERY)})", "UNKNOWN_EXAMPLE")
    return builder(a)
