"""
Tests for the finite-dimensional S-map, association certificates,
dichotomy search and half-continuity witnesses.
"""

import numpy as np
import pytest

from models.halfcont import CRITICAL_TUPLE, FIXED_POINT, ParamMap, TAssociation
from services import halfcont
from services.errors import InvalidInput, NotAssociation, NoWitness, PreconditionViolation
from services.gallery import get_example, linear, quadratic, schaefer, step_map


def _identity_association(constraint) -> TAssociation:
    identity = ParamMap(dimension=1, evaluator=lambda t, x: x, name="x")
    return TAssociation(map=identity, constraints=[constraint], budget=3000)


# -------------------------------------------------------------------------
# S-map
# -------------------------------------------------------------------------

@pytest.mark.parametrize("x, expected", [
    (1.0, (1.0, 2.0)),
    (3.0, (0.0, 0.0)),
    (2.0, (1.0, 5.0)),
])
def test_smap_eval(x, expected):
    assoc = quadratic(2.0).association
    t_out, x_out = halfcont.smap_eval(assoc, 0.3, x)
    assert t_out == expected[0]
    assert x_out == pytest.approx([expected[1]])


# -------------------------------------------------------------------------
# Certificates
# -------------------------------------------------------------------------

def test_quadratic_certificate_bound():
    certificate = halfcont.check_association(quadratic(2.0).association)
    assert certificate.bound == pytest.approx(5.0, rel=1e-6)
    assert len(certificate.box_sups) == 3


def test_constraint_must_be_negative_at_origin():
    assoc = _identity_association(lambda t, x: float(np.max(np.abs(x))))
    with pytest.raises(NotAssociation):
        halfcont.check_association(assoc)


def test_unbounded_image_rejected():
    assoc = _identity_association(lambda t, x: -1.0)
    with pytest.raises(NotAssociation) as info:
        halfcont.check_association(assoc)
    assert info.value.witness is not None


# -------------------------------------------------------------------------
# Dichotomy
# -------------------------------------------------------------------------

def test_quadratic_gives_critical_tuple():
    result = halfcont.dichotomy_search(quadratic(2.0).association)
    assert result.variant == CRITICAL_TUPLE
    assert result.t == pytest.approx(0.4, abs=1e-8)
    assert result.x == pytest.approx([2.0], abs=1e-8)
    assert result.active_index == 0


def test_linear_gives_fixed_point():
    result = halfcont.dichotomy_search(linear(2.0).association)
    assert result.variant == FIXED_POINT
    assert result.is_fixed_point
    assert result.x == pytest.approx([1.0], abs=1e-10)


def test_schaefer_tuple_on_the_sphere():
    a = 3.0
    result = halfcont.dichotomy_search(schaefer(a).association)
    assert result.variant == CRITICAL_TUPLE
    assert np.max(np.abs(result.x)) == pytest.approx(a, abs=1e-8)
    assert result.t == pytest.approx(a / (a * a + 1.0), abs=1e-8)


def test_dichotomy_is_deterministic():
    assoc = quadratic(2.0).association
    first = halfcont.dichotomy_search(assoc, seed=7, max_workers=1)
    second = halfcont.dichotomy_search(assoc, seed=7, max_workers=4)
    assert first.to_dict() == second.to_dict()


def test_smap_fixed_points_of_linear():
    points = halfcont.smap_fixed_points(linear(2.0).association)
    assert len(points) == 1
    assert points[0] == pytest.approx([1.0], abs=1e-7)


# -------------------------------------------------------------------------
# Witnesses
# -------------------------------------------------------------------------

def test_step_witness():
    witness = halfcont.half_continuity_witness(step_map, [1.0])
    assert witness.p == pytest.approx([1.0])
    assert witness.radius == 0.5


def test_witness_rejects_fixed_point():
    with pytest.raises(PreconditionViolation):
        halfcont.half_continuity_witness(step_map, [2.0])


def test_no_witness_at_sign_flip():
    # f(y) - y flips sign at x = 0.5, so every ball around it sees both signs
    def f(y):
        y = np.asarray(y, dtype=float)
        return np.where(y < 0.5, y + 1.0, y - 1.0)

    with pytest.raises(NoWitness):
        halfcont.half_continuity_witness(f, [0.5], budget=500)


def test_unknown_gallery_example():
    with pytest.raises(InvalidInput):
        get_example("nope")
