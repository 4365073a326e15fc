import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stefan_control.errors import AdmissibilityError
from stefan_control.numerics import SpaceGrid, TimeGrid
from stefan_control.stefan_forward import ReferenceParams, make_reference_trajectory
from stefan_control.transform import (
    CylinderState,
    FrontState,
    PerturbationState,
    cylinder_to_physical,
    from_perturbation,
    initial_distance,
    lagrange_resample,
    physical_to_cylinder,
    to_perturbation,
)

UNIT = SpaceGrid(0, 1, 41)


def _front(ell, n=41):
    x = np.linspace(0, ell, n)
    return FrontState(np.sin(np.pi * x / ell) * (1 + x), ell)


def test_identity_when_ell_is_one():
    s = _front(1.0)
    c = physical_to_cylinder(s, UNIT)
    np.testing.assert_allclose(c.p, s.u, atol=1e-14)
    assert c.q == 1.0


def test_squaring():
    assert physical_to_cylinder(_front(2.0), UNIT).q == 4.0
    f = cylinder_to_physical(CylinderState(np.zeros(41), 4.0), 41)
    assert f.ell == 2.0


def test_lagrange_exact_on_cubics():
    x = np.linspace(0, 1, 9)
    xn = np.random.default_rng(0).uniform(0, 1, 50)
    f = lambda t: 1 - 2 * t + 3 * t**2 - t**3
    np.testing.assert_allclose(lagrange_resample(x, f(x), xn), f(xn), atol=1e-13)


def test_round_trip_order():
    errs = []
    ell = 1.3
    for n in (21, 41, 81):
        x = np.linspace(0, ell, n)
        s = FrontState(np.sin(np.pi * x / ell), ell)
        back = cylinder_to_physical(physical_to_cylinder(s, SpaceGrid(0, 1, n + 6)), SpaceGrid(0, ell, n))
        errs.append(np.abs(back.u - s.u).max())
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes >= 2.7), slopes


def test_admissibility_enforced():
    with pytest.raises(AdmissibilityError):
        FrontState(np.zeros(5), 0.05, ell_star=0.1)
    with pytest.raises(AdmissibilityError):
        CylinderState(np.zeros(5), 0.005, q_star=0.01)


@pytest.fixture(scope="module")
def ref():
    return make_reference_trajectory(ReferenceParams(), SpaceGrid(0, 1, 21), TimeGrid(1.0, 10))


def test_perturbation_examples(ref):
    st0 = CylinderState(ref.p[3].copy(), ref.q[3])
    pert = to_perturbation(st0, ref, 3)
    assert np.all(pert.z == 0) and pert.h == 0
    # h = beta (q - qbar)/2 bit-exactly
    st1 = CylinderState(ref.p[3].copy(), ref.q[3] + 1.0)
    assert to_perturbation(st1, ref, 3).h == ref.beta * ((ref.q[3] + 1.0) - ref.q[3]) / 2
    back = from_perturbation(PerturbationState(np.zeros(21), 0.0), ref, 3)
    np.testing.assert_array_equal(back.p, ref.p[3])
    assert back.q == ref.q[3]


def test_from_perturbation_admissibility(ref):
    with pytest.raises(AdmissibilityError):
        from_perturbation(PerturbationState(np.zeros(21), -ref.q[0]), ref, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 10))
def test_perturbation_inverse(ref, seed, k):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=21) * 0.1
    z[-1] = 0
    pert = PerturbationState(z, float(rng.uniform(-0.05, 0.05)))
    cyl = from_perturbation(pert, ref, k)
    again = to_perturbation(cyl, ref, k)
    np.testing.assert_allclose(again.z, pert.z, atol=1e-15)
    assert again.h == pytest.approx(pert.h, abs=1e-15)


def test_initial_distance():
    a = _front(1.2)
    assert initial_distance(a, a) == 0.0
    b = _front(1.21)
    assert initial_distance(b, a) > 0.01
