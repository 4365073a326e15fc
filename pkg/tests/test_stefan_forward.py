import math

import numpy as np
import pytest

from stefan_control.errors import AdmissibilityError, CompatibilityError, HypothesisViolation
from stefan_control.linear_system import SourcePair, solve_linearized, stefan_coefficients
from stefan_control.numerics import SpaceGrid, TimeGrid, centered_derivative
from stefan_control.stefan_forward import (
    ExtendedSystemInput,
    NeumannSolution,
    ReferenceParams,
    discretize_reference,
    extend_even,
    extend_reference,
    make_reference_trajectory,
    neumann_k,
    nonlinear_remainder,
    reference_residual,
    solve_cylinder_stefan,
    solve_extended_nonlinear,
)

BETA = 1.0


def test_neumann_k_root():
    k = neumann_k(1.0, 1.0)
    assert abs(math.sqrt(math.pi) * k * math.exp(k * k) * math.erf(k) - 1.0) <= 1e-12
    with pytest.raises(HypothesisViolation):
        neumann_k(-1.0, 1.0)


def test_zero_data_keeps_front():
    xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, 20)
    hist = solve_cylinder_stefan(np.zeros(21), 1.3, 0.0, xg, tg, BETA)
    assert np.all(hist.p == 0)
    assert np.all(hist.q == 1.3)


def test_compatibility_and_admissibility():
    xg, tg = SpaceGrid(0, 1, 11), TimeGrid(1.0, 10)
    with pytest.raises(CompatibilityError):
        solve_cylinder_stefan(1 - xg.x, 1.0, 2.0, xg, tg, BETA)
    with pytest.raises(AdmissibilityError):
        solve_cylinder_stefan(1 - xg.x, 0.001, 1.0, xg, tg, BETA)
    # strong cooling drains the front below the floor
    with pytest.raises(AdmissibilityError, match="time step"):
        solve_cylinder_stefan(-(1 - xg.x) * 5, 0.05, -5.0, xg, tg, BETA, q_star=0.01)


def _neumann_errors(n, m, T=1.0):
    xg, tg = SpaceGrid(0, 1, n), TimeGrid(T, m)
    ref = make_reference_trajectory(ReferenceParams(), xg, tg)
    hist = solve_cylinder_stefan(ref.p[0], ref.q[0], 1.0, xg, tg, BETA)
    return np.abs(hist.p - ref.p).max() + np.abs(hist.q - ref.q).max()


def test_neumann_oracle_parabolic_refinement():
    e = [_neumann_errors(n, m) for n, m in ((26, 50), (51, 200), (101, 800))]
    assert np.log2(e[0] / e[1]) >= 1.8 and np.log2(e[1] / e[2]) >= 1.8


def _mms_cylinder(n, m, T=0.5):
    xg, tg = SpaceGrid(0, 1, n), TimeGrid(T, m)
    y, t = xg.x, tg.t
    Y, Tm = np.meshgrid(y, t)
    p = (1 - Y) * (1 + 0.5 * np.sin(2 * Tm) * Y + Y**2 / 3)
    pt = (1 - Y) * np.cos(2 * Tm) * Y
    py = -(1 + 0.5 * np.sin(2 * Tm) * Y + Y**2 / 3) + (1 - Y) * (0.5 * np.sin(2 * Tm) + 2 * Y / 3)
    pyy = -2 * (0.5 * np.sin(2 * Tm) + 2 * Y / 3) + (1 - Y) * 2 / 3
    py1 = py[:, -1]
    q = 1 + 0.5 * t + 0.1 * np.sin(3 * t)
    qt = 0.5 + 0.3 * np.cos(3 * t)
    S = q[:, None] * pt - pyy + Y / BETA * py1[:, None] * py
    Sq = BETA * qt + 2 * py1
    hist = solve_cylinder_stefan(p[0], q[0], p[:, 0], xg, tg, BETA, source=S, q_source=Sq)
    return np.abs(hist.p - p).max(), np.abs(hist.q - q).max()


def test_mms_cylinder_orders():
    s1, s2 = _mms_cylinder(11, 4000)[0], _mms_cylinder(21, 4000)[0]
    assert np.log2(s1 / s2) >= 1.8
    (p1, q1), (p2, q2) = _mms_cylinder(201, 20), _mms_cylinder(201, 40)
    assert np.log2(p1 / p2) >= 0.9 and np.log2(q1 / q2) >= 0.9


def test_maximum_principle_and_front_monotone():
    xg, tg = SpaceGrid(0, 1, 41), TimeGrid(1.0, 100)
    v = lambda t: 0.5 + 0.5 * np.cos(3 * t) ** 2
    p0 = (1 - xg.x) ** 2
    hist = solve_cylinder_stefan(p0, 0.8, v, xg, tg, BETA)
    assert hist.p.min() >= -1e-10
    assert np.all(np.diff(hist.q) >= -1e-12)


class TestReference:
    def test_neumann_front(self):
        xg, tg = SpaceGrid(0, 1, 41), TimeGrid(1.0, 40)
        par = ReferenceParams(t0=0.5)
        ref = make_reference_trajectory(par, xg, tg)
        k = neumann_k(par.V, par.beta)
        np.testing.assert_allclose(ref.q, 4 * k**2 * (tg.t + 0.5), rtol=1e-14)
        assert np.all(ref.p[:, -1] == 0)
        field_res, ode_res = reference_residual(ref)
        assert max(field_res, ode_res) <= 10 * (xg.dx**2 + tg.dt)

    def test_neumann_physical_profile(self):
        sol = NeumannSolution(1.0, 1.0, 0.5)
        t = 0.3
        x = np.linspace(0, sol.ell(t), 7)
        np.testing.assert_allclose(sol.u(x, t), sol.p(x / sol.ell(t)), atol=1e-14)

    def test_numeric_kind(self):
        xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, 40)
        ref = make_reference_trajectory(ReferenceParams(kind="numeric"), xg, tg)
        assert np.all(ref.v > 0)
        assert np.all(ref.p[:, -1] == 0)
        field_res, ode_res = reference_residual(ref)
        assert max(field_res, ode_res) <= 10 * (xg.dx**2 + tg.dt)

    def test_nonpositive_trace_rejected(self):
        xg, tg = SpaceGrid(0, 1, 11), TimeGrid(1.0, 10)
        par = ReferenceParams(kind="numeric", v=lambda t: 1 - 2 * t, p0=lambda y: 1 - y)
        with pytest.raises(HypothesisViolation):
            make_reference_trajectory(par, xg, tg)

    def test_pt_matches_centered_differences(self):
        # numeric kind stores centered differences of the fine field; compare
        # against a direct second-order difference on the restricted field
        errs = []
        for m in (20, 40):
            xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, m)
            ref = make_reference_trajectory(ReferenceParams(kind="numeric"), xg, tg)
            cd = (ref.p[2:] - ref.p[:-2]) / (2 * tg.dt)
            errs.append(np.abs(ref.pt[m // 2] - cd[m // 2 - 1]).max())
        assert errs[1] < errs[0]

    def test_discretized_reference_is_exact(self):
        xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, 20)
        ref = discretize_reference(make_reference_trajectory(ReferenceParams(), xg, tg))
        field_res, ode_res = reference_residual(ref)
        assert field_res <= 1e-9 and ode_res <= 1e-11

    @pytest.mark.parametrize("strategy", ["reflect", "taper"])
    def test_extension(self, strategy):
        xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, 10)
        ref = make_reference_trajectory(ReferenceParams(), xg, tg)
        ext = extend_reference(ref, strategy)
        assert ext.xgrid.n == 41 and ext.xgrid.a == -1
        np.testing.assert_array_equal(ext.p[:, 20:], ref.p)
        assert np.all(ext.p[:, 0] == 0)
        np.testing.assert_allclose(ext.px[:, 21:-1], centered_derivative(ref.p, xg)[:, 1:-1])


@pytest.fixture(scope="module")
def ext_ref():
    xg, tg = SpaceGrid(0, 1, 31), TimeGrid(1.0, 60)
    ref = discretize_reference(make_reference_trajectory(ReferenceParams(), xg, tg))
    return ref, extend_reference(ref)


def _inputs(ext, eps):
    X, t = ext.xgrid.x, ext.tgrid.t
    y = X[X >= 0]
    z0 = extend_even(eps * np.sin(np.pi * y) * (1 - y))
    w = np.zeros((len(t), len(X)))
    mask = (X >= -0.7) & (X <= -0.3)
    w[:, mask] = eps * np.cos(np.pi * t)[:, None] * np.sin(np.pi * (X[mask] + 0.7) / 0.4)
    return ExtendedSystemInput(z0, 0.3 * eps, w, ext)


def test_extended_zero(ext_ref):
    _, ext = ext_ref
    hist = solve_extended_nonlinear(_inputs(ext, 0.0))
    assert np.all(hist.z == 0) and np.all(hist.h == 0)


def test_extended_quadratic_deviation(ext_ref):
    _, ext = ext_ref
    devs = []
    for eps in (1e-1, 1e-2, 1e-3):
        inp = _inputs(ext, eps)
        nl = solve_extended_nonlinear(inp)
        lin = solve_linearized(stefan_coefficients(ext), SourcePair(inp.w, np.zeros(ext.tgrid.m + 1)), inp.z0, inp.h0)
        devs.append(np.abs(nl.z - lin.z).max() + np.abs(nl.h - lin.h).max())
    slopes = np.log10(np.array(devs[:-1]) / np.array(devs[1:]))
    assert np.all(np.abs(slopes - 2) <= 0.2), slopes


def test_extended_restricts_to_cylinder_solution(ext_ref):
    ref, ext = ext_ref
    nl = solve_extended_nonlinear(_inputs(ext, 0.1))
    i0 = ext.xgrid.index_of(0.0)
    v = ref.v + nl.z[:, i0]
    hist = solve_cylinder_stefan(ref.p[0] + nl.z[0, i0:], ref.q[0] + 2 * nl.h[0] / ref.beta, v,
                                 ref.xgrid, ref.tgrid, ref.beta, ref.q_star)
    assert np.abs(hist.p - ref.p - nl.z[:, i0:]).max() <= 1e-10
    assert np.abs(hist.q - ref.q - 2 * nl.h / ref.beta).max() <= 1e-10


def test_remainder_fixed_point(ext_ref):
    _, ext = ext_ref
    inp = _inputs(ext, 0.1)
    nl = solve_extended_nonlinear(inp)
    f1 = nonlinear_remainder(nl.z, nl.h, ext.xgrid, ext.tgrid, ext.beta)
    lin = solve_linearized(stefan_coefficients(ext), SourcePair(inp.w + f1, np.zeros(ext.tgrid.m + 1)), inp.z0, inp.h0)
    assert np.abs(lin.z - nl.z).max() <= 1e-12


def _mms_extended(n, m):
    xg, tg = SpaceGrid(0, 1, n), TimeGrid(0.5, m)
    ref = discretize_reference(make_reference_trajectory(ReferenceParams(), xg, tg))
    ext = extend_reference(ref)
    X, Tm = np.meshgrid(ext.xgrid.x, tg.t)
    z = 0.1 * np.sin(np.pi * X) * np.exp(-Tm) * (1.5 + X)
    zt = -z
    zx = 0.1 * np.exp(-Tm) * (np.pi * np.cos(np.pi * X) * (1.5 + X) + np.sin(np.pi * X))
    zxx = 0.1 * np.exp(-Tm) * (-np.pi**2 * np.sin(np.pi * X) * (1.5 + X) + 2 * np.pi * np.cos(np.pi * X))
    h = 0.05 * np.cos(tg.t)
    zx1 = zx[:, -1]
    c = stefan_coefficients(ext)
    F = (c.qbar[:, None] + 2 * h[:, None] / BETA) * zt - zxx + c.a * zx + c.R * h[:, None] + c.N * zx1[:, None] \
        + X / BETA * zx1[:, None] * zx
    G = -0.05 * np.sin(tg.t) + zx1
    inp = ExtendedSystemInput(z[0], h[0], np.zeros_like(z), ext, F=F, G=G)
    hist = solve_extended_nonlinear(inp)
    return np.abs(hist.z - z).max(), np.abs(hist.h - h).max()


def test_mms_extended_space_order():
    e1, e2 = _mms_extended(11, 2000)[0], _mms_extended(21, 2000)[0]
    assert np.log2(e1 / e2) >= 1.8


def test_mms_extended_time_order():
    (z1, h1), (z2, h2) = _mms_extended(101, 10), _mms_extended(101, 20)
    assert np.log2(z1 / z2) >= 0.9 and np.log2(h1 / h2) >= 0.9
