from dataclasses import replace

import numpy as np
import pytest

from stefan_control.adjoint import solve_adjoint, stefan_adjoint_coefficients
from stefan_control.carleman_verify import (
    alpha_density_logs,
    alpha_derivatives,
    carleman_sides_basic,
    carleman_sides_modified,
    carleman_sides_trajectory,
    carleman_sweep,
    decomposition_identity,
    demo_coefficients,
    log_integral,
    modified_density_logs,
    random_basic_datasets,
    solve_basic_system,
)
from stefan_control.errors import ParameterError
from stefan_control.linear_system import CoefficientSet
from stefan_control.numerics import SpaceGrid, TimeGrid, trapezoid
from stefan_control.stefan_forward import ReferenceParams, extend_reference, make_reference_trajectory
from stefan_control.weights import CarlemanParams, build_eta, tabulate_weights

ETA = build_eta((-0.6, -0.4))


def _setup(n=41, m=200, T=1.0, params=None):
    xg, tg = SpaceGrid(-1, 1, n), TimeGrid(T, m)
    c = demo_coefficients(xg, tg)
    return c, tabulate_weights(ETA, params or CarlemanParams(), xg, tg)


@pytest.fixture(scope="module")
def coarse():
    c, table = _setup()
    return c, table, random_basic_datasets(c, np.random.default_rng(0), 10)


def _zero_state(c):
    m, n = c.tgrid.m, c.xgrid.n
    z = np.zeros((m + 1, n))
    return solve_basic_system(c, z, np.zeros(m + 1), np.zeros(n), 0.0), z, np.zeros(m + 1)


def test_basic_system_solves_forward_form(coarse):
    c, _, data = coarse
    st, f, _ = data[0]
    dt, dx = c.tgrid.dt, c.xgrid.dx
    phi = st.phi
    k = slice(0, -1)
    res = (phi[1:, 1:-1] - phi[:-1, 1:-1]) / dt \
        + (phi[k, 2:] - 2 * phi[k, 1:-1] + phi[k, :-2]) / dx**2 / c.qbar[:-1, None] - f[:-1, 1:-1]
    assert np.abs(res).max() <= 1e-9 * (1 + np.abs(f).max())


def test_zero_data_sides():
    c, table = _setup(21, 40)
    st, z, g = _zero_state(c)
    for rep in (carleman_sides_basic(st, z, g, table), carleman_sides_modified(st, z, g, table)):
        assert rep.lhs == 0 and rep.rhs == 0 and rep.ratio == 0


def test_components_nonnegative(coarse):
    _, table, data = coarse
    for st, f, g in data[:3]:
        rep = carleman_sides_basic(st, f, g, table)
        assert rep.lhs >= 0 and all(np.exp(v) >= 0 for v in rep.rhs_components)
        assert np.isfinite(rep.ratio) and rep.ratio > 0


def test_log_integral_matches_direct():
    rng = np.random.default_rng(1)
    v, lw = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    assert np.exp(log_integral(v, lw, 0.3)) == pytest.approx(0.3 * np.sum(v**2 * np.exp(lw)), rel=1e-13)


def test_sweep_bounded_and_refinement_stable():
    out = []
    for n, m in ((41, 200), (81, 800)):
        c, _ = _setup(n, m)
        data = random_basic_datasets(c, np.random.default_rng(5), 10)
        res = carleman_sweep(data, ETA, CarlemanParams(), c.xgrid, c.tgrid)
        assert len(res.rows) == 6 and np.isfinite(res.C0)
        assert all(r.ratio <= res.C0 for r in res.rows)
        out.append(res)
    assert 0.5 <= out[0].C0 / out[1].C0 <= 2.0
    # doubling lambda does not inflate the ratio
    for lo, hi in zip(out[1].rows[:3], out[1].rows[3:]):
        assert hi.ratio <= 2 * lo.ratio


def test_sweep_csv(coarse, tmp_path):
    c, _, data = coarse
    res = carleman_sweep(data[:2], ETA, CarlemanParams(), c.xgrid, c.tgrid, s_factors=(1,), lam_factors=(1,))
    res.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",")[:5] == ["s", "lambda", "lhs", "rhs", "ratio"] and len(lines) == 2


def test_inadmissible_parameters():
    with pytest.raises(ParameterError):
        _setup(21, 20, params=CarlemanParams(s=0.5))


@pytest.fixture(scope="module")
def stefan():
    xg, tg = SpaceGrid(0, 1, 21), TimeGrid(1.0, 200)
    ref = extend_reference(make_reference_trajectory(ReferenceParams(), xg, tg))
    c = stefan_adjoint_coefficients(ref)
    table = tabulate_weights(ETA, CarlemanParams(), ref.xgrid, tg)
    return ref, c, table


class TestTrajectory:
    def _data(self, c, seed):
        rng = np.random.default_rng(seed)
        X, Tm = np.meshgrid(c.xgrid.x, c.tgrid.t)
        b = rng.normal(size=3)
        g1 = (b[0] * np.sin(np.pi * X) + b[1] * (1 - X**2)) * (1 + Tm)
        g2 = b[2] * np.cos(2 * c.tgrid.t)
        n = c.xgrid.n
        return solve_adjoint(c, g1, g2, np.zeros(n), 0.0), g1, g2

    def test_zero_reference_reduces_to_basic(self, stefan):
        ref, c, table = stefan
        flat = CoefficientSet(c.xgrid, c.tgrid, 0 * c.a, 0 * c.a, 0 * c.a, 0 * c.a, c.qbar)
        ref0 = extend_reference(make_reference_trajectory(ReferenceParams(), SpaceGrid(0, 1, 21), c.tgrid))
        ref0.px1[:] = 0
        st, g1, g2 = self._data(flat, 3)
        basic_f = -g1 / c.qbar[:, None]
        st_b = solve_basic_system(flat, basic_f, g2, st.phi[-1], st.gamma[-1])
        np.testing.assert_allclose(st_b.phi, st.phi, atol=1e-12)
        traj = carleman_sides_trajectory(st, g1, g2, table, ref0)
        basic = carleman_sides_basic(st_b, basic_f, g2, table)
        assert traj.lhs_components["absorbed_f"] == pytest.approx(basic.rhs_components[1], rel=1e-12)
        for key, v in basic.lhs_components.items():
            assert traj.lhs_components[key] == pytest.approx(v, rel=1e-12)

    def test_ratio_finite_random(self, stefan):
        ref, c, table = stefan
        for seed in range(10):
            rep = carleman_sides_trajectory(*self._data(c, seed), table, ref)
            assert np.isfinite(rep.ratio) and rep.ratio > 0

    def test_gamma_terms_triangle(self, stefan):
        _, c, table = stefan
        st, *_ = self._data(c, 7)
        k = np.arange(1, c.tgrid.m)
        W = 3 * (np.log(table.xi_hat[k]) + np.log(table.s) + np.log(table.lam)) - 2 * table.s * table.alpha_hat[k]
        nphi = trapezoid(c.N[k] * st.phi[k], c.xgrid)
        b1 = log_integral(st.phi[k, -1], W, c.tgrid.dt)
        bound = np.logaddexp(log_integral(st.gamma[k], W, c.tgrid.dt), log_integral(nphi, W, c.tgrid.dt))
        assert b1 <= bound + np.log(2) + 1e-12


class TestModified:
    def test_late_integrand_matches_alpha_family(self, coarse):
        _, table, data = coarse
        st, *_ = data[1]
        tg = table.tgrid
        late = np.nonzero((tg.t >= tg.T / 2) & (tg.t < tg.T))[0]
        mod = modified_density_logs(st, table, late)
        alp = alpha_density_logs(st, table, late)
        for key in mod:
            np.testing.assert_allclose(mod[key], alp[key], rtol=1e-13)

    def test_constant_refinement_stable(self):
        ratios = []
        for n, m in ((41, 200), (81, 800)):
            c, table = _setup(n, m)
            data = random_basic_datasets(c, np.random.default_rng(9), 10)
            ratios.append(max(carleman_sides_modified(st, f, g, table).ratio for st, f, g in data))
        assert all(np.isfinite(ratios))
        assert 0.5 <= ratios[0] / ratios[1] <= 2.0


class TestDecomposition:
    def test_zero(self):
        c, table = _setup(21, 40)
        st, z, _ = _zero_state(c)
        rep = decomposition_identity(st, z, table, c.d)
        assert rep.lhs == rep.norm_pe == rep.norm_pk == rep.cross == 0

    def test_binomial_gap(self, coarse):
        c, table, data = coarse
        for st, f, _ in data:
            assert decomposition_identity(st, f, table, c.d).gap <= 1e-12

    def test_binomial_gap_arbitrary_field(self, coarse):
        c, table, data = coarse
        st, f, _ = data[0]
        st = replace(st, phi=np.random.default_rng(4).normal(size=st.phi.shape))
        assert decomposition_identity(st, f, table, c.d).gap <= 1e-12

    def test_ibp_and_conjugation_converge(self):
        ibp, conj = [], []
        for n, m in ((41, 200), (81, 800)):
            c, table = _setup(n, m)
            st, f, _ = random_basic_datasets(c, np.random.default_rng(2), 1)[0]
            rep = decomposition_identity(st, f, table, c.d)
            ibp.append(rep.ibp_gap)
            conj.append(rep.conjugation_residual)
        assert ibp[1] < ibp[0] < 0.05
        assert conj[1] < conj[0] / 2

    def test_alpha_closed_forms_vs_differences(self):
        xg, tg = SpaceGrid(-1, 1, 401), TimeGrid(1.0, 2000)
        table = tabulate_weights(ETA, CarlemanParams(), xg, tg)
        der = alpha_derivatives(table)
        k = slice(800, 1200)
        al = table.alpha
        ax = (al[k, 2:] - al[k, :-2]) / (2 * xg.dx)
        axx = (al[k, 2:] - 2 * al[k, 1:-1] + al[k, :-2]) / xg.dx**2
        at = (al[801:1201] - al[799:1199]) / (2 * tg.dt)
        att = (al[801:1201] - 2 * al[800:1200] + al[799:1199]) / tg.dt**2
        np.testing.assert_allclose(ax, der.ax[k, 1:-1], rtol=1e-3, atol=1e-3 * np.abs(der.ax[k]).max())
        np.testing.assert_allclose(at, der.at[k], atol=1e-4 * np.abs(der.alpha[k]).max())
        np.testing.assert_allclose(att, der.att[k], rtol=1e-3)
        # second derivative in x away from the eta kinks
        mask = np.abs(xg.x[1:-1] + 0.5) > 0.15
        np.testing.assert_allclose(axx[:, mask], der.axx[k, 1:-1][:, mask], rtol=2e-3,
                                   atol=2e-3 * np.abs(der.axx[k]).max())
