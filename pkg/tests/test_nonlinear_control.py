import numpy as np
import pytest

from stefan_control.errors import HypothesisViolation, NonConvergenceError
from stefan_control.nonlinear_control import (
    ControlParams,
    check_positivity,
    control_to_trajectory,
    perturbed_initial_state,
    quadratic_deviation_study,
    verify_targets,
)
from stefan_control.numerics import SpaceGrid, TimeGrid
from stefan_control.stefan_forward import (
    ReferenceParams,
    discretize_reference,
    make_reference_trajectory,
    nonlinear_remainder,
    extend_reference,
)


@pytest.fixture(scope="module")
def ref():
    return discretize_reference(make_reference_trajectory(ReferenceParams(), SpaceGrid(0, 1, 21), TimeGrid(2.0, 200)))


@pytest.fixture(scope="module")
def runs(ref):
    return {d: control_to_trajectory(perturbed_initial_state(ref, d), ref) for d in (1e-2, 5e-3)}


def test_zero_perturbation_is_fixed_point(ref):
    res = control_to_trajectory(perturbed_initial_state(ref, 0.0), ref)
    assert res.iterations == 1 and res.converged
    assert not np.any(res.w) and not np.any(res.z)
    np.testing.assert_array_equal(res.v, ref.v)
    assert res.v.min() > 0
    rep = verify_targets(res)
    assert rep.ell_gap <= 1e-12 and rep.u_gap <= 1e-12


def test_small_perturbation_converges(runs):
    res = runs[1e-2]
    assert res.converged and res.iterations <= 20
    assert max(res.terminal_residuals) <= 1e-8
    rep = verify_targets(res)
    assert rep.ok(1e-6), rep
    pos = check_positivity(res)
    assert pos.nonneg and pos.min_v >= -1e-12


def test_correction_scaling(runs):
    # pass 0 is the linear step; the first remainder-driven pass scales like delta**2
    big, small = runs[1e-2].correction_norms, runs[5e-3].correction_norms
    assert small[0] / big[0] == pytest.approx(0.5, rel=0.1)
    assert small[1] <= 0.5 * big[1]


def test_remainder_quadratic_in_state(ref):
    ext = extend_reference(ref)
    xg, tg = ext.xgrid, ext.tgrid
    X, Tm = np.meshgrid(xg.x, tg.t)
    shape = np.sin(np.pi * (X + 1) / 2) * (1 + Tm)
    sizes, norms = [1e-1, 1e-2, 1e-3], []
    for e in sizes:
        f1 = nonlinear_remainder(e * shape, e * 0.3 * np.cos(tg.t), xg, tg, ext.beta)
        norms.append(np.abs(f1[1:]).max())
    slopes = np.log10(np.array(norms[:-1]) / np.array(norms[1:]))
    assert np.all(slopes >= 1.8), slopes


def test_deviation_study(ref):
    st = quadratic_deviation_study(ref)
    assert all(abs(s - 2) <= 0.2 for s in st.slopes), st


def test_large_perturbation_reported(ref):
    try:
        res = control_to_trajectory(perturbed_initial_state(ref, 0.2), ref)
    except (NonConvergenceError, HypothesisViolation):
        return
    assert isinstance(check_positivity(res).nonneg, bool)


def test_smallness_gate(ref):
    with pytest.raises(HypothesisViolation):
        control_to_trajectory(perturbed_initial_state(ref, 5e-2), ref, ControlParams(delta_max=1e-3))


def test_bundle(runs, tmp_path):
    runs[1e-2].write_bundle(tmp_path)
    assert (tmp_path / "boundary_control.csv").read_text().startswith("t,v,vbar")
    assert (tmp_path / "control_summary.json").exists()
