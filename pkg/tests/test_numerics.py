import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stefan_control.errors import DimensionError, SingularityError
from stefan_control.numerics import (
    BorderedTridiagonal,
    SpaceGrid,
    TimeGrid,
    one_sided_trace_derivative,
    solve_bordered,
    trapezoid,
)


def test_grid_invariants():
    g = SpaceGrid(-1.0, 1.0, 11)
    assert g.dx == pytest.approx(0.2)
    assert np.all(np.diff(g.x) > 0)
    with pytest.raises(DimensionError):
        SpaceGrid(0, 1, 2)
    with pytest.raises(DimensionError):
        TimeGrid(1.0, 1)
    assert TimeGrid(2.0, 4).dt == 0.5


class TestTrapezoid:
    def test_constant(self):
        g = SpaceGrid(-1, 1, 11)
        assert trapezoid(np.ones(11), g) == pytest.approx(2.0, abs=1e-14)

    def test_odd(self):
        g = SpaceGrid(-1, 1, 11)
        assert trapezoid(g.x, g) == pytest.approx(0.0, abs=1e-14)

    def test_quadratic_against_antiderivative(self):
        g = SpaceGrid(-1, 1, 101)
        exact = (1.0**3 - (-1.0) ** 3) / 3
        assert abs(trapezoid(g.x**2, g) - exact) <= 1e-3

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            trapezoid(np.ones(5), SpaceGrid(0, 1, 6))

    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(3, 60))
    def test_exact_on_affine(self, c0, c1, n):
        g = SpaceGrid(-0.3, 1.7, n)
        exact = c0 * 2.0 + c1 * (1.7**2 - 0.3**2) / 2
        assert trapezoid(c0 + c1 * g.x, g) == pytest.approx(exact, abs=1e-11)

    @given(st.floats(-3, 3), st.integers(0, 2**31))
    def test_linear(self, c, seed):
        rng = np.random.default_rng(seed)
        g = SpaceGrid(0, 1, 17)
        u, v = rng.normal(size=(2, 17))
        assert trapezoid(u + c * v, g) == pytest.approx(trapezoid(u, g) + c * trapezoid(v, g), abs=1e-12)


class TestTrace:
    def test_constant(self):
        g = SpaceGrid(0, 1, 9)
        assert one_sided_trace_derivative(np.full(9, 3.0), g, "right") == pytest.approx(0.0, abs=1e-12)

    def test_linear_exact(self):
        g = SpaceGrid(0, 1, 9)
        assert one_sided_trace_derivative(2 * g.x, g, "right") == pytest.approx(2.0, abs=1e-12)
        assert one_sided_trace_derivative(2 * g.x, g, "left") == pytest.approx(2.0, abs=1e-12)

    def test_quadratic_exact(self):
        g = SpaceGrid(0, 1, 7)
        assert one_sided_trace_derivative(g.x**2, g, "right") == pytest.approx(2.0, abs=1e-11)

    def test_sine(self):
        g = SpaceGrid(0, 1, 101)
        assert abs(one_sided_trace_derivative(np.sin(g.x), g, "right") - np.cos(1.0)) <= 1e-4

    def test_second_order(self):
        errs = []
        for n in (21, 41, 81, 161):
            g = SpaceGrid(0, 1, n)
            errs.append(abs(one_sided_trace_derivative(np.exp(np.sin(2 * g.x)), g) - 2 * np.cos(2) * np.exp(np.sin(2))))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all((ratios >= 3.5) & (ratios <= 4.5)), ratios

    def test_stencil_too_short(self):
        with pytest.raises(DimensionError):
            one_sided_trace_derivative(np.ones(4), SpaceGrid(0, 1, 3))


def _random_bordered(rng, n):
    sub, sup = rng.uniform(-1, 1, size=(2, n - 1))
    diag = 3.0 + rng.uniform(0, 1, n)
    col = rng.uniform(-1, 1, n) / n
    row = rng.uniform(-1, 1, n) / n
    return BorderedTridiagonal(sub, diag, sup, col, row, 2.0 + rng.uniform())


class TestBordered:
    def test_identity(self):
        n = 5
        sys_ = BorderedTridiagonal(np.zeros(n - 1), np.ones(n), np.zeros(n - 1), np.zeros(n), np.zeros(n), 1.0)
        rhs = np.zeros(n + 1)
        rhs[0] = 1
        np.testing.assert_array_equal(solve_bordered(sys_, rhs), rhs)

    def test_laplacian_quadratic(self):
        # -u'' = 2 on (0,1), u(0)=u(1)=0 -> u = x(1-x); border carries s = u(1/2)
        n = 49
        g = SpaceGrid(0, 1, n + 2)
        h = g.dx
        diag = np.full(n, 2 / h**2)
        off = np.full(n - 1, -1 / h**2)
        row = np.zeros(n)
        row[n // 2] = 1.0
        sys_ = BorderedTridiagonal(off, diag, off, np.zeros(n), row, -1.0)
        sol = solve_bordered(sys_, np.r_[np.full(n, 2.0), 0.0])
        x = g.interior
        np.testing.assert_allclose(sol[:-1], x * (1 - x), atol=1e-12)
        assert sol[-1] == pytest.approx(0.25, abs=1e-12)

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(5, 201))
            sys_ = _random_bordered(rng, n)
            rhs = rng.normal(size=n + 1)
            x = solve_bordered(sys_, rhs)
            ref = np.linalg.solve(sys_.to_dense(), rhs)
            assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)
            A = sys_.to_dense()
            res = np.abs(A @ x - rhs).max()
            assert res <= 1e-12 * np.abs(A).sum(axis=1).max() * np.abs(x).max()

    def test_singular_names_step(self):
        n = 4
        sys_ = BorderedTridiagonal(np.zeros(n - 1), np.ones(n), np.zeros(n - 1), np.ones(n), np.ones(n), float(n))
        with pytest.raises(SingularityError, match="step 7"):
            solve_bordered(sys_, np.ones(n + 1), step=7)
