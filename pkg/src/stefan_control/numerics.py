"""Uniform grids, trapezoid quadrature, one-sided traces and bordered solves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionError, SingularityError


@dataclass(frozen=True)
class SpaceGrid:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise DimensionError(f"SpaceGrid needs n >= 3, got {self.n}")
        if not self.b > self.a:
            raise DimensionError(f"SpaceGrid needs b > a, got [{self.a}, {self.b}]")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n)

    @property
    def interior(self) -> np.ndarray:
        return self.x[1:-1]

    def index_of(self, value: float) -> int:
        """Index of the node equal to ``value`` (raises if it is not a node)."""
        k = (value - self.a) / self.dx
        i = int(round(k))
        if abs(k - i) > 1e-9 or not 0 <= i < self.n:
            raise DimensionError(f"{value} is not a node of {self}")
        return i


@dataclass(frozen=True)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self):
        if not self.T > 0:
            raise DimensionError(f"TimeGrid needs T > 0, got {self.T}")
        if self.m < 2:
            raise DimensionError(f"TimeGrid needs m >= 2, got {self.m}")

    @property
    def dt(self) -> float:
        return self.T / self.m

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.m + 1)


def trapezoid_weights(grid: SpaceGrid) -> np.ndarray:
    w = np.full(grid.n, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


def trapezoid(values, grid: SpaceGrid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n:
        raise DimensionError(f"expected {grid.n} values, got {values.shape[-1]}")
    return values @ trapezoid_weights(grid)


def time_trapezoid(values, tgrid: TimeGrid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != tgrid.m + 1:
        raise DimensionError(f"expected {tgrid.m + 1} time values, got {values.shape[0]}")
    w = np.full(tgrid.m + 1, tgrid.dt)
    w[0] = w[-1] = 0.5 * tgrid.dt
    return np.tensordot(w, values, axes=(0, 0))


# 3-point one-sided first-derivative stencils (second order).
RIGHT_STENCIL = np.array([1.0, -4.0, 3.0]) / 2.0
LEFT_STENCIL = np.array([-3.0, 4.0, -1.0]) / 2.0


def one_sided_trace_derivative(field, grid: SpaceGrid, side: Literal["left", "right"] = "right"):
    """Second-order one-sided derivative at an endpoint.

    Works along the last axis, so a (time, space) history gives a time series.
    """
    field = np.asarray(field, dtype=float)
    if grid.n < 3:
        raise DimensionError("one-sided trace needs at least 3 nodes")
    if field.shape[-1] != grid.n:
        raise DimensionError(f"expected {grid.n} values, got {field.shape[-1]}")
    if side == "right":
        return field[..., -3:] @ RIGHT_STENCIL / grid.dx
    if side == "left":
        return field[..., :3] @ LEFT_STENCIL / grid.dx
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def centered_derivative(field, grid: SpaceGrid) -> np.ndarray:
    """Centered first derivative, one-sided (second order) at both ends."""
    field = np.asarray(field, dtype=float)
    out = np.empty_like(field)
    out[..., 1:-1] = (field[..., 2:] - field[..., :-2]) / (2 * grid.dx)
    out[..., 0] = one_sided_trace_derivative(field, grid, "left")
    out[..., -1] = one_sided_trace_derivative(field, grid, "right")
    return out


def second_derivative(field, grid: SpaceGrid) -> np.ndarray:
    """Three-point second derivative on interior nodes (zeros at the ends)."""
    field = np.asarray(field, dtype=float)
    out = np.zeros_like(field)
    out[..., 1:-1] = (field[..., 2:] - 2 * field[..., 1:-1] + field[..., :-2]) / grid.dx**2
    return out


def interior_trace_row(grid: SpaceGrid) -> np.ndarray:
    """Row vector c with c @ z[1:-1] = z_x(b) when z vanishes at x = b."""
    c = np.zeros(grid.n - 2)
    c[-2] = RIGHT_STENCIL[0] / grid.dx
    c[-1] = RIGHT_STENCIL[1] / grid.dx
    return c


def laplacian_interior(grid: SpaceGrid) -> sp.csr_matrix:
    """Dirichlet 3-point Laplacian acting on interior nodes."""
    ni = grid.n - 2
    e = np.ones(ni) / grid.dx**2
    return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="csr")


def gradient_interior(grid: SpaceGrid) -> sp.csr_matrix:
    """Centered gradient acting on interior nodes with zero Dirichlet data."""
    ni = grid.n - 2
    e = np.ones(ni - 1) / (2 * grid.dx)
    return sp.diags([-e, e], [-1, 1], format="csr")


@dataclass
class BorderedTridiagonal:
    """Tridiagonal block plus one border row/column and a corner scalar.

    Represents ``[[T, col], [row, corner]]`` acting on ``[x, s]``.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    col: np.ndarray
    row: np.ndarray
    corner: float

    def __post_init__(self):
        n = len(self.diag)
        if len(self.sub) != n - 1 or len(self.sup) != n - 1:
            raise DimensionError("off-diagonals must have length n - 1")
        if len(self.col) != n or len(self.row) != n:
            raise DimensionError("border row/column must have length n")

    @property
    def size(self) -> int:
        return len(self.diag) + 1

    def to_dense(self) -> np.ndarray:
        n = len(self.diag)
        A = np.zeros((n + 1, n + 1))
        A[np.arange(n), np.arange(n)] = self.diag
        A[np.arange(1, n), np.arange(n - 1)] = self.sub
        A[np.arange(n - 1), np.arange(1, n)] = self.sup
        A[:n, n] = self.col
        A[n, :n] = self.row
        A[n, n] = self.corner
        return A

    def matvec(self, v: np.ndarray) -> np.ndarray:
        x, s = v[:-1], v[-1]
        out = np.empty(len(v))
        out[:-1] = self.diag * x + self.col * s
        out[1:-1] += self.sub * x[:-1]
        out[:-2] += self.sup * x[1:]
        out[-1] = self.row @ x + self.corner * s
        return out


def solve_bordered(system: BorderedTridiagonal, rhs, step: int | None = None) -> np.ndarray:
    """Solve a bordered tridiagonal system by a Schur complement on the border.

    The tridiagonal block is eliminated with a banded LU (two right-hand
    sides), then the border scalar follows from a 1x1 complement.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = len(system.diag)
    if rhs.shape[0] != n + 1:
        raise DimensionError(f"rhs has length {rhs.shape[0]}, expected {n + 1}")
    ab = np.zeros((3, n))
    ab[0, 1:] = system.sup
    ab[1] = system.diag
    ab[2, :-1] = system.sub
    where = "" if step is None else f" at time step {step}"
    try:
        y = sla.solve_banded((1, 1), ab, np.column_stack([rhs[:-1], system.col]),
                             check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularityError(f"zero pivot in tridiagonal block{where}", step=step) from exc
    schur = system.corner - system.row @ y[:, 1]
    scale = abs(system.corner) + np.abs(system.row) @ np.abs(y[:, 1])
    if not np.isfinite(schur) or abs(schur) <= 1e-14 * max(scale, 1e-300):
        raise SingularityError(f"singular border complement{where}", step=step)
    s = (rhs[-1] - system.row @ y[:, 0]) / schur
    out = np.empty(n + 1)
    out[:-1] = y[:, 0] - s * y[:, 1]
    out[-1] = s
    if not np.all(np.isfinite(out)):
        raise SingularityError(f"non-finite solution{where}", step=step)
    return out


def discrete_h1_norm(values, grid: SpaceGrid) -> float:
    """Discrete H^1 norm: trapezoid L2 of the values plus L2 of forward differences."""
    values = np.asarray(values, dtype=float)
    l2 = trapezoid(values**2, grid)
    grad = np.diff(values) / grid.dx
    return float(np.sqrt(l2 + grid.dx * np.sum(grad**2)))


def solve_tridiagonal(sub, diag, sup, rhs, step: int | None = None) -> np.ndarray:
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = sup
    ab[1] = diag
    ab[2, :-1] = sub
    try:
        return sla.solve_banded((1, 1), ab, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        where = "" if step is None else f" at time step {step}"
        raise SingularityError(f"zero pivot in tridiagonal solve{where}", step=step) from exc
