"""Maps between the physical frame, the fixed cylinder and the perturbation frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError, DimensionError, GeometryError
from .numerics import SpaceGrid, discrete_h1_norm


@dataclass
class FrontState:
    u: np.ndarray
    ell: float
    beta: float = 1.0
    ell_star: float = 0.1

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.beta <= 0:
            raise GeometryError("beta must be positive")
        if not self.ell > self.ell_star:
            raise AdmissibilityError(f"ell = {self.ell} <= ell_star = {self.ell_star}")
        if abs(self.u[-1]) > 1e-12:
            raise GeometryError("u must vanish at the front")

    @property
    def grid(self) -> SpaceGrid:
        return SpaceGrid(0.0, self.ell, len(self.u))


@dataclass
class CylinderState:
    p: np.ndarray
    q: float
    q_star: float = 0.01

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if not self.q > self.q_star:
            raise AdmissibilityError(f"q = {self.q} <= q_star = {self.q_star}")


@dataclass
class PerturbationState:
    z: np.ndarray
    h: float


def lagrange_resample(x_src: np.ndarray, values: np.ndarray, x_new: np.ndarray) -> np.ndarray:
    """Local 4-point Lagrange interpolation on a uniform source grid (last axis)."""
    x_src = np.asarray(x_src, dtype=float)
    values = np.asarray(values, dtype=float)
    n = len(x_src)
    if n < 4:
        raise DimensionError("cubic resampling needs at least 4 source nodes")
    dx = (x_src[-1] - x_src[0]) / (n - 1)
    s = (np.asarray(x_new, dtype=float) - x_src[0]) / dx
    # snap targets sitting on source nodes so coincident grids copy exactly
    s = np.where(np.abs(s - np.round(s)) < 1e-10, np.round(s), s)
    if np.any(s < -1e-9) or np.any(s > n - 1 + 1e-9):
        raise GeometryError("resampling target leaves the source interval")
    i0 = np.clip(np.floor(s).astype(int) - 1, 0, n - 4)
    r = s - i0
    out = 0.0
    for j in range(4):
        basis = np.ones_like(r)
        for k in range(4):
            if k != j:
                basis = basis * (r - k) / (j - k)
        out = out + basis * values[..., i0 + j]
    return out


def physical_to_cylinder(state: FrontState, target_grid: SpaceGrid, q_star: float | None = None) -> CylinderState:
    if abs(target_grid.a) > 1e-14 or abs(target_grid.b - 1.0) > 1e-14:
        raise GeometryError("cylinder grid must be the unit interval")
    p = lagrange_resample(state.grid.x, state.u, target_grid.x * state.ell)
    p[-1] = 0.0
    q_star = state.ell_star**2 if q_star is None else q_star
    return CylinderState(p, state.ell**2, q_star)


def cylinder_to_physical(state: CylinderState, target_grid: SpaceGrid | int, beta: float = 1.0) -> FrontState:
    """``target_grid`` is either a grid on (0, sqrt(q)) or a node count."""
    ell = float(np.sqrt(state.q))
    if isinstance(target_grid, int):
        target_grid = SpaceGrid(0.0, ell, target_grid)
    elif abs(target_grid.b - ell) > 1e-12 * max(1.0, ell) or target_grid.a != 0.0:
        raise GeometryError(f"physical grid must cover (0, {ell}), got ({target_grid.a}, {target_grid.b})")
    ysrc = np.linspace(0.0, 1.0, len(state.p))
    u = lagrange_resample(ysrc, state.p, target_grid.x / ell)
    u[-1] = 0.0
    return FrontState(u, ell, beta, float(np.sqrt(state.q_star)))


def to_perturbation(state: CylinderState, reference, t_index: int) -> PerturbationState:
    pbar = reference.p[t_index]
    if state.p.shape != pbar.shape:
        raise DimensionError(f"state has {state.p.shape[0]} nodes, reference has {pbar.shape[0]}")
    return PerturbationState(state.p - pbar, reference.beta * (state.q - reference.q[t_index]) / 2)


def from_perturbation(pert: PerturbationState, reference, t_index: int) -> CylinderState:
    pbar = reference.p[t_index]
    if np.shape(pert.z) != pbar.shape:
        raise DimensionError("perturbation and reference grids differ")
    q = 2 * pert.h / reference.beta + reference.q[t_index]
    if not q > reference.q_star:
        raise AdmissibilityError(f"q = {q} <= q_star: perturbation too large", step=t_index)
    return CylinderState(pert.z + pbar, q, reference.q_star)


def initial_distance(u0: FrontState, ubar0: FrontState, n: int = 201) -> float:
    """|l0 - lbar0| + discrete H^1(0,1) norm of l0 u0(. l0) - lbar0 ubar0(. lbar0)."""
    g = SpaceGrid(0.0, 1.0, n)
    a = u0.ell * physical_to_cylinder(u0, g).p
    b = ubar0.ell * physical_to_cylinder(ubar0, g).p
    return abs(u0.ell - ubar0.ell) + discrete_h1_norm(a - b, g)
