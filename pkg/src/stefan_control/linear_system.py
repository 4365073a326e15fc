"""Linear PDE-ODE system with a boundary trace coupling.

    qbar z_t - z_xx + a z_x + b z + R h + N z_x(1, t) = F   in (-1, 1) x (0, T)
    h_t + z_x(1, t) = G,   z(+-1, t) = 0

Implicit Euler in time.  At every step the interior nodal values and the
trace z_x(1, t) are solved together as a bordered tridiagonal system, since
N and R couple the trace to every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .numerics import (
    BorderedTridiagonal,
    SpaceGrid,
    TimeGrid,
    centered_derivative,
    interior_trace_row,
    one_sided_trace_derivative,
    solve_bordered,
)


@dataclass
class CoefficientSet:
    """Coefficient tabulations of shape ``(m + 1, n)`` (``qbar`` has shape ``(m + 1,)``)."""

    xgrid: SpaceGrid
    tgrid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    N: np.ndarray
    R: np.ndarray
    qbar: np.ndarray
    q_star: float = 0.0

    def __post_init__(self):
        shape = (self.tgrid.m + 1, self.xgrid.n)
        for name in ("a", "b", "N", "R"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DimensionError(f"coefficient {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"coefficient {name} is not finite")
            setattr(self, name, arr)
        self.qbar = np.asarray(self.qbar, dtype=float)
        if self.qbar.shape != (self.tgrid.m + 1,):
            raise DimensionError(f"qbar has shape {self.qbar.shape}")
        if np.any(self.qbar <= self.q_star):
            raise DimensionError("qbar must stay above q_star")

    @property
    def d(self) -> np.ndarray:
        return 1.0 / self.qbar

    @classmethod
    def zeros(cls, xgrid, tgrid, qbar=1.0):
        z = np.zeros((tgrid.m + 1, xgrid.n))
        return cls(xgrid, tgrid, z, z.copy(), z.copy(), z.copy(), np.full(tgrid.m + 1, float(qbar)))


@dataclass
class SourcePair:
    F: np.ndarray  # (m + 1, n), row k used at step k
    G: np.ndarray  # (m + 1,)

    @classmethod
    def zeros(cls, xgrid, tgrid):
        return cls(np.zeros((tgrid.m + 1, xgrid.n)), np.zeros(tgrid.m + 1))


@dataclass
class LinearHistory:
    xgrid: SpaceGrid
    tgrid: TimeGrid
    z: np.ndarray      # (m + 1, n), zero at both ends
    h: np.ndarray      # (m + 1,)
    trace: np.ndarray  # (m + 1,), solved trace unknown (index 0 from z0)
    sources: SourcePair | None = field(default=None, repr=False)


def step_system(xgrid: SpaceGrid, dt: float, q: float, a, b, N, R) -> BorderedTridiagonal:
    """Bordered matrix of one implicit Euler step (interior coefficient slices)."""
    dx = xgrid.dx
    diag = q / dt + 2 / dx**2 + b
    sub = -1 / dx**2 - a[1:] / (2 * dx)
    sup = -1 / dx**2 + a[:-1] / (2 * dx)
    return BorderedTridiagonal(sub, diag, sup, N - dt * R, interior_trace_row(xgrid), -1.0)


def linear_step(xgrid, dt, q, a, b, N, R, z_prev, h_prev, F, G, step=None):
    """Advance one step; all spatial arrays are interior slices. Returns (z, h, trace)."""
    system = step_system(xgrid, dt, q, a, b, N, R)
    rhs = np.empty(len(z_prev) + 1)
    rhs[:-1] = q / dt * z_prev + F - R * (h_prev + dt * G)
    rhs[-1] = 0.0
    sol = solve_bordered(system, rhs, step=step)
    tau = sol[-1]
    return sol[:-1], h_prev + dt * (G - tau), tau


def _check_initial(z0, xgrid):
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (xgrid.n,):
        raise DimensionError(f"z0 has shape {z0.shape}, expected ({xgrid.n},)")
    if abs(z0[0]) > 1e-12 or abs(z0[-1]) > 1e-12:
        raise DimensionError("z0 must vanish at both endpoints")
    return z0


def solve_linearized(coeffs: CoefficientSet, src: SourcePair, z0, h0: float) -> LinearHistory:
    xg, tg = coeffs.xgrid, coeffs.tgrid
    z0 = _check_initial(z0, xg)
    if src.F.shape != (tg.m + 1, xg.n) or src.G.shape != (tg.m + 1,):
        raise DimensionError("source tabulation does not match the grids")
    m, dt = tg.m, tg.dt
    z = np.zeros((m + 1, xg.n))
    h = np.zeros(m + 1)
    trace = np.zeros(m + 1)
    z[0], h[0] = z0, h0
    trace[0] = one_sided_trace_derivative(z0, xg)
    I = slice(1, -1)
    for k in range(1, m + 1):
        z[k, I], h[k], trace[k] = linear_step(
            xg, dt, coeffs.qbar[k], coeffs.a[k, I], coeffs.b[k, I], coeffs.N[k, I], coeffs.R[k, I],
            z[k - 1, I], h[k - 1], src.F[k, I], src.G[k], step=k)
    return LinearHistory(xg, tg, z, h, trace, src)


def stefan_coefficients(reference, beta: float | None = None) -> CoefficientSet:
    """Coefficients of the Stefan linearization around ``reference``.

    a = (x/beta) pbar_x(1, t),  N = (x/beta) pbar_x,  R = (2/beta) pbar_t,  b = 0.
    """
    beta = reference.beta if beta is None else beta
    x = reference.xgrid.x
    a = np.outer(reference.px1, x) / beta
    N = x[None, :] * reference.px / beta
    R = 2.0 * reference.pt / beta
    return CoefficientSet(reference.xgrid, reference.tgrid, a, np.zeros_like(a), N, R,
                          reference.q.copy(), reference.q_star)


@dataclass
class EnergyReport:
    z_norm: float        # discrete H^{1,2}_0(Q)
    h_norm: float        # discrete H^1(0, T)
    data_norm: float
    ratio: float
    linf_h1: float       # max_t ||z(t)||_{H^1_0} + |h(t)|


def discrete_energy_report(history: LinearHistory) -> EnergyReport:
    xg, tg = history.xgrid, history.tgrid
    dx, dt = xg.dx, tg.dt
    z, h = history.z, history.h
    zt = np.diff(z, axis=0) / dt
    zx = np.diff(z, axis=1) / dx
    zxx = (z[:, 2:] - 2 * z[:, 1:-1] + z[:, :-2]) / dx**2
    zn2 = dt * dx * (np.sum(z[1:] ** 2) + np.sum(zx[1:] ** 2) + np.sum(zxx[1:] ** 2) + np.sum(zt**2))
    hn2 = dt * (np.sum(h[1:] ** 2) + np.sum((np.diff(h) / dt) ** 2))
    src = history.sources
    F2 = dt * dx * np.sum(src.F[1:] ** 2) if src is not None else 0.0
    G2 = dt * np.sum(src.G[1:] ** 2) if src is not None else 0.0
    z0 = z[0]
    z0n2 = dx * (np.sum(z0**2) + np.sum((np.diff(z0) / dx) ** 2))
    data = np.sqrt(F2 + G2 + z0n2 + h[0] ** 2)
    sol = np.sqrt(zn2 + hn2)
    h1 = np.sqrt(dx * np.sum(z**2, axis=1) + dx * np.sum(zx**2, axis=1)) + np.abs(h)
    return EnergyReport(float(np.sqrt(zn2)), float(np.sqrt(hn2)), float(data),
                        float(sol / data) if data > 0 else 0.0, float(h1.max()))


def galerkin_linearized(coeffs: CoefficientSet, src: SourcePair, z0, h0, modes: int = 16,
                        quad_nodes: int = 801) -> LinearHistory:
    """Faedo-Galerkin solve on the first ``modes`` Dirichlet sine modes of (-1, 1).

    Independent cross-check of :func:`solve_linearized`; coefficients are
    interpolated onto a fine quadrature grid.  Implicit Euler in time.
    """
    xg, tg = coeffs.xgrid, coeffs.tgrid
    xq = np.linspace(-1, 1, quad_nodes)
    wq = np.full(quad_nodes, xq[1] - xq[0])
    wq[0] = wq[-1] = 0.5 * wq[1]
    j = np.arange(1, modes + 1)
    kj = j * np.pi / 2
    phi = np.sin(kj[:, None] * (xq[None, :] + 1))           # (modes, q)
    dphi = kj[:, None] * np.cos(kj[:, None] * (xq[None, :] + 1))
    dphi1 = kj * np.cos(2 * kj)                                # trace at x = 1
    mass = (phi * wq) @ phi.T
    stiff = (dphi * wq) @ dphi.T

    def interp(field_row):
        return np.interp(xq, xg.x, field_row)

    c = np.linalg.solve(mass, (phi * wq) @ interp(z0))
    h = float(h0)
    dt = tg.dt
    zs = np.zeros((tg.m + 1, xg.n))
    hs = np.zeros(tg.m + 1)
    tr = np.zeros(tg.m + 1)
    basis_on_grid = np.sin(kj[:, None] * (xg.x[None, :] + 1))
    zs[0], hs[0], tr[0] = c @ basis_on_grid, h, c @ dphi1
    for k in range(1, tg.m + 1):
        a, b, N, R = (interp(v[k]) for v in (coeffs.a, coeffs.b, coeffs.N, coeffs.R))
        F = interp(src.F[k])
        q = coeffs.qbar[k]
        adv = (phi * wq * a) @ dphi.T + (phi * wq * b) @ phi.T
        Nv = (phi * wq) @ N
        Rv = (phi * wq) @ R
        Fv = (phi * wq) @ F
        # unknowns: c (modes), h
        M = np.zeros((modes + 1, modes + 1))
        M[:modes, :modes] = q / dt * mass + stiff + adv + np.outer(Nv, dphi1)
        M[:modes, modes] = Rv
        M[modes, :modes] = dt * dphi1
        M[modes, modes] = 1.0
        rhs = np.r_[q / dt * mass @ c + Fv, h + dt * src.G[k]]
        sol = np.linalg.solve(M, rhs)
        c, h = sol[:modes], sol[modes]
        zs[k], hs[k], tr[k] = c @ basis_on_grid, h, c @ dphi1
    return LinearHistory(xg, tg, zs, hs, tr, src)


def weak_form_mass_check(history: LinearHistory) -> float:
    """Residual of the trace unknown against the one-sided stencil on the solved field."""
    return float(np.max(np.abs(history.trace[1:] - one_sided_trace_derivative(history.z[1:], history.xgrid))))


__all__ = [
    "CoefficientSet", "SourcePair", "LinearHistory", "EnergyReport",
    "solve_linearized", "stefan_coefficients", "discrete_energy_report",
    "galerkin_linearized", "linear_step", "step_system", "centered_derivative",
]
