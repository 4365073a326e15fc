"""Backward solvers for the adjoint system with a nonlocal boundary condition.

Continuous-mode system, integrated backward from t = T:

    nondivergence:  -qbar phi_t - phi_xx - a phi_x - b phi = f
    divergence:     -(qbar phi)_t - phi_xx - (a phi)_x + b phi = f
    phi(-1, t) = 0,   phi(1, t) = gamma(t) + (N, phi)_2
    gamma'(t) = (R, phi)_2 + g

The divergence form is the formal adjoint of the linear forward operator
with the same (a, b, N, R).  Inner products use the trapezoid rule.

``solve_discrete_adjoint`` instead transposes the forward stepping matrices
exactly, so the discrete pairing identity holds to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import CompatibilityError, DimensionError, NonConvergenceError
from .linear_system import CoefficientSet, SourcePair, solve_linearized
from .numerics import (
    BorderedTridiagonal,
    interior_trace_row,
    solve_bordered,
    solve_tridiagonal,
    trapezoid,
    trapezoid_weights,
)

Form = Literal["nondivergence", "divergence"]


@dataclass
class AdjointState:
    """``phi[j]`` is the full nodal field at t_j (boundary nodes included)."""

    phi: np.ndarray
    gamma: np.ndarray
    mode: str = "continuous"
    iterations: int = 1
    contraction: float = 0.0

    def boundary_residual(self, coeffs: CoefficientSet, compat: float = 1.0) -> float:
        xg = coeffs.xgrid
        if self.mode == "matched":
            inner = xg.dx * np.sum(coeffs.N[:, 1:-1] * self.phi[:, 1:-1], axis=1)
            return float(np.abs(self.phi[1:, -1] - self.gamma[1:] - inner[1:]).max())
        inner = trapezoid(coeffs.N * self.phi, xg)
        res = self.phi[:, -1] - self.gamma - inner
        res[-1] = self.phi[-1, -1] - compat * self.gamma[-1] - inner[-1]
        return float(max(np.abs(res).max(), np.abs(self.phi[:, 0]).max()))


def check_compatibility(coeffs: CoefficientSet, phi_T, gamma_T: float, compat: float = 1.0, tol: float = 1e-10):
    phi_T = np.asarray(phi_T, dtype=float)
    if phi_T.shape != (coeffs.xgrid.n,):
        raise DimensionError("phi_T does not match the space grid")
    if abs(phi_T[0]) > tol:
        raise CompatibilityError(f"phi_T(-1) = {phi_T[0]:.3g} must vanish")
    mismatch = phi_T[-1] - compat * gamma_T - trapezoid(coeffs.N[-1] * phi_T, coeffs.xgrid)
    if abs(mismatch) > tol:
        raise CompatibilityError(f"terminal boundary identity violated by {mismatch:.3g}")
    return phi_T


def compatible_terminal(coeffs: CoefficientSet, phi_T_interior, gamma_T: float, compat: float = 1.0):
    """Complete interior terminal values with the boundary value fixed by the identity."""
    xg = coeffs.xgrid
    phi = np.zeros(xg.n)
    phi[1:-1] = phi_T_interior
    w = trapezoid_weights(xg)
    Nm = coeffs.N[-1]
    phi[-1] = (compat * gamma_T + np.sum(w[1:-1] * Nm[1:-1] * phi[1:-1])) / (1 - w[-1] * Nm[-1])
    return phi


def _step_matrix(coeffs, j, form, dt):
    """Tridiagonal part for backward step j plus the coupling to phi_b."""
    xg = coeffs.xgrid
    dx = xg.dx
    q = coeffs.qbar[j]
    a = coeffs.a[j]
    b = coeffs.b[j, 1:-1]
    if form == "nondivergence":
        ai = a[1:-1]
        sub = -1 / dx**2 + ai[1:] / (2 * dx)
        sup = -1 / dx**2 - ai[:-1] / (2 * dx)
        diag = q / dt + 2 / dx**2 - b
        to_b = -1 / dx**2 - ai[-1] / (2 * dx)
    elif form == "divergence":
        sub = -1 / dx**2 + a[1:-2] / (2 * dx)
        sup = -1 / dx**2 - a[2:-1] / (2 * dx)
        diag = q / dt + 2 / dx**2 + b
        to_b = -1 / dx**2 - a[-1] / (2 * dx)
    else:
        raise ValueError(f"unknown form {form!r}")
    return sub, diag, sup, to_b


def _prev_mass(coeffs, j, form, dt):
    return (coeffs.qbar[j] if form == "nondivergence" else coeffs.qbar[j + 1]) / dt


def solve_adjoint(coeffs: CoefficientSet, f, g, phi_T, gamma_T: float, form: Form = "nondivergence",
                  method: Literal["direct", "picard"] = "direct", compat: float = 1.0,
                  tol: float = 1e-11, max_iter: int = 25) -> AdjointState:
    """Backward implicit Euler; ``f`` row j and ``g[j]`` act at step j -> j from j + 1."""
    xg, tg = coeffs.xgrid, coeffs.tgrid
    m, dt, dx = tg.m, tg.dt, xg.dx
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (m + 1, xg.n) or g.shape != (m + 1,):
        raise DimensionError("adjoint sources do not match the grids")
    phi_T = check_compatibility(coeffs, phi_T, gamma_T, compat)
    if method == "picard":
        return _solve_adjoint_picard(coeffs, f, g, phi_T, gamma_T, form, tol, max_iter)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    w = trapezoid_weights(xg)
    phi = np.zeros((m + 1, xg.n))
    gam = np.zeros(m + 1)
    phi[m], gam[m] = phi_T, gamma_T
    for j in range(m - 1, -1, -1):
        sub, diag, sup, to_b = _step_matrix(coeffs, j, form, dt)
        col = np.zeros(xg.n - 2)
        col[-1] = to_b
        K = coeffs.N[j] - dt * coeffs.R[j]
        row = -w[1:-1] * K[1:-1]
        corner = 1 - w[-1] * K[-1]
        rhs = np.empty(xg.n - 1)
        rhs[:-1] = _prev_mass(coeffs, j, form, dt) * phi[j + 1, 1:-1] + f[j, 1:-1]
        rhs[-1] = gam[j + 1] - dt * g[j]
        sol = solve_bordered(BorderedTridiagonal(sub, diag, sup, col, row, corner), rhs, step=j)
        phi[j, 1:-1], phi[j, -1] = sol[:-1], sol[-1]
        gam[j] = gam[j + 1] - dt * (trapezoid(coeffs.R[j] * phi[j], xg) + g[j])
    return AdjointState(phi, gam, "continuous")


def _solve_adjoint_picard(coeffs, f, g, phi_T, gamma_T, form, tol, max_iter):
    """Global fixed point on the boundary series phi(1, .)."""
    xg, tg = coeffs.xgrid, coeffs.tgrid
    m, dt = tg.m, tg.dt
    B = np.full(m + 1, phi_T[-1])
    prev_upd, rates = None, []
    for it in range(1, max_iter + 1):
        phi = np.zeros((m + 1, xg.n))
        gam = np.zeros(m + 1)
        phi[m], gam[m] = phi_T, gamma_T
        for j in range(m - 1, -1, -1):
            sub, diag, sup, to_b = _step_matrix(coeffs, j, form, dt)
            rhs = _prev_mass(coeffs, j, form, dt) * phi[j + 1, 1:-1] + f[j, 1:-1]
            rhs[-1] -= to_b * B[j]
            phi[j, 1:-1] = solve_tridiagonal(sub, diag, sup, rhs, step=j)
            phi[j, -1] = B[j]
            gam[j] = gam[j + 1] - dt * (trapezoid(coeffs.R[j] * phi[j], xg) + g[j])
        B_new = gam + trapezoid(coeffs.N * phi, xg)
        B_new[m] = phi_T[-1]
        upd = np.abs(B_new - B).max() / max(np.abs(B_new).max(), 1e-300)
        if prev_upd:
            rates.append(upd / prev_upd)
        prev_upd = upd
        B = B_new
        if upd <= tol:
            # one more sweep so phi carries the converged boundary data
            phi[:-1, -1] = B[:-1]
            return AdjointState(phi, gam, "continuous", it, max(rates) if rates else 0.0)
    est = max(rates) if rates else float("nan")
    raise NonConvergenceError(
        f"boundary Picard did not converge in {max_iter} iterations (update {upd:.3g}, contraction ~{est:.3g})",
        contraction=est)


def solve_discrete_adjoint(coeffs: CoefficientSet, f, g, phi_T=None, gamma_T: float = 0.0) -> AdjointState:
    """Exact transpose of :func:`solve_linearized`.

    Row k of the result (k = 1..m) holds the multiplier of forward step k;
    row 0 repeats row 1, which is the value paired with the initial data.
    The boundary node stores phi_b = gamma + dx * N . phi (rectangle rule,
    as produced by the transpose of the trace stencil).
    """
    xg, tg = coeffs.xgrid, coeffs.tgrid
    m, dt, dx = tg.m, tg.dt, xg.dx
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    ni = xg.n - 2
    c = interior_trace_row(xg)
    phi = np.zeros((m + 1, xg.n))
    gam = np.zeros(m + 1)
    nxt_phi = np.zeros(ni) if phi_T is None else np.asarray(phi_T, dtype=float)[1:-1]
    nxt_q = coeffs.qbar[m]
    nxt_gam = gamma_T
    I = slice(1, -1)
    for k in range(m, 0, -1):
        q = coeffs.qbar[k]
        a, b = coeffs.a[k, I], coeffs.b[k, I]
        # transpose of q/dt I - D2 + diag(a) D1 + diag(b): sub/sup swap roles
        sub = -1 / dx**2 + a[:-1] / (2 * dx)
        sup = -1 / dx**2 - a[1:] / (2 * dx)
        diag = q / dt + 2 / dx**2 + b
        col = c / dx
        row = -dx * (coeffs.N[k, I] - dt * coeffs.R[k, I])
        rhs = np.empty(ni + 1)
        rhs[:-1] = f[k, I] + nxt_q * nxt_phi / dt
        rhs[-1] = nxt_gam + dt * g[k]
        sol = solve_bordered(BorderedTridiagonal(sub, diag, sup, col, row, 1.0), rhs, step=k)
        phi[k, I], phi[k, -1] = sol[:-1], sol[-1]
        gam[k] = nxt_gam + dt * g[k] - dt * dx * coeffs.R[k, I] @ sol[:-1]
        nxt_phi, nxt_q, nxt_gam = sol[:-1], q, gam[k]
    phi[0], gam[0] = phi[1], gam[1]
    return AdjointState(phi, gam, "matched")


def stefan_adjoint_coefficients(reference, beta: float | None = None) -> CoefficientSet:
    """Nondivergence-form coefficients of the Stefan adjoint.

    a = (x/beta) pbar_x(1), b = -(1/beta) pbar_x(1), N = (x/beta) pbar_x,
    R = (2/beta) pbar_t; ``d`` of the result is 1/qbar.
    """
    beta = reference.beta if beta is None else beta
    x = reference.xgrid.x
    a = np.outer(reference.px1, x) / beta
    b = -np.outer(reference.px1, np.ones_like(x)) / beta
    N = x[None, :] * reference.px / beta
    R = 2.0 * reference.pt / beta
    return CoefficientSet(reference.xgrid, reference.tgrid, a, b, N, R, reference.q.copy(), reference.q_star)


@dataclass
class DualityReport:
    lhs: float
    rhs: float
    gap: float
    mode: str


def _relative_gap(lhs, rhs):
    scale = max(abs(lhs), abs(rhs))
    return 0.0 if scale == 0 else abs(lhs - rhs) / scale


def transposition_check(coeffs: CoefficientSet, f, g, F, G, z0, h0: float,
                        mode: Literal["matched", "continuous"] = "matched") -> DualityReport:
    """Compare sum z f + h g against the adjoint-side functional.

    The adjoint memory equation is solved with source -g, which is the sign
    that makes the pairing identity close.
    """
    xg, tg = coeffs.xgrid, coeffs.tgrid
    dt, dx = tg.dt, xg.dx
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    hist = solve_linearized(coeffs, SourcePair(np.asarray(F, float), np.asarray(G, float)), z0, h0)
    if mode == "matched":
        adj = solve_discrete_adjoint(coeffs, f, g)
        I = slice(1, -1)
        lhs = dt * (dx * np.sum(hist.z[1:, I] * f[1:, I]) + hist.h[1:] @ g[1:])
        rhs = (dt * (dx * np.sum(F[1:, I] * adj.phi[1:, I]) + np.asarray(G)[1:] @ adj.gamma[1:])
               + dx * coeffs.qbar[1] * (z0[I] @ adj.phi[1, I]) + h0 * adj.gamma[1])
    elif mode == "continuous":
        adj = solve_adjoint(coeffs, f, -g, np.zeros(xg.n), 0.0, form="divergence")
        lhs = dt * (np.sum(trapezoid(hist.z[1:] * f[1:], xg)) + hist.h[1:] @ g[1:])
        rhs = (dt * (np.sum(trapezoid(np.asarray(F)[1:] * adj.phi[1:], xg)) + np.asarray(G)[1:] @ adj.gamma[1:])
               + coeffs.qbar[0] * trapezoid(z0 * adj.phi[0], xg) + h0 * adj.gamma[0])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return DualityReport(float(lhs), float(rhs), _relative_gap(lhs, rhs), mode)
