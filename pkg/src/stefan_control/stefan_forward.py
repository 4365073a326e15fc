"""Nonlinear forward solvers on the fixed cylinder.

Cylinder system on (a, 1), a in {0, -1}:

    q p_t - p_yy + (y/beta) p_y(1, t) p_y = S,   beta q_t + 2 p_y(1, t) = S_q
    p(a, t) = v(t),  p(1, t) = 0

Every step is implicit Euler in both p and q.  The nonlinear coefficients
(q and the trace) are frozen and Picard-refined until the step update
stalls, so the converged iterate solves the fully implicit equations.  That
makes the perturbation scheme below an exact discrete difference of this
one whenever the reference is itself a discrete solution on the same grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy.optimize import bisect
from scipy.special import erf

from .errors import (
    AdmissibilityError,
    CompatibilityError,
    DimensionError,
    HypothesisViolation,
    NonConvergenceError,
)
from .linear_system import linear_step
from .numerics import (
    SpaceGrid,
    TimeGrid,
    centered_derivative,
    one_sided_trace_derivative,
    solve_tridiagonal,
)

PICARD_TOL = 1e-12
PICARD_FAIL = 1e-10
PICARD_MAX = 10


@dataclass
class ReferenceTrajectory:
    xgrid: SpaceGrid
    tgrid: TimeGrid
    p: np.ndarray      # (m + 1, n)
    q: np.ndarray      # (m + 1,)
    v: np.ndarray      # (m + 1,)
    px1: np.ndarray    # trace p_x(1, t)
    pt: np.ndarray     # (m + 1, n)
    beta: float
    q_star: float
    kind: str = "neumann"
    px: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.px is None:
            self.px = centered_derivative(self.p, self.xgrid)
        if np.any(self.q <= self.q_star):
            raise HypothesisViolation("reference q must stay above q_star")

    @property
    def ell(self) -> np.ndarray:
        return np.sqrt(self.q)

    def restrict(self, a: float = 0.0) -> "ReferenceTrajectory":
        """Restriction to the nodes with x >= a (same spacing)."""
        i0 = self.xgrid.index_of(a)
        xg = SpaceGrid(a, self.xgrid.b, self.xgrid.n - i0)
        return ReferenceTrajectory(xg, self.tgrid, self.p[:, i0:], self.q, self.p[:, i0].copy(),
                                   self.px1, self.pt[:, i0:], self.beta, self.q_star, self.kind,
                                   self.px[:, i0:])


def neumann_k(V: float, beta: float) -> float:
    """Root of sqrt(pi) k e^{k^2} erf(k) = V/beta by bisection."""
    if V <= 0 or beta <= 0:
        raise HypothesisViolation(f"need V > 0 and beta > 0, got V={V}, beta={beta}")
    target = V / beta
    g = lambda k: math.sqrt(math.pi) * k * math.exp(k * k) * math.erf(k) - target
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
    return bisect(g, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class NeumannSolution:
    V: float
    beta: float
    t0: float

    @property
    def k(self) -> float:
        return neumann_k(self.V, self.beta)

    def ell(self, t):
        return 2 * self.k * np.sqrt(np.asarray(t) + self.t0)

    def q(self, t):
        return 4 * self.k**2 * (np.asarray(t) + self.t0)

    def p(self, y):
        """Cylinder profile; independent of t."""
        k = self.k
        return self.V * (1 - erf(k * np.asarray(y)) / math.erf(k))

    def py(self, y):
        k = self.k
        return -self.V * 2 * k / math.sqrt(math.pi) * np.exp(-(k * np.asarray(y)) ** 2) / math.erf(k)

    def u(self, x, t):
        return self.V * (1 - erf(np.asarray(x) / (2 * np.sqrt(t + self.t0))) / math.erf(self.k))


def _trace_fixed_point(solve, tau0: float, step: int):
    """Fixed point in the frozen trace, accelerated by secant updates.

    ``solve(tau)`` returns (state vector, trace of that state).  Stops when
    the state update is below PICARD_TOL relative; raises when it is still
    above PICARD_FAIL after PICARD_MAX corrections.
    """
    x0 = tau0
    s0, t0 = solve(x0)
    g0 = t0 - x0
    x1, prev = t0, s0
    upd = np.inf
    for it in range(1, PICARD_MAX + 1):
        s1, t1 = solve(x1)
        g1 = t1 - x1
        upd = np.abs(s1 - prev).max() / max(np.abs(s1).max(), 1e-300)
        if upd <= PICARD_TOL or g1 == 0.0:
            return s1, t1, it
        x0, g0, x1 = x1, g1, (x1 - g1 * (x1 - x0) / (g1 - g0)) if g1 != g0 else t1
        prev = s1
    if upd > PICARD_FAIL:
        raise NonConvergenceError(
            f"inner Picard update {upd:.3g} after {PICARD_MAX} corrections at time step {step}", step=step)
    return s1, t1, PICARD_MAX


@dataclass
class CylinderHistory:
    xgrid: SpaceGrid
    tgrid: TimeGrid
    p: np.ndarray
    q: np.ndarray
    trace: np.ndarray
    v: np.ndarray
    picard_max: int = 0


def _as_series(v, tgrid):
    if callable(v):
        return np.asarray(v(tgrid.t), dtype=float)
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        return np.full(tgrid.m + 1, float(arr))
    if arr.shape != (tgrid.m + 1,):
        raise DimensionError(f"boundary trace has shape {arr.shape}, expected ({tgrid.m + 1},)")
    return arr.copy()


def solve_cylinder_stefan(p0, q0: float, v, xgrid: SpaceGrid, tgrid: TimeGrid, beta: float,
                          q_star: float = 0.01, source=None, q_source=None) -> CylinderHistory:
    """March the cylinder Stefan system; ``v`` may be a scalar, array or callable of t."""
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (xgrid.n,):
        raise DimensionError(f"p0 has shape {p0.shape}, expected ({xgrid.n},)")
    if abs(p0[-1]) > 1e-12:
        raise CompatibilityError("p0 must vanish at y = 1")
    if q0 <= q_star:
        raise AdmissibilityError(f"q0 = {q0} <= q_star = {q_star}", step=0)
    v = _as_series(v, tgrid)
    if abs(p0[0] - v[0]) > 1e-12:
        raise CompatibilityError(f"p0 at the left end ({p0[0]}) differs from v(0) ({v[0]})")
    v[0] = p0[0]
    m, dt, dx = tgrid.m, tgrid.dt, xgrid.dx
    y = xgrid.interior
    S = np.zeros((m + 1, xgrid.n)) if source is None else np.asarray(source, dtype=float)
    Sq = np.zeros(m + 1) if q_source is None else np.asarray(q_source, dtype=float)

    p = np.zeros((m + 1, xgrid.n))
    q = np.zeros(m + 1)
    tr = np.zeros(m + 1)
    p[0], q[0] = p0, q0
    tr[0] = one_sided_trace_derivative(p0, xgrid)
    picard_max = 0
    for k in range(1, m + 1):
        def solve(tau, k=k):
            qk = q[k - 1] + dt * (Sq[k] - 2 * tau) / beta
            if qk <= q_star:
                raise AdmissibilityError(f"front collapse: q = {qk:.6g} <= q_star at time step {k}", step=k)
            adv = y * tau / beta
            sub = -1 / dx**2 - adv[1:] / (2 * dx)
            sup = -1 / dx**2 + adv[:-1] / (2 * dx)
            diag = np.full(len(y), qk / dt + 2 / dx**2)
            rhs = qk / dt * p[k - 1, 1:-1] + S[k, 1:-1]
            rhs[0] += (1 / dx**2 + adv[0] / (2 * dx)) * v[k]
            new = np.empty(xgrid.n)
            new[0], new[-1] = v[k], 0.0
            new[1:-1] = solve_tridiagonal(sub, diag, sup, rhs, step=k)
            return new, one_sided_trace_derivative(new, xgrid)

        p[k], tr[k], it = _trace_fixed_point(solve, tr[k - 1], k)
        q[k] = q[k - 1] + dt * (Sq[k] - 2 * tr[k]) / beta
        if q[k] <= q_star:
            raise AdmissibilityError(f"front collapse: q = {q[k]:.6g} <= q_star at time step {k}", step=k)
        picard_max = max(picard_max, it)
    return CylinderHistory(xgrid, tgrid, p, q, tr, v, picard_max)


@dataclass
class ReferenceParams:
    kind: Literal["neumann", "numeric"] = "neumann"
    V: float = 1.0
    beta: float = 1.0
    t0: float = 0.5
    ell_star: float = 0.1
    refine: int = 2
    # numeric kind only
    p0: Callable | None = None
    v: Callable | None = None
    q0: float = 1.0


def _numeric_initial(params):
    p0 = params.p0 or (lambda y: params.V * (1 - y) * (1 + 0.5 * y))
    v = params.v or (lambda t: params.V * (1 + 0.2 * np.sin(np.pi * t)))
    return p0, v


def make_reference_trajectory(params: ReferenceParams, xgrid: SpaceGrid, tgrid: TimeGrid) -> ReferenceTrajectory:
    q_star = params.ell_star**2
    if params.kind == "neumann":
        sol = NeumannSolution(params.V, params.beta, params.t0)
        y, t = xgrid.x, tgrid.t
        p = np.tile(sol.p(y), (tgrid.m + 1, 1))
        p[:, -1] = 0.0
        px = np.tile(sol.py(y), (tgrid.m + 1, 1))
        ref = ReferenceTrajectory(xgrid, tgrid, p, sol.q(t), np.full(tgrid.m + 1, params.V),
                                  np.full(tgrid.m + 1, sol.py(1.0)), np.zeros_like(p),
                                  params.beta, q_star, "neumann", px)
    elif params.kind == "numeric":
        r = int(params.refine)
        fx = SpaceGrid(xgrid.a, xgrid.b, r * (xgrid.n - 1) + 1)
        ft = TimeGrid(tgrid.T, r * tgrid.m)
        p0, v = _numeric_initial(params)
        hist = solve_cylinder_stefan(p0(fx.x), params.q0, v, fx, ft, params.beta, q_star)
        p = hist.p[::r, ::r]
        pt = np.gradient(hist.p, ft.dt, axis=0, edge_order=2)[::r, ::r]
        ref = ReferenceTrajectory(xgrid, tgrid, p, hist.q[::r], hist.v[::r],
                                  one_sided_trace_derivative(p, xgrid), pt, params.beta, q_star, "numeric")
    else:
        raise ValueError(f"unknown reference kind {params.kind!r}")
    if np.any(ref.v <= 0):
        raise HypothesisViolation("reference boundary trace must stay positive")
    return ref


def discretize_reference(ref: ReferenceTrajectory) -> ReferenceTrajectory:
    """Re-solve ``ref`` with the discrete scheme on its own grid.

    The result is an exact discrete trajectory, with p_t as backward
    differences and the trace as the solver's stencil, so that perturbation
    equations around it close without truncation residue.
    """
    hist = solve_cylinder_stefan(ref.p[0], ref.q[0], ref.v, ref.xgrid, ref.tgrid, ref.beta, ref.q_star)
    pt = np.zeros_like(hist.p)
    pt[1:] = np.diff(hist.p, axis=0) / ref.tgrid.dt
    pt[0] = pt[1]
    return ReferenceTrajectory(ref.xgrid, ref.tgrid, hist.p, hist.q, hist.v, hist.trace, pt,
                               ref.beta, ref.q_star, ref.kind + "-discrete")


def reference_residual(ref: ReferenceTrajectory) -> tuple[float, float]:
    """Max residuals (field, ODE) of the trajectory equations at steps 1..m.

    Uses the stored p_t and trace; q_t is a backward difference.
    """
    dt = ref.tgrid.dt
    pyy = (ref.p[:, 2:] - 2 * ref.p[:, 1:-1] + ref.p[:, :-2]) / ref.xgrid.dx**2
    py = (ref.p[:, 2:] - ref.p[:, :-2]) / (2 * ref.xgrid.dx)
    y = ref.xgrid.interior
    res = (ref.q[1:, None] * ref.pt[1:, 1:-1] - pyy[1:] + y[None, :] / ref.beta * ref.px1[1:, None] * py[1:])
    ode = ref.beta * np.diff(ref.q) / dt + 2 * ref.px1[1:]
    return float(np.abs(res).max()), float(np.abs(ode).max())


ExtensionStrategy = Literal["reflect", "taper"]


def extend_reference(ref: ReferenceTrajectory, strategy: ExtensionStrategy = "reflect") -> ReferenceTrajectory:
    """Extend a (0, 1) reference to (-1, 1).

    ``reflect`` mirrors p about y = 0; ``taper`` ramps linearly from p(0, t)
    down to zero at y = -1.  Derivatives are recomputed on the extended grid,
    which leaves their values at y > 0 unchanged.
    """
    if ref.xgrid.a != 0.0 or ref.xgrid.b != 1.0:
        raise DimensionError("extend_reference expects a reference on (0, 1)")
    n = ref.xgrid.n
    xg = SpaceGrid(-1.0, 1.0, 2 * n - 1)
    if strategy == "reflect":
        left = ref.p[:, :0:-1]
        left_t = ref.pt[:, :0:-1]
    elif strategy == "taper":
        ramp = 1 + xg.x[: n - 1]
        left = ref.p[:, :1] * ramp[None, :]
        left_t = ref.pt[:, :1] * ramp[None, :]
    else:
        raise ValueError(f"unknown extension strategy {strategy!r}")
    p = np.concatenate([left, ref.p], axis=1)
    pt = np.concatenate([left_t, ref.pt], axis=1)
    px = centered_derivative(p, xg)
    return ReferenceTrajectory(xg, ref.tgrid, p, ref.q, ref.v, ref.px1, pt, ref.beta, ref.q_star,
                               ref.kind + f"+{strategy}", px)


def extend_even(field_01: np.ndarray) -> np.ndarray:
    """Even reflection of nodal values on (0, 1) to (-1, 1) along the last axis."""
    return np.concatenate([field_01[..., :0:-1], field_01], axis=-1)


@dataclass
class ExtendedSystemInput:
    z0: np.ndarray
    h0: float
    w: np.ndarray                  # (m + 1, n), zero outside omega
    reference: ReferenceTrajectory  # on (-1, 1)
    omega: tuple[float, float] = (-0.7, -0.3)
    F: np.ndarray | None = None    # extra sources (manufactured tests)
    G: np.ndarray | None = None

    def __post_init__(self):
        xg = self.reference.xgrid
        self.z0 = np.asarray(self.z0, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.z0.shape != (xg.n,):
            raise DimensionError("z0 does not match the reference grid")
        if abs(self.z0[0]) > 1e-12 or abs(self.z0[-1]) > 1e-12:
            raise CompatibilityError("z0 must vanish at both endpoints")
        outside = (xg.x < self.omega[0] - 1e-12) | (xg.x > self.omega[1] + 1e-12)
        if np.any(self.w[:, outside] != 0):
            raise DimensionError("control w must vanish outside omega")


@dataclass
class ExtendedHistory:
    z: np.ndarray
    h: np.ndarray
    trace: np.ndarray
    picard_max: int = 0

    @property
    def terminal(self):
        return self.z[-1], self.h[-1]


def _coeff_rows(ref, k):
    x = ref.xgrid.interior
    I = slice(1, -1)
    a = x * ref.px1[k] / ref.beta
    N = x * ref.px[k, I] / ref.beta
    R = 2 * ref.pt[k, I] / ref.beta
    return a, N, R


def solve_extended_nonlinear(inp: ExtendedSystemInput, beta: float | None = None) -> ExtendedHistory:
    ref = inp.reference
    beta = ref.beta if beta is None else beta
    if beta != ref.beta:
        ref = replace(ref, beta=beta)
    xg, tg = ref.xgrid, ref.tgrid
    m, dt = tg.m, tg.dt
    if 2 * inp.h0 / beta + ref.q[0] <= ref.q_star:
        raise AdmissibilityError("initial h0 breaks admissibility", step=0)
    F = inp.w + (0 if inp.F is None else inp.F)
    G = np.zeros(m + 1) if inp.G is None else inp.G
    x = xg.interior
    z = np.zeros((m + 1, xg.n))
    h = np.zeros(m + 1)
    tr = np.zeros(m + 1)
    z[0], h[0] = inp.z0, inp.h0
    tr[0] = one_sided_trace_derivative(inp.z0, xg)
    zero = np.zeros(xg.n - 2)
    picard_max = 0
    for k in range(1, m + 1):
        a, N, R = _coeff_rows(ref, k)

        def solve(tau_f, k=k, a=a, N=N, R=R):
            h_f = h[k - 1] + dt * (G[k] - tau_f)
            q_eff = ref.q[k] + 2 * h_f / beta
            if q_eff <= ref.q_star:
                raise AdmissibilityError(f"admissibility lost at time step {k}", step=k)
            z_new, h_new, tau = linear_step(xg, dt, q_eff, a + x * tau_f / beta, zero, N, R,
                                            z[k - 1, 1:-1], h[k - 1], F[k, 1:-1], G[k], step=k)
            return np.r_[z_new, h_new], tau

        try:
            state, tau, it = _trace_fixed_point(solve, tr[k - 1], k)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"{exc}: data likely outside the local regime", step=k) from exc
        zk, hk = state[:-1], state[-1]
        picard_max = max(picard_max, it)
        z[k, 1:-1], h[k], tr[k] = zk, hk, tau
    return ExtendedHistory(z, h, tr, picard_max)


def nonlinear_remainder(z: np.ndarray, h: np.ndarray, xgrid: SpaceGrid, tgrid: TimeGrid, beta: float) -> np.ndarray:
    """Quadratic remainder f1, shape (m + 1, n) with row 0 unused.

    A linear solve with source ``w + f1(z, h)`` reproduces the nonlinear
    step equations exactly, so a fixed point of that map is a nonlinear
    solution.
    """
    x = xgrid.x
    f1 = np.zeros_like(z)
    tau = one_sided_trace_derivative(z, xgrid)
    zx = centered_derivative(z, xgrid)
    zt = np.diff(z, axis=0) / tgrid.dt
    f1[1:] = -(2 / beta) * h[1:, None] * zt - (x[None, :] / beta) * tau[1:, None] * zx[1:]
    f1[:, 0] = f1[:, -1] = 0.0
    return f1
