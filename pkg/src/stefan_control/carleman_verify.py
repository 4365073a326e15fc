"""Empirical checks of the weighted (Carleman) inequalities.

All weighted integrals are accumulated in the log domain: the weights
e^{-2 s alpha} underflow long before the integrals become meaningless.
Integrals use interior space nodes and, for the alpha/xi family, interior
time nodes only.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .adjoint import AdjointState, solve_adjoint
from .linear_system import CoefficientSet
from .numerics import SpaceGrid, TimeGrid, discrete_h1_norm
from .weights import CarlemanParams, EtaFunction, WeightTable, tabulate_weights

NEG_INF = -np.inf


def _log_sq(v):
    with np.errstate(divide="ignore"):
        return np.log(np.square(v))


def log_integral(values, log_weight, cell: float) -> float:
    """log of sum(cell * values^2 * exp(log_weight)); -inf for a zero integrand."""
    terms = _log_sq(values) + log_weight
    if np.all(terms == NEG_INF):
        return NEG_INF
    return float(logsumexp(terms) + np.log(cell))


def log_add(*logs) -> float:
    logs = [v for v in logs if v != NEG_INF]
    return float(logsumexp(logs)) if logs else NEG_INF


@dataclass
class CarlemanReport:
    log_lhs: float
    log_rhs: float
    rhs_components: tuple  # logs of (local, f, g) terms
    s: float
    lam: float
    lhs_components: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.log_lhs == NEG_INF:
            return 0.0
        return float(np.exp(self.log_lhs - self.log_rhs))

    @property
    def lhs(self) -> float:
        return float(np.exp(self.log_lhs))

    @property
    def rhs(self) -> float:
        return float(np.exp(self.log_rhs))


@dataclass
class _Derivs:
    u: np.ndarray     # interior nodes
    ut: np.ndarray
    ux: np.ndarray
    uxx: np.ndarray
    b1: np.ndarray    # value at x = 1
    bx_left: np.ndarray
    bx_right: np.ndarray


def _derivatives(phi, xgrid: SpaceGrid, tgrid: TimeGrid, steps: np.ndarray) -> _Derivs:
    dx, dt, m = xgrid.dx, tgrid.dt, tgrid.m
    prev = np.maximum(steps - 1, 0)
    nxt = np.minimum(steps + 1, m)
    ut = (phi[nxt] - phi[prev]) / ((nxt - prev)[:, None] * dt)
    P = phi[steps]
    ux = (P[:, 2:] - P[:, :-2]) / (2 * dx)
    uxx = (P[:, 2:] - 2 * P[:, 1:-1] + P[:, :-2]) / dx**2
    left = (-3 * P[:, 0] + 4 * P[:, 1] - P[:, 2]) / (2 * dx)
    right = (P[:, -3] - 4 * P[:, -2] + 3 * P[:, -1]) / (2 * dx)
    return _Derivs(P[:, 1:-1], ut[:, 1:-1], ux, uxx, P[:, -1], left, right)


def _interior_density_logs(D: _Derivs, logW, log_e, c_m1, c_1, c_3):
    """Per-term log integrands for c_m1 W^-1 (u_t^2 + u_xx^2) + c_1 W u_x^2 + c_3 W^3 u^2, times e."""
    return {
        "t": _log_sq(D.ut) + np.log(c_m1) - logW + log_e,
        "xx": _log_sq(D.uxx) + np.log(c_m1) - logW + log_e,
        "x": _log_sq(D.ux) + np.log(c_1) + logW + log_e,
        "0": _log_sq(D.u) + np.log(c_3) + 3 * logW + log_e,
    }


def _sum_terms(terms: dict, cell: float) -> dict:
    out = {}
    for k, v in terms.items():
        out[k] = NEG_INF if np.all(v == NEG_INF) else float(logsumexp(v) + np.log(cell))
    return out


def solve_basic_system(coeffs: CoefficientSet, f, g, psi_T, gamma_T: float, compat: float = 1.0) -> AdjointState:
    """Solve psi_t + d psi_xx = f with the nonlocal boundary condition and memory ODE (d = 1/qbar)."""
    plain = CoefficientSet(coeffs.xgrid, coeffs.tgrid, np.zeros_like(coeffs.a), np.zeros_like(coeffs.a),
                           coeffs.N, coeffs.R, coeffs.qbar, coeffs.q_star)
    return solve_adjoint(plain, -coeffs.qbar[:, None] * np.asarray(f), g, psi_T, gamma_T, compat=compat)


def _alpha_frame(table: WeightTable):
    k = np.arange(1, table.tgrid.m)
    return k, np.log(table.xi[k][:, 1:-1]), -2 * table.s * table.alpha[k][:, 1:-1], \
        np.log(table.xi_hat[k]), -2 * table.s * table.alpha_hat[k]


def carleman_sides_basic(state: AdjointState, f, g, table: WeightTable) -> CarlemanReport:
    xg, tg = table.xgrid, table.tgrid
    s, lam = table.s, table.lam
    cell = xg.dx * tg.dt
    k, logxi, log_e, logxih, log_eh = _alpha_frame(table)
    D = _derivatives(state.phi, xg, tg, k)
    sx = np.log(s)
    terms = _interior_density_logs(D, logxi + sx, log_e, 1.0, lam**2, lam**4)
    lhs = _sum_terms(terms, cell)
    W = logxih + sx
    lhs["b1"] = log_integral(D.b1, 3 * W + 3 * np.log(lam) + log_eh, tg.dt)
    lhs["bx"] = log_add(log_integral(D.bx_left, W + np.log(lam) + log_eh, tg.dt),
                        log_integral(D.bx_right, W + np.log(lam) + log_eh, tg.dt))
    f = np.asarray(f)[k][:, 1:-1]
    g = np.asarray(g)[k]
    mask = table.omega_mask()[1:-1]
    local = log_integral(D.u[:, mask], 3 * sx + 4 * np.log(lam) + 3 * logxi[:, mask] + log_e[:, mask], cell)
    f_term = log_integral(f, log_e, cell)
    g_term = log_integral(g, log_eh, tg.dt)
    return CarlemanReport(log_add(*lhs.values()), log_add(local, f_term, g_term),
                          (local, f_term, g_term), s, lam, lhs)


def carleman_sides_trajectory(state: AdjointState, g1, g2, table: WeightTable, reference=None) -> CarlemanReport:
    """Weighted sides for the Stefan adjoint, including the gamma terms.

    ``lhs_components['absorbed_f']`` holds the log f-term of the frame with
    d = 1/qbar and the drift folded into f (needs ``reference``).
    """
    tg = table.tgrid
    rep = carleman_sides_basic(state, g1, g2, table)
    k, _, _, logxih, log_eh = _alpha_frame(table)
    W = logxih + np.log(table.s)
    gt = (state.gamma[k + 1] - state.gamma[k - 1]) / (2 * tg.dt)
    lhs = dict(rep.lhs_components)
    lhs["gamma_t"] = log_integral(gt, log_eh, tg.dt)
    lhs["gamma"] = log_integral(state.gamma[k], 3 * W + 3 * np.log(table.lam) + log_eh, tg.dt)
    if reference is not None:
        xg = table.xgrid
        phi = state.phi
        phix = np.gradient(phi, xg.dx, axis=1)
        f_l = -(np.asarray(g1) + reference.px1[:, None] / reference.beta * (xg.x * phix - phi)) / reference.q[:, None]
        lhs["absorbed_f"] = log_integral(f_l[k][:, 1:-1], -2 * table.s * table.alpha[k][:, 1:-1], xg.dx * tg.dt)
    core = [v for key, v in lhs.items() if key != "absorbed_f"]
    return CarlemanReport(log_add(*core), rep.log_rhs, rep.rhs_components, rep.s, rep.lam, lhs)


def modified_density_logs(state: AdjointState, table: WeightTable, steps=None) -> dict:
    """Per-node log integrands of the zeta/mu interior functional at ``steps``."""
    tg = table.tgrid
    k = np.arange(0, tg.m) if steps is None else np.asarray(steps)
    D = _derivatives(state.phi, table.xgrid, tg, k)
    logmu = np.log(table.mu[k][:, 1:-1])
    return _interior_density_logs(D, logmu, -2 * table.s * table.zeta[k][:, 1:-1], 1.0, 1.0, 1.0)


def alpha_density_logs(state: AdjointState, table: WeightTable, steps) -> dict:
    """Same densities in the alpha/xi family with unit s, lambda prefactors."""
    k = np.asarray(steps)
    D = _derivatives(state.phi, table.xgrid, table.tgrid, k)
    return _interior_density_logs(D, np.log(table.xi[k][:, 1:-1]), -2 * table.s * table.alpha[k][:, 1:-1], 1.0, 1.0, 1.0)


def carleman_sides_modified(state: AdjointState, g1, g2, table: WeightTable) -> CarlemanReport:
    xg, tg = table.xgrid, table.tgrid
    cell = xg.dx * tg.dt
    k = np.arange(0, tg.m)
    D = _derivatives(state.phi, xg, tg, k)
    lhs = _sum_terms(modified_density_logs(state, table, k), cell)
    logmuh = np.log(table.mu_hat[k])
    log_eh = -2 * table.s * table.zeta_hat[k]
    nxt = k + 1
    gt = (state.gamma[nxt] - state.gamma[np.maximum(k - 1, 0)]) / ((nxt - np.maximum(k - 1, 0)) * tg.dt)
    lhs["gamma_t"] = log_integral(gt, log_eh, tg.dt)
    lhs["bx"] = log_add(log_integral(D.bx_left, logmuh + log_eh, tg.dt),
                        log_integral(D.bx_right, logmuh + log_eh, tg.dt))
    lhs["gamma"] = log_integral(state.gamma[k], 3 * logmuh + log_eh, tg.dt)
    lhs["b1"] = log_integral(D.b1, 3 * logmuh + log_eh, tg.dt)
    init = discrete_h1_norm(state.phi[0], xg) ** 2 + state.gamma[0] ** 2
    lhs["initial"] = float(np.log(init)) if init > 0 else NEG_INF
    mask = table.omega_mask()[1:-1]
    log_es = -2 * table.s * table.zeta_star[k]
    local = log_integral(D.u[:, mask], 3 * np.log(table.mu_star[k])[:, None] + log_es[:, None], cell)
    g1_term = log_integral(np.asarray(g1)[k][:, 1:-1], np.broadcast_to(log_es[:, None], D.u.shape), cell)
    g2_term = log_integral(np.asarray(g2)[k], log_eh, tg.dt)
    return CarlemanReport(log_add(*lhs.values()), log_add(local, g1_term, g2_term),
                          (local, g1_term, g2_term), table.s, table.lam, lhs)


# ---------------------------------------------------------------------------
# decomposition identity


@dataclass
class AlphaDerivatives:
    alpha: np.ndarray
    ax: np.ndarray
    axx: np.ndarray
    at: np.ndarray
    axt: np.ndarray
    att: np.ndarray


def alpha_derivatives(table: WeightTable) -> AlphaDerivatives:
    """Closed-form derivatives of alpha (NaN at t = 0, T)."""
    eta = table.eta
    lam, T = table.lam, table.tgrid.T
    M = table.params.m * eta.sup_norm
    x, t = table.xgrid.x, table.tgrid.t
    e, ex, exx = eta(x), eta.dx(x), eta.dxx(x)
    xi = table.xi
    tt = (T - 2 * t)[:, None]
    c1 = np.exp(-2 * lam * e) - np.exp(-lam * (M + e))
    return AlphaDerivatives(
        table.alpha,
        -lam * xi * ex,
        -lam**2 * xi * ex**2 - lam * xi * exx,
        -xi**2 * c1 * tt,
        lam * xi**2 * ex * np.exp(-lam * (M + e)) * tt,
        2 * xi**2 * c1 + 2 * tt**2 * xi**3 * (np.exp(-lam * (M + 3 * e)) - np.exp(-2 * lam * (M + e))),
    )


@dataclass
class IdentityReport:
    lhs: float          # ||e^{-s alpha} f - s d alpha_xx w||^2 built from the decomposition
    norm_pe: float
    norm_pk: float
    cross: float        # 2 (P_e w, P_k w - s d alpha_xx w)
    gap: float          # relative binomial-identity gap
    conjugation_residual: float  # relative || e^{-s alpha} f - (P_e w + P_k w) ||
    ibp_sum: float      # I1 + I2 + I3 + I4 after integration by parts
    ibp_gap: float      # relative |cross - ibp_sum|


def decomposition_identity(state: AdjointState, f, table: WeightTable, d) -> IdentityReport:
    xg, tg = table.xgrid, table.tgrid
    s, dx, dt, m = table.s, xg.dx, tg.dt, tg.m
    d = np.broadcast_to(np.asarray(d, dtype=float), (m + 1,))
    der = alpha_derivatives(table)
    k = np.arange(1, m)
    w = np.zeros_like(state.phi)
    w[k] = np.exp(-s * table.alpha[k]) * state.phi[k]
    I = slice(1, -1)
    dk = d[k][:, None]
    wt = (w[k + 1] - w[k - 1])[:, I] / (2 * dt)
    wx = (w[k][:, 2:] - w[k][:, :-2]) / (2 * dx)
    wxx = (w[k][:, 2:] - 2 * w[k][:, 1:-1] + w[k][:, :-2]) / dx**2
    wi = w[k][:, I]
    ax, axx, at = der.ax[k][:, I], der.axx[k][:, I], der.at[k][:, I]
    Pe = dk * wxx + (s * at + s**2 * dk * ax**2) * wi
    Pk = wt + 2 * s * dk * ax * wx + s * dk * axx * wi
    Y = Pk - s * dk * axx * wi
    cell = dx * dt
    lhs = cell * np.sum((Pe + Y) ** 2)
    npe, npk = cell * np.sum(Pe**2), cell * np.sum(Y**2)
    cross = 2 * cell * np.sum(Pe * Y)
    scale = max(lhs, npe + npk + abs(cross), 1e-300)
    gap = abs(lhs - (npe + npk + cross)) / scale
    ef = np.exp(-s * table.alpha[k][:, I]) * np.asarray(f)[k][:, I]
    den = max(np.sqrt(cell * np.sum(ef**2)), 1e-300)
    conj = np.sqrt(cell * np.sum((ef - Pe - Pk) ** 2)) / den
    ibp = _ibp_sum(w, d, der, table)
    ibp_gap = abs(cross - ibp) / max(abs(cross), abs(ibp), 1e-300)
    return IdentityReport(float(lhs), float(npe), float(npk), float(cross), float(gap), float(conj),
                          float(ibp), float(ibp_gap))


def _ibp_sum(w, d, der: AlphaDerivatives, table: WeightTable) -> float:
    """I1 + I2 + I3 + I4 in their integrated-by-parts forms (w vanishes at t = 0, T)."""
    xg, tg = table.xgrid, table.tgrid
    s, dx, dt, m = table.s, xg.dx, tg.dt, tg.m
    k = np.arange(1, m)
    wx = np.gradient(w, dx, axis=1, edge_order=2)
    wt = np.gradient(w, dt, axis=0, edge_order=2)
    dt_d = np.gradient(d, dt, edge_order=2)
    D = d[:, None]
    ax = np.nan_to_num(der.ax)
    axx = np.nan_to_num(der.axx)
    at = np.nan_to_num(der.at)
    att = np.nan_to_num(der.att)
    # (d alpha_x^2)_t and (alpha_t alpha_x)_x from the closed forms
    d_ax2_t = dt_d[:, None] * ax**2 + 2 * D * ax * np.nan_to_num(der.axt)
    atax_x = np.nan_to_num(der.axt) * ax + at * axx
    wts = np.full(xg.n, dx)
    wts[0] = wts[-1] = dx / 2

    def Q(field):
        return dt * np.sum(field[k] @ wts)

    def B(field):
        # [field]_{x=-1}^{x=1} integrated in time
        return dt * np.sum(field[k, -1] - field[k, 0])

    I1 = Q(dt_d[:, None] * wx**2) + 2 * B(D * wt * wx)
    I2 = -2 * s * Q(D**2 * axx * wx**2) + 2 * s * B(D**2 * ax * wx**2)
    I3 = -s * Q(att * w**2) - s**2 * Q(d_ax2_t * w**2)
    I4 = -Q(D * (2 * s**2 * atax_x + 6 * s**3 * D * ax**2 * axx) * w**2) \
        + 2 * B(D * (s**2 * at * ax + s**3 * D * ax**3) * w**2)
    return float(I1 + I2 + I3 + I4)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    s: float
    lam: float
    log_lhs: float
    log_rhs: float
    ratio: float


@dataclass
class SweepResult:
    rows: list
    C0: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "lambda", "lhs", "rhs", "ratio", "log_lhs", "log_rhs"])
            for r in self.rows:
                w.writerow([f"{r.s:.12e}", f"{r.lam:.12e}", f"{np.exp(r.log_lhs):.12e}",
                            f"{np.exp(r.log_rhs):.12e}", f"{r.ratio:.12e}",
                            f"{r.log_lhs:.12e}", f"{r.log_rhs:.12e}"])


def carleman_sweep(datasets: Sequence, eta: EtaFunction, base: CarlemanParams, xgrid: SpaceGrid,
                   tgrid: TimeGrid, s_factors: Iterable[float] = (1, 2, 4),
                   lam_factors: Iterable[float] = (1, 2), workers: int = 1) -> SweepResult:
    """``datasets`` holds (state, f, g) triples for the basic system.

    Parameter points are independent; ``workers > 1`` evaluates them on a
    thread pool. Row order is (lambda, s) lexicographic either way.
    """
    ref = base.resolved(eta, tgrid.T)
    s_min = ref.s0 * (tgrid.T + tgrid.T**2)
    points = [(ref.lam0 * lf, s_min * sf) for lf in lam_factors for sf in s_factors]

    def evaluate(point):
        lam, s = point
        p = CarlemanParams(base.m, lam, s, base.omega, base.omega0, ref.lam0, base.s0)
        table = tabulate_weights(eta, p, xgrid, tgrid)
        worst = max((carleman_sides_basic(st, f, g, table) for st, f, g in datasets), key=lambda r: r.ratio)
        return SweepRow(table.s, table.lam, worst.log_lhs, worst.log_rhs, worst.ratio)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, points))
    else:
        rows = [evaluate(pt) for pt in points]
    return SweepResult(rows, max(r.ratio for r in rows))


def demo_coefficients(xgrid: SpaceGrid, tgrid: TimeGrid) -> CoefficientSet:
    """Smooth nonlocal coefficients used for the basic-system sweeps."""
    X, Tm = np.meshgrid(xgrid.x, tgrid.t)
    return CoefficientSet(xgrid, tgrid, 0 * X, 0 * X, 0.2 * X * np.exp(-Tm), 0.3 * np.cos(X) + 0 * Tm,
                          1 + 0.2 * tgrid.t)


def random_basic_datasets(coeffs: CoefficientSet, rng: np.random.Generator, count: int = 10) -> list:
    """(state, f, g) triples: smooth random sources and compatible final data."""
    from .adjoint import compatible_terminal

    xg, tg = coeffs.xgrid, coeffs.tgrid
    X, Tm = np.meshgrid(xg.x, tg.t)
    y = (xg.interior - xg.a) / (xg.b - xg.a)
    out = []
    for _ in range(count):
        a, b = rng.normal(size=4), rng.normal(size=4)
        gamma_T = float(rng.normal())
        psi_T = compatible_terminal(coeffs, sum(a[j] * np.sin((j + 1) * np.pi * y) for j in range(4)), gamma_T)
        f = (b[0] * np.sin(np.pi * X) + b[1] * np.cos(np.pi * X / 2)) * np.cos(2 * Tm)
        g = b[2] * np.sin(3 * tg.t) + b[3]
        out.append((solve_basic_system(coeffs, f, g, psi_T, gamma_T), f, g))
    return out
