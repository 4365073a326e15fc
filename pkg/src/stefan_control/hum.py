"""Weighted least-norm null control of the linearized extended system.

The discrete problem is

    minimize  sum_k dt [ rho0^2 |z^k|^2 + rho1^2 |h^k|^2 + rho2^2 |w^k|_omega^2 ]
    subject to  the implicit Euler steps of the linearized system with
                source f1 + w 1_omega, f2,   and   z^m = 0, h^m = 0.

Its multipliers are the discrete adjoint pair (phi, gamma); the normal
equations are the Gram (Lax-Milgram) system A(phi, gamma; .) = F(.).
Weights grow like exp(s zeta) toward t = T, far beyond double range, so a
variable whose log-weight exceeds the smallest one of its family by
``log_range`` is fixed to zero (the limit that weight enforces).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .errors import DimensionError, HypothesisViolation, NonConvergenceError, SingularityError
from .linear_system import CoefficientSet, SourcePair, solve_linearized
from .numerics import discrete_h1_norm, interior_trace_row, trapezoid_weights
from .weights import WeightTable

LOG_RANGE = 30.0
KKT_TOL = 1e-11
FEAS_TOL = 1e-6


@dataclass
class DiscreteP0:
    """Pairs (phi, gamma) on steps 1..m; phi(1) is eliminated by the nonlocal constraint."""

    coeffs: CoefficientSet

    @property
    def size(self) -> int:
        return self.coeffs.tgrid.m * (self.coeffs.xgrid.n - 1)

    def unpack(self, vec):
        """Multiplier vector -> (phi (m+1, n), gamma (m+1)); row 0 copies row 1."""
        xg, tg = self.coeffs.xgrid, self.coeffs.tgrid
        n, m = xg.n, tg.m
        blocks = np.asarray(vec).reshape(m, n - 1)
        phi = np.zeros((m + 1, n))
        gamma = np.zeros(m + 1)
        phi[1:, 1:-1] = blocks[:, :-1]
        gamma[1:] = blocks[:, -1]
        phi[1:, -1] = gamma[1:] + xg.dx * np.sum(self.coeffs.N[1:, 1:-1] * phi[1:, 1:-1], axis=1)
        phi[0], gamma[0] = phi[1], gamma[1]
        return phi, gamma

    def pack(self, phi, gamma):
        xg, tg = self.coeffs.xgrid, self.coeffs.tgrid
        out = np.empty((tg.m, xg.n - 1))
        out[:, :-1] = phi[1:, 1:-1]
        out[:, -1] = gamma[1:]
        return out.ravel()

    def constraint_residual(self, phi, gamma) -> float:
        xg = self.coeffs.xgrid
        nphi = xg.dx * np.sum(self.coeffs.N[1:, 1:-1] * phi[1:, 1:-1], axis=1)
        r = phi[1:, -1] - gamma[1:] - nphi
        scale = max(np.abs(phi[1:, -1]).max(), np.abs(gamma).max(), np.abs(nphi).max(), 1.0)
        return float(np.abs(r).max() / scale)


@dataclass
class _Layout:
    n: int
    m: int
    omega: np.ndarray          # interior indices inside omega

    @property
    def ni(self):
        return self.n - 2

    @property
    def nw(self):
        return len(self.omega)

    def zc(self, k):
        return (k - 1) * self.ni

    @property
    def h0(self):
        return (self.m - 1) * self.ni

    @property
    def w0(self):
        return self.h0 + self.m - 1

    @property
    def ncols(self):
        return self.w0 + (self.m - 1) * self.nw

    def zr(self, k):
        return (k - 1) * (self.n - 1)

    def hr(self, k):
        return (k - 1) * (self.n - 1) + self.ni

    @property
    def nrows(self):
        return self.m * (self.n - 1)


def _constraint_matrix(coeffs: CoefficientSet, lay: _Layout) -> sp.csc_matrix:
    xg, tg = coeffs.xgrid, coeffs.tgrid
    dx, dt = xg.dx, tg.dt
    ni = lay.ni
    c = interior_trace_row(xg)
    cnz = np.nonzero(c)[0]
    rows, cols, vals = [], [], []

    def put(r, cc, v):
        rows.append(np.broadcast_to(r, np.shape(v)).ravel() if np.ndim(v) else np.atleast_1d(r))
        cols.append(np.broadcast_to(cc, np.shape(v)).ravel() if np.ndim(v) else np.atleast_1d(cc))
        vals.append(np.ravel(v) if np.ndim(v) else np.atleast_1d(float(v)))

    idx = np.arange(ni)
    I = slice(1, -1)
    for k in range(1, lay.m + 1):
        zr, hr = lay.zr(k), lay.hr(k)
        q = coeffs.qbar[k]
        a, b, N, R = coeffs.a[k, I], coeffs.b[k, I], coeffs.N[k, I], coeffs.R[k, I]
        if k <= lay.m - 1:
            zc = lay.zc(k)
            put(zr + idx, zc + idx, q / dt + 2 / dx**2 + b)
            put(zr + idx[1:], zc + idx[:-1], -1 / dx**2 - a[1:] / (2 * dx))
            put(zr + idx[:-1], zc + idx[1:], -1 / dx**2 + a[:-1] / (2 * dx))
            # trace coupling N_i c_j and the memory term R_i h^k
            put((zr + idx)[:, None], (zc + cnz)[None, :], np.outer(N, c[cnz]))
            put(zr + idx, lay.h0 + k - 1, R)
            put(hr, lay.h0 + k - 1, np.float64(1.0))
            put(np.full(len(cnz), hr), zc + cnz, dt * c[cnz])
            put(zr + lay.omega, lay.w0 + (k - 1) * lay.nw + np.arange(lay.nw), -np.ones(lay.nw))
        if k >= 2:
            put(zr + idx, lay.zc(k - 1) + idx, np.full(ni, -q / dt))
            put(hr, lay.h0 + k - 2, np.float64(-1.0))
    E = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(lay.nrows, lay.ncols))
    cell = dx * dt
    scale = np.ones(lay.nrows)
    for k in range(1, lay.m + 1):
        scale[lay.zr(k):lay.zr(k) + ni] = cell
    return (sp.diags(scale) @ E.tocsr()).tocsc()


def _rhs(coeffs, lay, src: SourcePair, z0, h0):
    xg, tg = coeffs.xgrid, coeffs.tgrid
    cell = xg.dx * tg.dt
    d = np.zeros(lay.nrows)
    for k in range(1, lay.m + 1):
        d[lay.zr(k):lay.zr(k) + lay.ni] = cell * src.F[k, 1:-1]
        d[lay.hr(k)] = tg.dt * src.G[k]
    d[:lay.ni] += cell * coeffs.qbar[1] / tg.dt * z0[1:-1]
    d[lay.hr(1)] += h0
    return d


def _log_weights(table: WeightTable, lay: _Layout, cell: float, dt: float) -> np.ndarray:
    """log of the diagonal cost weights per column."""
    k = np.arange(1, lay.m)
    lr = table.log_rho
    return np.concatenate([
        np.repeat(np.log(cell) + 2 * lr[0, k], lay.ni),
        np.log(dt) + 2 * lr[1, k],
        np.repeat(np.log(cell) + 2 * lr[2, k], lay.nw),
    ])


def _keep_mask(table, lay, log_range):
    """Keep whole steps 1..k*: later steps exceed ``log_range`` in some family."""
    k = np.arange(1, lay.m)
    ok = np.ones(len(k), bool)
    for i in range(3):
        v = 2 * table.log_rho[i, k]
        ok &= np.isfinite(v) & (v - np.nanmin(v) <= log_range)
    last = len(k) if ok.all() else int(np.argmin(ok))
    step_ok = np.arange(len(k)) < last
    return np.concatenate([np.repeat(step_ok, lay.ni), step_ok, np.repeat(step_ok, lay.nw)])


@dataclass
class GramOperator:
    """A = E W^{-1} E^T on the kept multiplier rows (symmetric PSD)."""

    matrix: sp.csr_matrix
    rows: np.ndarray          # kept rows of the multiplier space
    scaled_E: sp.csc_matrix   # E W^{-1/2} restricted to kept rows/columns
    keep_cols: np.ndarray
    log_w: np.ndarray         # log weights of kept columns
    space: DiscreteP0
    layout: _Layout

    def symmetry_gap(self) -> float:
        A = self.matrix
        diff = abs(A - A.T).max() if A.nnz else 0.0
        return float(diff / max(abs(A).max(), 1e-300))

    _kkt: tuple | None = field(default=None, repr=False)

    def kkt(self, eps: float = 0.0):
        """Factorised [[I, B^T], [B, -eps I]] with B the row-equilibrated E W^{-1/2}."""
        if self._kkt is None or self._kkt[3] != eps:
            B, rn = self.equilibrated()
            C = -eps * sp.identity(B.shape[0]) if eps else None
            K = sp.bmat([[sp.identity(B.shape[1]), B.T], [B, C]], format="csc")
            self._kkt = (K, spla.splu(K), rn, eps)
        return self._kkt

    @property
    def kept_steps(self) -> int:
        """Steps 1..k* carry free variables; later ones are fixed to zero."""
        return int(np.sum(self.keep_cols < self.layout.h0) // self.layout.ni)

    def equilibrated(self) -> sp.csc_matrix:
        """Rows of E W^{-1/2} scaled to unit norm."""
        Es = self.scaled_E
        rn = np.sqrt(np.asarray(Es.multiply(Es).sum(axis=1)).ravel())
        return (sp.diags(1 / rn) @ Es).tocsc(), rn

    def min_eigenvalue(self, iters: int = 40, seed: int = 0) -> float:
        """Smallest eigenvalue of the row-equilibrated Gram matrix B B^T.

        Shifted inverse iteration; the Rayleigh quotient is evaluated as
        |B^T v|^2 so it cannot go negative through cancellation.
        """
        B, _ = self.equilibrated()
        A = (B @ B.T).tocsc()
        shift = 1e-14 * abs(A).max()
        try:
            lu = spla.splu((A + shift * sp.identity(A.shape[0])).tocsc())
        except RuntimeError as exc:
            raise SingularityError("Gram matrix factorisation failed") from exc
        v = np.random.default_rng(seed).normal(size=A.shape[0])
        for _ in range(iters):
            v = lu.solve(v)
            v /= np.linalg.norm(v)
        val = float(np.linalg.norm(B.T @ v) ** 2)
        if not val > 0:
            raise SingularityError("Gram matrix has a null vector on the reduced space", value=val)
        return val

    def quadratic_form(self, vec) -> float:
        return float(vec @ (self.matrix @ vec))


def assemble_gram(coeffs: CoefficientSet, table: WeightTable, log_range: float = LOG_RANGE) -> GramOperator:
    xg, tg = coeffs.xgrid, coeffs.tgrid
    if table.xgrid.n != xg.n or table.tgrid.m != tg.m:
        raise DimensionError("weight table does not match the coefficient grids")
    if tg.m < 3:
        raise DimensionError("need at least 3 time steps")
    omega = np.nonzero(table.omega_mask()[1:-1])[0]
    lay = _Layout(xg.n, tg.m, omega)
    E = _constraint_matrix(coeffs, lay)
    keep = _keep_mask(table, lay, log_range)
    logw = _log_weights(table, lay, xg.dx * tg.dt, tg.dt)[keep]
    Ek = E[:, np.nonzero(keep)[0]]
    # normalise before scaling so nothing underflows
    shift = logw.min()
    Es = (Ek @ sp.diags(np.exp(-0.5 * (logw - shift)))).tocsr()
    rows = np.nonzero(np.diff(Es.indptr) > 0)[0]
    Es = Es[rows].tocsc()
    A = (Es @ Es.T).tocsr() * np.exp(-shift)
    A = 0.5 * (A + A.T)
    return GramOperator(A, rows, Es, np.nonzero(keep)[0], logw, DiscreteP0(coeffs), lay)


@dataclass
class HumSolution:
    phi: np.ndarray
    gamma: np.ndarray
    z: np.ndarray
    h: np.ndarray
    w: np.ndarray
    e_norm_components: dict
    data_norm: float
    weighted_data_norm: float
    kkt_residual: float
    dropped_residual: float
    terminal: tuple = (np.nan, np.nan)   # (||z(T)||_2, |h(T)|) from the forward re-solve
    forward_gap: float = np.nan          # max |z - z_forward| + |h - h_forward|
    extras: dict = field(default_factory=dict)

    @property
    def weighted_ratio(self) -> float:
        tot = sum(self.e_norm_components.values())
        return float(tot / self.weighted_data_norm**2) if self.weighted_data_norm > 0 else 0.0

    def to_csv(self, path, xgrid, tgrid) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", "z", "w", "phi"])
            for k, t in enumerate(tgrid.t):
                for i, x in enumerate(xgrid.x):
                    wr.writerow([repr(float(t)), repr(float(x)), repr(float(self.z[k, i])),
                                 repr(float(self.w[k, i])), repr(float(self.phi[k, i]))])


def weighted_source_norm(table: WeightTable, src: SourcePair, last_step: int | None = None) -> float:
    """sqrt of the rho3-weighted L2 norms of (F, G) over steps 1..last_step (default m - 1)."""
    k = np.arange(1, min(last_step or table.tgrid.m - 1, table.tgrid.m - 1) + 1)
    lr3 = table.log_rho[3, k]
    xw = trapezoid_weights(table.xgrid)
    dt = table.tgrid.dt
    with np.errstate(divide="ignore"):
        terms = np.concatenate([2 * lr3 + np.log(src.F[k] ** 2 @ xw * dt), 2 * lr3 + np.log(src.G[k] ** 2 * dt)])
    terms = terms[terms > -np.inf]
    total = float(np.exp(logsumexp(terms))) if terms.size else 0.0
    if not np.isfinite(total):
        raise HypothesisViolation("source is not in the rho3-weighted space", value=total)
    return float(np.sqrt(total))


def solve_null_control(coeffs: CoefficientSet, table: WeightTable, src: SourcePair, z0, h0: float,
                       gram: GramOperator | None = None, verify: bool = True,
                       tol: float = KKT_TOL, feasibility_tol: float = FEAS_TOL, regularization: float = 0.0,
                       max_refine: int = 4) -> HumSolution:
    """Least-weighted-norm control steering (z0, h0) to rest at t = T.

    The KKT system is solved by sparse LU with iterative refinement. At
    ordinary meshes the constraint matrix is numerically rank deficient
    (null controllability of high modes is exponentially expensive), so the
    full residual typically plateaus above ``tol``; only the constraint
    (feasibility) part must reach ``feasibility_tol``.
    """
    xg, tg = coeffs.xgrid, coeffs.tgrid
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (xg.n,) or src.F.shape != (tg.m + 1, xg.n):
        raise DimensionError("data shapes do not match the grids")
    if not (np.all(np.isfinite(src.F)) and np.all(np.isfinite(src.G)) and np.all(np.isfinite(z0))):
        raise HypothesisViolation("non-finite data")
    gram = gram or assemble_gram(coeffs, table)
    wnorm = weighted_source_norm(table, src, gram.kept_steps + 1)
    data_norm = float(np.sqrt(discrete_h1_norm(z0, xg) ** 2 + h0**2
                              + np.sum(src.F**2) * xg.dx * tg.dt + np.sum(src.G**2) * tg.dt))
    weighted_data = float(np.sqrt(discrete_h1_norm(z0, xg) ** 2 + h0**2 + wnorm**2))
    lay = gram.layout
    d_full = _rhs(coeffs, lay, src, z0, h0)
    mask = np.ones(lay.nrows, bool)
    mask[gram.rows] = False
    dropped = float(np.abs(d_full[mask]).max()) if mask.any() else 0.0
    d = d_full[gram.rows]

    K, lu, rn, _ = gram.kkt(regularization)
    nr = len(rn)
    nc = K.shape[0] - nr
    rhs = np.concatenate([np.zeros(nc), d / rn])
    sol = np.zeros(nc + nr)
    resid = rhs.copy()
    scale = max(np.linalg.norm(rhs), 1e-300)
    zero = scale <= 1e-300
    rel = feas = 0.0
    for _ in range(0 if zero else max_refine):
        sol += lu.solve(resid)
        resid = rhs - K @ sol
        rel = float(np.linalg.norm(resid) / scale)
        if rel <= tol:
            break
    if not zero:
        # true constraint defect of the primal (differs from the block residual when eps > 0)
        feas = float(np.linalg.norm(K[nc:, :nc] @ sol[:nc] - rhs[nc:]) / scale)
    if feas > feasibility_tol:
        raise NonConvergenceError("constraint residual stagnated; increase s or refine the time grid",
                                  residual=feas)
    ut = sol[:nc]
    mu_kept = -sol[nc:] / rn
    mu = np.zeros(lay.nrows)
    shift = gram.log_w.min()
    mu[gram.rows] = mu_kept * np.exp(shift)
    u = np.zeros(lay.ncols)
    u[gram.keep_cols] = ut * np.exp(-0.5 * (gram.log_w - shift))
    phi, gamma = gram.space.unpack(mu)

    m, n, ni = tg.m, xg.n, lay.ni
    z = np.zeros((m + 1, n))
    h = np.zeros(m + 1)
    w = np.zeros((m + 1, n))
    z[0], h[0] = z0, h0
    z[1:m, 1:-1] = u[:lay.h0].reshape(m - 1, ni)
    h[1:m] = u[lay.h0:lay.w0]
    w[1:m, 1 + lay.omega] = u[lay.w0:].reshape(m - 1, lay.nw)
    comps = {}
    full_logw = _log_weights(table, lay, xg.dx * tg.dt, tg.dt)
    for name, sl in (("z", slice(0, lay.h0)), ("h", slice(lay.h0, lay.w0)), ("w", slice(lay.w0, None))):
        vals = u[sl]
        lw = full_logw[sl]
        nz = vals != 0
        comps[name] = float(np.sum(np.exp(2 * np.log(np.abs(vals[nz])) + lw[nz])))
    out = HumSolution(phi, gamma, z, h, w, comps, data_norm, weighted_data, rel, dropped,
                      extras={"F": src.F, "G": src.G, "feasibility": feas,
                              "kept_steps": gram.kept_steps})
    if verify:
        hist = solve_linearized(coeffs, SourcePair(src.F + w, src.G), z0, h0)
        out.terminal = (float(np.sqrt(xg.dx * np.sum(hist.z[-1] ** 2))), float(abs(hist.h[-1])))
        out.forward_gap = float(np.abs(hist.z - z).max() + np.abs(hist.h - h).max())
    return out


def adjoint_images(gram: GramOperator, phi, gamma):
    """(L1*, L2*) of a multiplier pair: the discrete transpose applied to it."""
    lay = gram.layout
    coeffs = gram.space.coeffs
    xg, tg = coeffs.xgrid, coeffs.tgrid
    mu = gram.space.pack(phi, gamma)
    E = _constraint_matrix(coeffs, lay)
    v = E.T @ mu
    m, ni = tg.m, lay.ni
    L1 = np.zeros((m + 1, xg.n))
    L1[1:m, 1:-1] = v[:lay.h0].reshape(m - 1, ni) / (xg.dx * tg.dt)
    L2 = np.zeros(m + 1)
    L2[1:m] = v[lay.h0:lay.w0] / tg.dt
    return L1, L2


@dataclass
class EReport:
    z_weighted_h12: float
    h_weighted_h1: float
    terminal_weighted: float
    source_identity_residual: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.z_weighted_h12) and np.isfinite(self.h_weighted_h1))


def verify_E_membership(sol: HumSolution, table: WeightTable, coeffs: CoefficientSet) -> EReport:
    """rho4-weighted norms of (z, h) and the source identity of z~ = rho4 z.

    z~ obeys the same step equations with source rho4 (f1 + w) + qbar rho4' z and
    h~ with rho4 f2 + rho4' h, rho4' taken from the closed form.
    """
    xg, tg = table.xgrid, table.tgrid
    dx, dt, m = xg.dx, tg.dt, tg.m
    lr4 = np.full(m + 1, -np.inf)
    lr4[:m] = table.log_rho[4, :m]
    zt = _times_exp(sol.z, lr4[:, None])
    ht = _times_exp(sol.h, lr4)
    dzt = np.diff(zt, axis=0) / dt
    dzz = (zt[:, 2:] - 2 * zt[:, 1:-1] + zt[:, :-2]) / dx**2
    zx = np.diff(zt, axis=1) / dx
    zn = np.sqrt(dx * dt * (np.sum(dzt**2) + np.sum(dzz**2) + np.sum(zt**2)) + dx * dt * np.sum(zx**2))
    hn = np.sqrt(dt * (np.sum(np.diff(ht) ** 2) / dt**2 + np.sum(ht**2)))
    terminal = float(np.sqrt(dx * np.sum(zt[m - 1] ** 2)) + abs(ht[m - 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        lr4t = np.log(np.abs(table.rho4_dt_closed_form())) + 0 * lr4
    sg = np.sign(np.nan_to_num(table.rho4_dt_closed_form()))
    src_resid = _tilde_residual(sol, coeffs, lr4, np.where(np.isfinite(lr4t), lr4t, -np.inf), sg)
    return EReport(float(zn), float(hn), terminal, src_resid)


def _times_exp(v, logw):
    """v * exp(logw) without overflow where v vanishes."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        lv = np.log(np.abs(v))
    return np.sign(v) * np.exp(np.where(v != 0, lv + logw, -np.inf))


def _tilde_residual(sol, coeffs, lr4, lr4t, sg) -> float:
    xg, tg = coeffs.xgrid, coeffs.tgrid
    dx, dt, m = xg.dx, tg.dt, tg.m
    I = slice(1, -1)
    c = interior_trace_row(xg)
    F = sol.extras.get("F", np.zeros_like(sol.z))
    num, den = 0.0, 0.0
    for k in range(1, m):
        zt, zp = _times_exp(sol.z[k], lr4[k]), _times_exp(sol.z[k - 1], lr4[k - 1])
        tau = c @ zt[I]
        lhs = (coeffs.qbar[k] * (zt[I] - zp[I]) / dt
               - (zt[2:] - 2 * zt[I] + zt[:-2]) / dx**2
               + coeffs.a[k, I] * (zt[2:] - zt[:-2]) / (2 * dx) + coeffs.b[k, I] * zt[I]
               + coeffs.N[k, I] * tau + coeffs.R[k, I] * _times_exp(sol.h[k], lr4[k]))
        # z~ equation: the time difference of rho4 z splits into rho4 z_t + rho4' z
        rhs = _times_exp(F[k, I] + sol.w[k, I], lr4[k]) \
            + coeffs.qbar[k] * sg[k] * _times_exp(sol.z[k - 1, I], lr4t[k])
        num += np.sum((lhs - rhs) ** 2)
        den += np.sum(rhs**2) + np.sum(lhs**2)
    return float(np.sqrt(num / den)) if den > 0 else 0.0
