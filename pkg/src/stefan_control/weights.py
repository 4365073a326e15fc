"""Carleman weight functions.

Weights are tabulated in log form (``log_*`` arrays) because ``e^{s zeta}``
spans hundreds of orders of magnitude across the time grid.  Exponentiated
views are available but may overflow to ``inf`` near ``t = T``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import GeometryError, ParameterError
from .numerics import SpaceGrid, TimeGrid

Interval = Tuple[float, float]


def _cubic_rise(s):
    return 1.0 - (1.0 - s) ** 3


@dataclass(frozen=True)
class EtaFunction:
    """Piecewise cubic profile: rise on [-1, c1], plateau on [c1, c2], fall on [c2, 1]."""

    c1: float
    c2: float
    eta_min: float
    H: float

    @property
    def sup_norm(self) -> float:
        return self.eta_min + self.H

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        left = np.clip((x + 1.0) / (self.c1 + 1.0), 0.0, 1.0)
        right = np.clip((1.0 - x) / (1.0 - self.c2), 0.0, 1.0)
        prof = np.where(x <= self.c1, _cubic_rise(left), np.where(x >= self.c2, _cubic_rise(right), 1.0))
        return self.eta_min + self.H * prof

    def dx(self, x):
        x = np.asarray(x, dtype=float)
        L, Rw = self.c1 + 1.0, 1.0 - self.c2
        sl = np.clip((x + 1.0) / L, 0.0, 1.0)
        sr = np.clip((1.0 - x) / Rw, 0.0, 1.0)
        return np.where(x <= self.c1, 3 * self.H / L * (1 - sl) ** 2,
                        np.where(x >= self.c2, -3 * self.H / Rw * (1 - sr) ** 2, 0.0))

    def dxx(self, x):
        x = np.asarray(x, dtype=float)
        L, Rw = self.c1 + 1.0, 1.0 - self.c2
        sl = np.clip((x + 1.0) / L, 0.0, 1.0)
        sr = np.clip((1.0 - x) / Rw, 0.0, 1.0)
        return np.where(x <= self.c1, -6 * self.H / L**2 * (1 - sl),
                        np.where(x >= self.c2, -6 * self.H / Rw**2 * (1 - sr), 0.0))


def build_eta(omega0: Interval, H: float = 0.1, eta_min: float = 0.1, probe: int = 10_001) -> EtaFunction:
    """Build eta with its plateau on the middle half of ``omega0`` and check (P1) on a probe grid."""
    a, b = omega0
    if not -1.0 < a < b < 0.0:
        raise GeometryError(f"omega0 = {omega0} must lie compactly inside (-1, 0)")
    if H <= 0 or eta_min <= 0:
        raise ParameterError(f"need H > 0 and eta_min > 0, got H={H}, eta_min={eta_min}")
    quarter = 0.25 * (b - a)
    eta = EtaFunction(a + quarter, b - quarter, eta_min, H)

    x = np.linspace(-1, 1, probe)
    vals, slope = eta(x), eta.dx(x)
    outside = (x <= a) | (x >= b)
    ok = (np.all(vals > 0) and vals[0] == vals.min() == vals[-1]
          and np.min(np.abs(slope[outside])) > 0)
    if not ok:
        raise GeometryError("eta construction failed the positivity/minimality/slope checks")
    return eta


def lambda_threshold(eta: EtaFunction, m: float) -> float:
    return math.log(2.0) / (eta.sup_norm * (m - 1.0))


@dataclass(frozen=True)
class CarlemanParams:
    m: float = 4.5
    lam: float = 1.0
    s: float | None = None  # None -> s0 * (T + T^2)
    omega: Interval = (-0.7, -0.3)
    omega0: Interval = (-0.6, -0.4)
    lam0: float | None = None  # None -> max(1, ln2 / (|eta|_inf (m - 1)))
    s0: float = 1.0

    def __post_init__(self):
        if not self.m > 1:
            raise ParameterError(f"m must exceed 1, got {self.m}")
        lo, hi = self.omega
        lo0, hi0 = self.omega0
        if not (-1 < lo < lo0 < hi0 < hi < 0):
            raise GeometryError(f"need omega0 {self.omega0} inside omega {self.omega} inside (-1, 0)")

    def resolved(self, eta: EtaFunction, T: float) -> "CarlemanParams":
        """Fill defaults and enforce the lambda/s thresholds (inclusive)."""
        thr = lambda_threshold(eta, self.m)
        lam0 = max(1.0, thr) if self.lam0 is None else self.lam0
        if lam0 < thr * (1 - 1e-12):
            raise ParameterError(f"lambda0 = {lam0} below ln2/(|eta|(m-1)) = {thr}")
        if self.lam < lam0 * (1 - 1e-12):
            raise ParameterError(f"lambda = {self.lam} below lambda0 = {lam0}")
        s_min = self.s0 * (T + T**2)
        s = s_min if self.s is None else self.s
        if s < s_min * (1 - 1e-12):
            raise ParameterError(f"s = {s} below s0 (T + T^2) = {s_min}")
        return CarlemanParams(self.m, self.lam, s, self.omega, self.omega0, lam0, self.s0)


def r_function(t, T):
    t = np.asarray(t, dtype=float)
    return np.where(t <= T / 2, T**2 / 4, t * (T - t))


@dataclass
class WeightTable:
    """Tabulated weights on (space nodes) x (time nodes 0..m).

    Space-time arrays have shape ``(m + 1, n)``.  alpha/xi are nan at t = 0, T;
    zeta/mu (and the rho family) are nan at t = T.
    """

    xgrid: SpaceGrid
    tgrid: TimeGrid
    eta: EtaFunction
    params: CarlemanParams
    A: np.ndarray          # e^{2 lam M} - e^{lam (M + eta)}, per node
    B: np.ndarray          # e^{lam (M + eta)}, per node
    r: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    mu: np.ndarray
    alpha_hat: np.ndarray
    xi_hat: np.ndarray
    zeta_hat: np.ndarray
    mu_hat: np.ndarray
    zeta_star: np.ndarray
    mu_star: np.ndarray
    log_rho: np.ndarray = field(repr=False)  # shape (5, m + 1)

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def lam(self) -> float:
        return self.params.lam

    def rho(self, i: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_rho[i])

    @property
    def interior_steps(self) -> slice:
        return slice(1, self.tgrid.m)

    def omega_mask(self) -> np.ndarray:
        lo, hi = self.params.omega
        x = self.xgrid.x
        return (x > lo) & (x < hi)

    def rho4_time_derivative(self) -> np.ndarray:
        """rho_4' by centered differences (backward at the last interior node); nan at 0, T."""
        L4, dt = self.log_rho[4], self.tgrid.dt
        m = self.tgrid.m
        out = np.full(m + 1, np.nan)
        with np.errstate(over="ignore"):
            out[1:m - 1] = (np.exp(L4[2:m]) - np.exp(L4[:m - 2])) / (2 * dt)
            out[m - 1] = (np.exp(L4[m - 1]) - np.exp(L4[m - 2])) / dt
        return out

    def log_rho4_dt_over_rho0(self) -> np.ndarray:
        """log |rho_4' / rho_0| evaluated without forming rho_4 itself."""
        L4, L0, dt, m = self.log_rho[4], self.log_rho[0], self.tgrid.dt, self.tgrid.m
        out = np.full(m + 1, np.nan)
        k = np.arange(1, m - 1)
        out[k] = _log_abs_diff(L4[k + 1] - L0[k], L4[k - 1] - L0[k]) - np.log(2 * dt)
        out[m - 1] = _log_abs_diff(L4[m - 1] - L0[m - 1], L4[m - 2] - L0[m - 1]) - np.log(dt)
        return out

    def rho4_dt_closed_form(self) -> np.ndarray:
        """rho_4' from differentiating e^{s zeta_hat/2} mu_hat^{-3/4} exactly."""
        t, T, s = self.tgrid.t, self.tgrid.T, self.s
        r = self.r
        r_t = np.where(t <= T / 2, 0.0, T - 2 * t)
        zeta_hat_t = -self.zeta_hat * r_t / r
        mu_hat_t = -self.mu_hat * r_t / r
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return np.exp(s * self.zeta_hat / 2) * (
                0.5 * s * self.mu_hat ** (-0.75) * zeta_hat_t - 0.75 * self.mu_hat ** (-1.75) * mu_hat_t)

    def to_csv(self, path) -> None:
        names = ["t", "x", "alpha", "xi", "zeta", "mu", "rho0", "rho1", "rho2", "rho3", "rho4"]
        rho = [self.rho(i) for i in range(5)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for k, tk in enumerate(self.tgrid.t):
                for i, xi in enumerate(self.xgrid.x):
                    row = [tk, xi, self.alpha[k, i], self.xi[k, i], self.zeta[k, i], self.mu[k, i]]
                    row += [rho[j][k] for j in range(5)]
                    w.writerow([f"{v:.12e}" for v in row])


def _log_abs_diff(a, b):
    """log |e^a - e^b| without forming either exponential."""
    hi, gap = np.maximum(a, b), np.abs(a - b)
    with np.errstate(divide="ignore"):
        return np.maximum(hi + np.log(-np.expm1(-gap)), -690.0)


def tabulate_weights(eta: EtaFunction, params: CarlemanParams, xgrid: SpaceGrid, tgrid: TimeGrid) -> WeightTable:
    T = tgrid.T
    params = params.resolved(eta, T)
    lam, s = params.lam, params.s
    M = params.m * eta.sup_norm
    x, t = xgrid.x, tgrid.t
    e = eta(x)
    A = np.exp(2 * lam * M) - np.exp(lam * (M + e))
    B = np.exp(lam * (M + e))

    tt = t * (T - t)
    tt_int = np.where(tt > 0, tt, np.nan)
    r = r_function(t, T)
    r_int = np.where(r > 0, r, np.nan)
    alpha = A[None, :] / tt_int[:, None]
    xi = B[None, :] / tt_int[:, None]
    zeta = A[None, :] / r_int[:, None]
    mu = B[None, :] / r_int[:, None]

    alpha_hat = A.max() / tt_int
    xi_hat = B.min() / tt_int
    zeta_hat = A.max() / r_int
    mu_hat = B.min() / r_int
    zeta_star = A.min() / r_int
    mu_star = B.max() / r_int

    log_rho = np.empty((5, len(t)))
    log_rho[0] = s * zeta_star
    log_rho[1] = s * zeta_hat
    log_rho[2] = -1.5 * np.log(mu_star) + s * zeta_star
    log_rho[3] = s * zeta_hat - 1.5 * np.log(mu_hat)
    log_rho[4] = 0.5 * log_rho[3]

    return WeightTable(xgrid, tgrid, eta, params, A, B, r, alpha, xi, zeta, mu,
                       alpha_hat, xi_hat, zeta_hat, mu_hat, zeta_star, mu_star, log_rho)


@dataclass
class BoundReport:
    sup_rho4_over_rho3: float
    sup_rho4_over_rho2: float
    sup_rho4dt_over_rho0: float
    positivity_margin: float  # e^{lam m |eta|} - 2 e^{lam |eta|} + e^{lam eta(1)}
    rho4_squared_gap: float
    sup_rho4dt_over_rho0_closed: float = float("nan")

    @property
    def ok(self) -> bool:
        sups = (self.sup_rho4_over_rho3, self.sup_rho4_over_rho2, self.sup_rho4dt_over_rho0)
        return all(np.isfinite(v) for v in sups) and self.positivity_margin > 0


def positivity_margin(eta: EtaFunction, m: float, lam: float) -> float:
    n = eta.sup_norm
    return math.exp(lam * m * n) - 2 * math.exp(lam * n) + math.exp(lam * float(eta(1.0)))


def check_weight_bounds(table: WeightTable) -> BoundReport:
    k = table.interior_steps
    L = table.log_rho
    with np.errstate(over="ignore"):
        r43 = np.exp(np.max(L[4, k] - L[3, k]))
        r42 = np.exp(np.max(L[4, k] - L[2, k]))
        r4t0 = np.exp(np.nanmax(table.log_rho4_dt_over_rho0()[k]))
    # rho4^2 = rho3 checked on the normalized ratio (log domain)
    gap = float(np.max(np.abs(np.expm1(2 * L[4, k] - L[3, k]))))
    return BoundReport(float(r43), float(r42), float(r4t0),
                       positivity_margin(table.eta, table.params.m, table.lam), gap,
                       float(np.max(np.abs(_rho4dt_over_rho0_closed(table)[k]))))


def _rho4dt_over_rho0_closed(table: WeightTable) -> np.ndarray:
    t, T, s = table.tgrid.t, table.tgrid.T, table.s
    r = table.r
    r_t = np.where(t <= T / 2, 0.0, T - 2 * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = (-0.5 * s * table.mu_hat ** (-0.75) * table.zeta_hat
                  + 0.75 * table.mu_hat ** (-0.75)) * r_t / r
        return np.exp(s * table.zeta_hat / 2 - table.log_rho[0]) * factor
