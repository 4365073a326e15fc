"""Numerical studies behind the acceptance checks.

Each study returns a plain dataclass of measured numbers; ``checks()``
turns it into pass/fail rows against fixed thresholds. The CLI, the
acceptance tests and the scripts all go through these functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import transposition_check
from .carleman_verify import carleman_sweep, decomposition_identity, demo_coefficients, random_basic_datasets
from .hum import assemble_gram, solve_null_control, verify_E_membership
from .linear_system import CoefficientSet, SourcePair, stefan_coefficients
from .nonlinear_control import (
    ControlParams,
    check_positivity,
    control_to_trajectory,
    perturbed_initial_state,
    quadratic_deviation_study,
    verify_targets,
)
from .numerics import SpaceGrid, TimeGrid
from .stefan_forward import (
    NeumannSolution,
    ReferenceParams,
    discretize_reference,
    extend_reference,
    make_reference_trajectory,
    solve_cylinder_stefan,
)
from .weights import CarlemanParams, build_eta, check_weight_bounds, positivity_margin, tabulate_weights


@dataclass(frozen=True)
class Check:
    criterion: int
    name: str
    value: float
    threshold: float
    relation: str      # "<=", ">=", "<", ">"

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if not np.isfinite(v):
            return False
        return {"<=": v <= t, ">=": v >= t, "<": v < t, ">": v > t}[self.relation]


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def carleman_params(cfg: dict | None = None) -> tuple[CarlemanParams, object]:
    cfg = cfg or {}
    p = CarlemanParams(m=cfg.get("m", 4.5), lam=cfg.get("lam", 1.0), s=cfg.get("s"),
                       omega=tuple(cfg.get("omega", (-0.7, -0.3))), omega0=tuple(cfg.get("omega0", (-0.6, -0.4))))
    eta = build_eta(p.omega0, H=cfg.get("H", 0.1), eta_min=cfg.get("eta_min", 0.1))
    return p, eta


def reference_params(physics: dict | None = None, kind: str = "neumann") -> ReferenceParams:
    ph = physics or {}
    return ReferenceParams(kind=kind, V=ph.get("V", 1.0), beta=ph.get("beta", 1.0), t0=ph.get("t0", 0.5),
                           ell_star=ph.get("ell_star", 0.1))


# 1. forward accuracy

@dataclass
class ForwardStudy:
    levels: list
    errors: list
    dx_orders: list
    dt_orders: list
    check_level: tuple
    check_error: float

    def checks(self):
        return [Check(1, "neumann_dx_order_min", min(self.dx_orders), 1.8, ">="),
                Check(1, "neumann_dt_order_min", min(self.dt_orders), 0.9, ">="),
                Check(1, f"neumann_error_n{self.check_level[0]}_m{self.check_level[1]}", self.check_error, 5e-4, "<=")]


def neumann_error(n: int, m: int, T: float = 1.0, physics: dict | None = None) -> float:
    """L-infinity error of the cylinder profile plus the front against the similarity solution."""
    rp = reference_params(physics)
    xg, tg = SpaceGrid(0, 1, n), TimeGrid(T, m)
    ref = make_reference_trajectory(rp, xg, tg)
    hist = solve_cylinder_stefan(ref.p[0], ref.q[0], rp.V, xg, tg, rp.beta, ref.q_star)
    return float(np.abs(hist.p - ref.p).max() + np.abs(np.sqrt(hist.q) - np.sqrt(ref.q)).max())


def forward_study(physics=None, levels=((26, 50), (51, 200), (101, 800)), T: float = 1.0,
                  check_level=(201, 2000)) -> ForwardStudy:
    # parabolic refinement: dx halves while dt quarters
    errs = [neumann_error(n, m, T, physics) for n, m in levels]
    dx = [1 / (n - 1) for n, _ in levels]
    dt = [T / m for _, m in levels]
    dxo = [float(np.log(errs[i] / errs[i + 1]) / np.log(dx[i] / dx[i + 1])) for i in range(len(levels) - 1)]
    dto = [float(np.log(errs[i] / errs[i + 1]) / np.log(dt[i] / dt[i + 1])) for i in range(len(levels) - 1)]
    return ForwardStudy([list(lv) for lv in levels], errs, dxo, dto, tuple(check_level),
                        neumann_error(*check_level, T, physics))


# 2. duality

def smooth_coefficients(n: int, m: int, T: float = 0.5) -> CoefficientSet:
    xg, tg = SpaceGrid(-1, 1, n), TimeGrid(T, m)
    X, Tm = np.meshgrid(xg.x, tg.t)
    return CoefficientSet(xg, tg, 0.5 * np.cos(X) * (1 + Tm), 0.2 * X, 0.4 * X * np.exp(-Tm),
                          0.5 * np.sin(X) + Tm, 1 + 0.2 * tg.t)


def random_pairing_data(rng: np.random.Generator, c: CoefficientSet):
    n, m = c.xgrid.n, c.tgrid.m
    taper = 1 - c.xgrid.x**2
    f = rng.normal(size=(m + 1, n)) * taper
    F = rng.normal(size=(m + 1, n)) * taper
    z0 = taper * rng.normal(size=n)
    return f, rng.normal(size=m + 1), F, rng.normal(size=m + 1), z0, float(rng.normal())


def _smooth_pairing_data(c: CoefficientSet):
    X, Tm = np.meshgrid(c.xgrid.x, c.tgrid.t)
    return (np.sin(np.pi * X) * np.cos(Tm) * (1 + X), np.cos(3 * c.tgrid.t),
            np.cos(np.pi * X / 2) * (1 + Tm**2), np.sin(c.tgrid.t) + 0.5,
            (1 - c.xgrid.x**2) * (1 + c.xgrid.x), 0.7)


@dataclass
class DualityStudy:
    matched_gaps: list
    sizes: list
    continuous_levels: list
    continuous_gaps: list
    continuous_slopes: list

    def checks(self):
        return [Check(2, "matched_gap_max", max(self.matched_gaps), 1e-9, "<="),
                Check(2, "continuous_slope_min", min(self.continuous_slopes), 1.8, ">=")]


def duality_study(rng: np.random.Generator, count: int = 20,
                  levels=((21, 25), (41, 100), (81, 400))) -> DualityStudy:
    gaps, sizes = [], []
    for _ in range(count):
        n, m = int(rng.integers(11, 41)), int(rng.integers(5, 40))
        c = smooth_coefficients(n, m)
        gaps.append(transposition_check(c, *random_pairing_data(rng, c), mode="matched").gap)
        sizes.append([n, m])
    cg = []
    for n, m in levels:
        c = smooth_coefficients(n, m)
        cg.append(transposition_check(c, *_smooth_pairing_data(c), mode="continuous").gap)
    slopes = [float(np.log2(cg[i] / cg[i + 1])) for i in range(len(cg) - 1)]
    return DualityStudy(gaps, sizes, [list(lv) for lv in levels], cg, slopes)


# 3. linear null control

def stefan_problem(n0: int, m: int, T: float, physics=None, carleman=None, kind: str = "neumann"):
    """Extended Stefan coefficients on (-1, 1) and the matching weight table."""
    ref = make_reference_trajectory(reference_params(physics, kind), SpaceGrid(0, 1, n0), TimeGrid(T, m))
    c = stefan_coefficients(extend_reference(discretize_reference(ref)))
    p, eta = carleman_params(carleman)
    return c, tabulate_weights(eta, p, c.xgrid, c.tgrid)


def random_null_control_data(c: CoefficientSet, table, rng: np.random.Generator):
    """Smooth data whose sources decay like 1/rho3, so their weighted norm is finite."""
    xg, tg = c.xgrid, c.tgrid
    m = tg.m
    y = (xg.x + 1) / 2
    z0 = sum(rng.normal() * np.sin((j + 1) * np.pi * y) / (j + 1) for j in range(4))
    z0[[0, -1]] = 0.0
    inv3 = np.zeros(m + 1)
    inv3[:m] = np.exp(-table.log_rho[3, :m])
    X, _ = np.meshgrid(xg.x, tg.t)
    F = inv3[:, None] * (rng.normal() * np.sin(np.pi * X) + rng.normal() * (1 - X**2))
    F[:, [0, -1]] = 0.0
    G = inv3 * rng.normal()
    return SourcePair(F, G), z0, float(rng.normal())


@dataclass
class HumStudy:
    terminal_rel: list
    forward_gap_rel: list
    weighted_ratios: list
    levels: list

    @property
    def ratio_change(self) -> float:
        a, b = self.weighted_ratios
        return float(max(a / b, b / a))

    def checks(self):
        return [Check(3, "terminal_over_data_max", max(self.terminal_rel), 1e-8, "<="),
                Check(3, "weighted_ratio_change", self.ratio_change, 2.0, "<=")]


def hum_study(rng_seed: int, count: int = 20, levels=((21, 100), (41, 400)), T: float = 1.0,
              physics=None, carleman=None) -> HumStudy:
    c, table = stefan_problem(*levels[0], T, physics, carleman)
    gram = assemble_gram(c, table)
    rng = rng_for(rng_seed, 3)
    term, fgap = [], []
    for _ in range(count):
        src, z0, h0 = random_null_control_data(c, table, rng)
        sol = solve_null_control(c, table, src, z0, h0, gram=gram)
        term.append(max(sol.terminal) / sol.data_norm)
        fgap.append(sol.forward_gap / sol.data_norm)
    ratios = []
    for n0, m in levels:
        c, table = stefan_problem(n0, m, T, physics, carleman)
        src, z0, h0 = random_null_control_data(c, table, rng_for(rng_seed, 33))
        sol = solve_null_control(c, table, src, z0, h0)
        if not verify_E_membership(sol, table, c).finite:
            ratios.append(np.inf)
        else:
            ratios.append(sol.weighted_ratio)
    return HumStudy(term, fgap, ratios, [list(lv) for lv in levels])


# 4. Carleman inequality

@dataclass
class CarlemanStudy:
    levels: list
    C0: list
    sweeps: list = field(repr=False)
    decomposition_gap: float = np.nan

    @property
    def C0_change(self) -> float:
        a, b = self.C0
        return float(max(a / b, b / a))

    def checks(self):
        return [Check(4, "sweep_C0_max", max(self.C0), np.inf, "<"),
                Check(4, "sweep_C0_change", self.C0_change, 2.0, "<="),
                Check(4, "decomposition_gap_max", self.decomposition_gap, 1e-12, "<=")]


def carleman_study(rng_seed: int, levels=((41, 200), (81, 800)), T: float = 1.0, datasets: int = 10,
                   carleman=None, workers: int = 1) -> CarlemanStudy:
    p, eta = carleman_params(carleman)
    C0, sweeps, gap = [], [], 0.0
    for i, (n, m) in enumerate(levels):
        xg, tg = SpaceGrid(-1, 1, n), TimeGrid(T, m)
        c = demo_coefficients(xg, tg)
        data = random_basic_datasets(c, rng_for(rng_seed, 4), datasets)
        res = carleman_sweep(data, eta, p, xg, tg, workers=workers)
        C0.append(res.C0)
        sweeps.append(res)
        if i == 0:
            table = tabulate_weights(eta, p, xg, tg)
            gap = max(decomposition_identity(st, f, table, c.d).gap for st, f, _ in data)
    return CarlemanStudy([list(lv) for lv in levels], C0, sweeps, float(gap))


# 5. nonlinear control

@dataclass
class NonlinearStudy:
    delta: float
    iterations: int
    converged: bool
    ell_gap: float
    u_gap: float
    min_v: float
    analytic_ell_gap: float
    history: list
    result: object = field(repr=False, default=None)

    def checks(self):
        return [Check(5, "outer_iterations", self.iterations if self.converged else np.inf, 20, "<="),
                Check(5, "front_gap", self.ell_gap, 1e-6, "<="),
                Check(5, "temperature_gap", self.u_gap, 1e-6, "<="),
                Check(5, "min_v", self.min_v, -1e-12, ">=")]


def nonlinear_study(delta: float = 1e-2, n0: int = 21, m: int = 200, T: float = 2.0, physics=None,
                    carleman=None, control: dict | None = None, kind: str = "neumann") -> NonlinearStudy:
    ctl = control or {}
    p, _ = carleman_params(carleman)
    cc = carleman or {}
    params = ControlParams(carleman=p, eta_min=cc.get("eta_min", 0.1), H=cc.get("H", 0.1),
                           tol=ctl.get("tol", 1e-10), k_max=ctl.get("k_max", 30),
                           log_range=ctl.get("log_range", 30.0),
                           regularization=ctl.get("regularization", 1e-15),
                           feasibility_tol=ctl.get("feasibility_tol", 1e-4))
    rp = reference_params(physics, kind)
    ref = discretize_reference(make_reference_trajectory(rp, SpaceGrid(0, 1, n0), TimeGrid(T, m)))
    res = control_to_trajectory(perturbed_initial_state(ref, delta), ref, params)
    oracle = NeumannSolution(rp.V, rp.beta, rp.t0) if kind == "neumann" else None
    rep = verify_targets(res, neumann=oracle)
    pos = check_positivity(res)
    return NonlinearStudy(delta, res.iterations, res.converged, rep.ell_gap, rep.u_gap, pos.min_v,
                          rep.analytic_ell_gap, list(res.residual_history), res)


# 6. quadratic remainder

@dataclass
class DeviationResult:
    eps: list
    deviations: list
    slopes: list

    def checks(self):
        return [Check(6, "deviation_slope_min", min(self.slopes), 1.8, ">="),
                Check(6, "deviation_slope_max", max(self.slopes), 2.2, "<=")]


def deviation_study(n0: int = 21, m: int = 200, T: float = 2.0, physics=None,
                    eps=(1e-1, 1e-2, 1e-3)) -> DeviationResult:
    ref = make_reference_trajectory(reference_params(physics), SpaceGrid(0, 1, n0), TimeGrid(T, m))
    st = quadratic_deviation_study(ref, eps)
    return DeviationResult(list(st.eps), list(st.deviations), list(st.slopes))


# 7. weight bounds

@dataclass
class WeightStudy:
    """Suprema are stored as log10: at large lambda they exceed the double range while staying finite."""

    lams: list
    log10_sup_rho4_over_rho3: list
    log10_sup_rho4_over_rho2: list
    log10_sup_rho4dt_over_rho0: list
    margins: list
    rho4_squared_gap: float

    def checks(self):
        sups = self.log10_sup_rho4_over_rho3 + self.log10_sup_rho4_over_rho2 + self.log10_sup_rho4dt_over_rho0
        return [Check(7, "log10_weight_sup_max", max(sups), np.inf, "<"),
                Check(7, "positivity_margin_min", min(self.margins), 0.0, ">")]


def weight_study(n: int = 41, m: int = 200, T: float = 1.0, lam_factors=(1, 2, 4), carleman=None) -> WeightStudy:
    p, eta = carleman_params(carleman)
    lam0 = p.resolved(eta, T).lam0
    xg, tg = SpaceGrid(-1, 1, n), TimeGrid(T, m)
    out = WeightStudy([], [], [], [], [], 0.0)
    ln10 = np.log(10.0)
    for f in lam_factors:
        lam = lam0 * f
        table = tabulate_weights(eta, CarlemanParams(p.m, lam, p.s, p.omega, p.omega0, lam0, p.s0), xg, tg)
        k = table.interior_steps
        L = table.log_rho
        out.lams.append(lam)
        out.log10_sup_rho4_over_rho3.append(float(np.max(L[4, k] - L[3, k]) / ln10))
        out.log10_sup_rho4_over_rho2.append(float(np.max(L[4, k] - L[2, k]) / ln10))
        out.log10_sup_rho4dt_over_rho0.append(float(np.nanmax(table.log_rho4_dt_over_rho0()[k]) / ln10))
        out.margins.append(positivity_margin(eta, p.m, lam))
        out.rho4_squared_gap = max(out.rho4_squared_gap, check_weight_bounds(table).rho4_squared_gap)
    return out
