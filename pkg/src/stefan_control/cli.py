"""Batch front end: ``stefan-control <subcommand> [--config PATH] [--out DIR] [--seed N] [--override k=v]``.

Every run writes a directory ``<out>/<subcommand>-<timestamp>-<hash>`` with
the resolved config snapshot, CSV series and ``summary.json``. File
contents depend only on the config and seed.

Exit codes: 0 success, 1 completed with failing checks, 2 config error,
3 solver error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import experiments as ex
from .adjoint import compatible_terminal, solve_adjoint, stefan_adjoint_coefficients
from .errors import NonConvergenceError, StefanControlError
from .hum import solve_null_control, verify_E_membership
from .linear_system import SourcePair, discrete_energy_report, solve_linearized, stefan_coefficients
from .numerics import SpaceGrid, TimeGrid, trapezoid
from .stefan_forward import (
    NeumannSolution,
    extend_reference,
    make_reference_trajectory,
    neumann_k,
    solve_cylinder_stefan,
)
from .weights import check_weight_bounds, tabulate_weights

log = logging.getLogger("stefan_control")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SOLVER, EXIT_NONCONV = 0, 1, 2, 3, 4


@dataclass
class Grids:
    n: int = 21
    m: int = 200
    T: float = 2.0


@dataclass
class Physics:
    beta: float = 1.0
    ell_star: float = 0.1
    V: float = 1.0
    t0: float = 0.5


@dataclass
class Carleman:
    m: float = 4.5
    lam: float = 1.0
    s: float | None = None
    omega: list = field(default_factory=lambda: [-0.7, -0.3])
    omega0: list = field(default_factory=lambda: [-0.6, -0.4])
    H: float = 0.1
    eta_min: float = 0.1


@dataclass
class Control:
    delta: float = 1e-2
    tol: float = 1e-10
    gap_tol: float = 1e-6
    k_max: int = 30
    regularization: float = 1e-15
    feasibility_tol: float = 1e-4
    log_range: float = 30.0


@dataclass
class Modes:
    compat: float = 1.0
    pairing: str = "matched"
    adjoint_form: str = "nondivergence"
    reference: str = "neumann"


@dataclass
class Studies:
    draws: int = 20
    sweep_datasets: int = 10
    workers: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    grids: Grids = field(default_factory=Grids)
    physics: Physics = field(default_factory=Physics)
    carleman: Carleman = field(default_factory=Carleman)
    control: Control = field(default_factory=Control)
    modes: Modes = field(default_factory=Modes)
    studies: Studies = field(default_factory=Studies)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class ConfigError(Exception):
    pass


def _schema() -> dict:
    return json.loads(resources.files("stefan_control").joinpath("config_schema.json").read_text())


def _merge(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"override {key}: unknown section {p!r}")
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path=None, overrides=(), seed=None) -> RunConfig:
    data = RunConfig().to_dict()
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        data = _merge(data, user)
    for item in overrides:
        _apply_override(data, item)
    if seed is not None:
        data["seed"] = seed
    errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(data), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'.'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("; ".join(msgs))
    cfg = RunConfig(seed=data["seed"], grids=Grids(**data["grids"]), physics=Physics(**data["physics"]),
                    carleman=Carleman(**data["carleman"]), control=Control(**data["control"]),
                    modes=Modes(**data["modes"]), studies=Studies(**data["studies"]))
    _validate_model(cfg)
    return cfg


def _validate_model(cfg: RunConfig) -> None:
    """Re-run the solver-level parameter checks so bad configs fail at load."""
    try:
        p, eta = ex.carleman_params(asdict(cfg.carleman))
        p.resolved(eta, cfg.grids.T)
        k = neumann_k(cfg.physics.V, cfg.physics.beta)
    except StefanControlError as exc:
        raise ConfigError(f"carleman/physics: {exc}") from exc
    ell0 = 2 * k * np.sqrt(cfg.physics.t0)
    if cfg.physics.ell_star >= ell0:
        raise ConfigError(f"physics.ell_star: {cfg.physics.ell_star} must lie below the initial front {ell0:.6g}")


# output helpers

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def run_directory(out: Path, sub: str, cfg: RunConfig) -> Path:
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
    base = Path(out) / f"{sub}-{stamp}-{cfg.hash[:8]}"
    d, i = base, 1
    while d.exists():
        i += 1
        d = base.with_name(f"{base.name}-{i}")
    d.mkdir(parents=True)
    return d


def _checks_payload(checks) -> list:
    return [{"criterion": c.criterion, "name": c.name, "value": c.value, "threshold": c.threshold,
             "relation": c.relation, "passed": c.passed} for c in checks]


def _write_checks(d: Path, checks) -> None:
    write_csv(d / "checks.csv", ["criterion", "name", "value", "threshold", "relation", "passed"],
              [[c.criterion, c.name, c.value, c.threshold, c.relation, c.passed] for c in checks])


# subcommands; each returns (results dict, checks list) and writes its CSVs into d

def _reference(cfg: RunConfig, n=None, m=None, T=None):
    g = cfg.grids
    rp = ex.reference_params(asdict(cfg.physics), cfg.modes.reference)
    return make_reference_trajectory(rp, SpaceGrid(0, 1, n or g.n), TimeGrid(T or g.T, m or g.m))


def cmd_forward(cfg: RunConfig, d: Path):
    ref = _reference(cfg)
    ph = cfg.physics
    hist = solve_cylinder_stefan(ref.p[0], ref.q[0], ref.v, ref.xgrid, ref.tgrid, ph.beta, ref.q_star)
    t = ref.tgrid.t
    write_csv(d / "front.csv", ["t", "ell", "ell_reference", "trace"],
              zip(t, np.sqrt(hist.q), ref.ell, hist.trace))
    write_csv(d / "profile_T.csv", ["y", "p", "p_reference"], zip(ref.xgrid.x, hist.p[-1], ref.p[-1]))
    res = {"p_error_linf": float(np.abs(hist.p - ref.p).max()),
           "ell_error_linf": float(np.abs(np.sqrt(hist.q) - ref.ell).max()),
           "picard_max": hist.picard_max, "ell_T": float(np.sqrt(hist.q[-1]))}
    checks = []
    if cfg.modes.reference == "neumann":
        st = ex.forward_study(asdict(ph))
        write_csv(d / "refinement.csv", ["n", "m", "error"], [[*lv, e] for lv, e in zip(st.levels, st.errors)])
        res["refinement"] = asdict(st)
        checks = st.checks()
    return res, checks


def _smooth_random_sources(rng, xg, tg, taper):
    X, Tm = np.meshgrid(xg.x, tg.t)
    b = rng.normal(size=4)
    F = (b[0] * np.sin(np.pi * X) + b[1] * np.cos(np.pi * X / 2) * Tm) * taper
    G = b[2] * np.cos(2 * tg.t) + b[3]
    return F, G


def cmd_linear(cfg: RunConfig, d: Path):
    ext = extend_reference(_reference(cfg))
    c = stefan_coefficients(ext)
    xg, tg = c.xgrid, c.tgrid
    rng = ex.rng_for(cfg.seed, 10)
    taper = 1 - xg.x**2
    F, G = _smooth_random_sources(rng, xg, tg, taper)
    z0 = taper * (rng.normal() + rng.normal() * xg.x)
    h0 = float(rng.normal())
    hist = solve_linearized(c, SourcePair(F, G), z0, h0)
    rep = discrete_energy_report(hist)
    zl2 = [float(np.sqrt(trapezoid(z**2, xg))) for z in hist.z]
    write_csv(d / "linear.csv", ["t", "h", "trace", "z_l2"], zip(tg.t, hist.h, hist.trace, zl2))
    return {"energy": asdict(rep), "z_T_l2": zl2[-1], "h_T": float(hist.h[-1])}, []


def cmd_adjoint(cfg: RunConfig, d: Path):
    ext = extend_reference(_reference(cfg))
    c = stefan_adjoint_coefficients(ext)
    xg, tg = c.xgrid, c.tgrid
    rng = ex.rng_for(cfg.seed, 11)
    f, g = _smooth_random_sources(rng, xg, tg, 1 - xg.x**2)
    y = (xg.interior + 1) / 2
    gamma_T = float(rng.normal())
    phi_T = compatible_terminal(c, rng.normal() * np.sin(np.pi * y) + rng.normal() * np.sin(2 * np.pi * y),
                                gamma_T, cfg.modes.compat)
    st = solve_adjoint(c, f, g, phi_T, gamma_T, form=cfg.modes.adjoint_form, compat=cfg.modes.compat)
    l2 = [float(np.sqrt(trapezoid(p**2, xg))) for p in st.phi]
    write_csv(d / "adjoint.csv", ["t", "gamma", "phi_l2", "phi_right"], zip(tg.t, st.gamma, l2, st.phi[:, -1]))
    return {"boundary_residual": st.boundary_residual(c, cfg.modes.compat), "phi_0_l2": l2[0],
            "gamma_0": float(st.gamma[0]), "form": cfg.modes.adjoint_form}, []


def cmd_duality(cfg: RunConfig, d: Path):
    st = ex.duality_study(ex.rng_for(cfg.seed, 2), cfg.studies.draws)
    write_csv(d / "duality_matched.csv", ["draw", "n", "m", "gap"],
              [[i, *sz, g] for i, (sz, g) in enumerate(zip(st.sizes, st.matched_gaps))])
    write_csv(d / "duality_continuous.csv", ["n", "m", "gap"],
              [[*lv, g] for lv, g in zip(st.continuous_levels, st.continuous_gaps)])
    checks = st.checks()
    if cfg.modes.pairing == "matched":
        checks = checks[:1]
    return {"pairing": cfg.modes.pairing, **asdict(st)}, checks


def _carleman_levels(cfg: RunConfig):
    N, m = 2 * cfg.grids.n - 1, cfg.grids.m
    return (N, m), (2 * N - 1, 4 * m)


def cmd_carleman_sweep(cfg: RunConfig, d: Path):
    st = ex.carleman_study(cfg.seed, _carleman_levels(cfg), cfg.grids.T, cfg.studies.sweep_datasets,
                           asdict(cfg.carleman), cfg.studies.workers)
    for (n, m), sw in zip(st.levels, st.sweeps):
        write_csv(d / f"sweep_n{n}_m{m}.csv", ["s", "lambda", "ratio", "log_lhs", "log_rhs"],
                  [[r.s, r.lam, r.ratio, r.log_lhs, r.log_rhs] for r in sw.rows])
    return {"levels": st.levels, "C0": st.C0, "C0_change": st.C0_change,
            "decomposition_gap": st.decomposition_gap}, st.checks()


def cmd_weights(cfg: RunConfig, d: Path):
    p, eta = ex.carleman_params(asdict(cfg.carleman))
    xg, tg = SpaceGrid(-1, 1, 2 * cfg.grids.n - 1), TimeGrid(cfg.grids.T, cfg.grids.m)
    table = tabulate_weights(eta, p, xg, tg)
    table.to_csv(d / "weights.csv")
    rep = check_weight_bounds(table)
    st = ex.weight_study(xg.n, tg.m, tg.T, carleman=asdict(cfg.carleman))
    checks = st.checks() + [ex.Check(7, "rho4_squared_gap", rep.rho4_squared_gap, 1e-12, "<=")]
    return {"s": table.s, "lambda": table.lam, "bounds": asdict(rep), "study": asdict(st)}, checks


def cmd_control_linear(cfg: RunConfig, d: Path):
    g = cfg.grids
    c, table = ex.stefan_problem(g.n, g.m, g.T, asdict(cfg.physics), asdict(cfg.carleman), cfg.modes.reference)
    src, z0, h0 = ex.random_null_control_data(c, table, ex.rng_for(cfg.seed, 12))
    sol = solve_null_control(c, table, src, z0, h0, regularization=0.0)
    sol.to_csv(d / "null_control.csv", c.xgrid, c.tgrid)
    rep = verify_E_membership(sol, table, c)
    rel = max(sol.terminal) / sol.data_norm if sol.data_norm > 0 else 0.0
    res = {"terminal_z": sol.terminal[0], "terminal_h": sol.terminal[1], "data_norm": sol.data_norm,
           "terminal_over_data": rel, "forward_gap": sol.forward_gap, "weighted_ratio": sol.weighted_ratio,
           "feasibility": sol.extras.get("feasibility"), "kept_steps": sol.extras.get("kept_steps"),
           "e_norm_components": sol.e_norm_components, "e_membership": asdict(rep)}
    return res, [ex.Check(3, "terminal_over_data", rel, 1e-8, "<=")]


def cmd_control_nonlinear(cfg: RunConfig, d: Path):
    g = cfg.grids
    st = ex.nonlinear_study(cfg.control.delta, g.n, g.m, g.T, asdict(cfg.physics), asdict(cfg.carleman),
                            asdict(cfg.control), cfg.modes.reference)
    st.result.write_bundle(d)
    tol = cfg.control.gap_tol
    checks = [ex.Check(5, "outer_iterations", st.iterations, cfg.control.k_max, "<="),
              ex.Check(5, "front_gap", st.ell_gap, tol, "<="),
              ex.Check(5, "temperature_gap", st.u_gap, tol, "<="),
              ex.Check(5, "min_v", st.min_v, -1e-12, ">=")]
    res = {k: v for k, v in asdict(st).items() if k != "result"}
    return res, checks


def cmd_verify_all(cfg: RunConfig, d: Path):
    ph, ca = asdict(cfg.physics), asdict(cfg.carleman)
    studies = {
        "forward": ex.forward_study(ph),
        "duality": ex.duality_study(ex.rng_for(cfg.seed, 2), cfg.studies.draws),
        "null_control": ex.hum_study(cfg.seed, cfg.studies.draws, physics=ph, carleman=ca),
        "carleman": ex.carleman_study(cfg.seed, datasets=cfg.studies.sweep_datasets, carleman=ca,
                                      workers=cfg.studies.workers),
        "nonlinear": ex.nonlinear_study(cfg.control.delta, physics=ph, carleman=ca, control=asdict(cfg.control)),
        "remainder": ex.deviation_study(physics=ph),
        "weights": ex.weight_study(carleman=ca),
    }
    checks = [c for st in studies.values() for c in st.checks()]
    res = {}
    for name, st in studies.items():
        data = asdict(st)
        data.pop("result", None)
        data.pop("sweeps", None)
        res[name] = data
    return res, checks


COMMANDS = {
    "forward": cmd_forward,
    "linear": cmd_linear,
    "adjoint": cmd_adjoint,
    "duality": cmd_duality,
    "carleman-sweep": cmd_carleman_sweep,
    "weights": cmd_weights,
    "control-linear": cmd_control_linear,
    "control-nonlinear": cmd_control_nonlinear,
    "verify-all": cmd_verify_all,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stefan-control", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML run configuration")
    ap.add_argument("--out", type=Path, default=Path("runs"), help="parent directory for run bundles")
    ap.add_argument("--seed", type=int, help="seed for random data (overrides the config)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="dotted override, e.g. control.delta=0.005 (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, cfg: RunConfig, out: Path) -> tuple[int, Path]:
    d = run_directory(out, command, cfg)
    (d / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    summary = {"command": command, "config_hash": cfg.hash, "seed": cfg.seed}
    try:
        results, checks = COMMANDS[command](cfg, d)
    except NonConvergenceError as exc:
        summary.update(status="non-convergence", error=str(exc), context=exc.context)
        code = EXIT_NONCONV
    except StefanControlError as exc:
        summary.update(status="solver-error", error=f"{type(exc).__name__}: {exc}", context=exc.context)
        code = EXIT_SOLVER
    else:
        if checks:
            _write_checks(d, checks)
        ok = all(c.passed for c in checks)
        summary.update(status="ok" if ok else "checks-failed", results=results, checks=_checks_payload(checks))
        code = EXIT_OK if ok else EXIT_CHECKS
    (d / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    return code, d


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, d = run(args.command, cfg, args.out)
    summary = json.loads((d / "summary.json").read_text())
    for c in summary.get("checks", []):
        log.info("[%s] %-28s %-12.4g %s %g", "PASS" if c["passed"] else "FAIL", c["name"],
                 float(c["value"]), c["relation"], float(c["threshold"]))
    if "error" in summary:
        log.error("%s: %s", summary["status"], summary["error"])
    log.info("%s -> %s (exit %d)", args.command, d, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
