"""Experiment runner behind the command-line interface.

Each experiment evaluates one or more numbered acceptance criteria and
writes a CSV table, a flat ``key = value`` summary and, on request, SVG plots
into the output directory.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
import time
from dataclasses import dataclass, field
from importlib import metadata
from typing import Callable

import numpy as np

from . import fields, hjb, jacobi, problems
from .controls import ControlSignal
from .errors import ConfigError
from .geometry import ManifoldModel, get_model
from .grid import circle_grid, icosahedral_grid, make_grid
from .sde import IntegratorConfig, simulate_batch, time_grid
from .value import brute_force_value, dpp_gap, estimate_J

EXPERIMENTS = (
    "geometry-certify",
    "hessian-certify",
    "sde-convergence",
    "bm-decay",
    "dpp-gap",
    "hjb-benchmark",
    "feedback-gap",
    "regularity",
    "continuous-dependence",
)


def list_problems() -> dict[str, str]:
    """Stable identifiers of the built-in problems with one-line descriptions."""
    return problems.list_problems()


@dataclass
class ExperimentSpec:
    name: str
    problem: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "results"
    svg: bool = False
    label: str = ""

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; known: {', '.join(EXPERIMENTS)}")
        if not self.label:
            self.label = f"{self.name}-{self.problem}".replace(",", "+")


@dataclass
class RunReport:
    spec: ExperimentSpec
    metrics: dict
    criteria: dict
    wall_clock: float
    provenance: dict
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())

    def summary_lines(self) -> list[str]:
        lines = [f"experiment = {self.spec.name}", f"problem = {self.spec.problem}",
                 f"seed = {self.spec.seed}", f"version = {self.provenance['version']}",
                 f"wall_clock = {self.wall_clock:.3f}"]
        lines += [f"param.{k} = {v}" for k, v in sorted(self.spec.params.items())]
        lines += [f"metric.{k} = {_fmt(v)}" for k, v in self.metrics.items()]
        lines += [f"criterion.{k} = {'pass' if v else 'fail'}" for k, v in self.criteria.items()]
        return lines


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# parameters ---------------------------------------------------------------


class _Params:
    """Typed access to spec parameters; unknown leftovers raise ConfigError."""

    def __init__(self, raw: dict):
        self.raw = dict(raw)
        self.used: set[str] = set()

    def get(self, key: str, default, kind: Callable = float):
        self.used.add(key)
        if key not in self.raw:
            return default
        val = self.raw[key]
        try:
            if kind is list:
                if isinstance(val, str):
                    return [float(s) for s in val.replace(",", " ").split()]
                return [float(s) for s in val]
            return kind(val)
        except (TypeError, ValueError):
            raise ConfigError(f"parameter {key} = {val!r} is not a valid {kind.__name__}") from None

    def check(self):
        extra = set(self.raw) - self.used
        if extra:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(extra))}")


def _problem(name: str):
    return problems.make_problem(name)


def _models(names: str) -> list[ManifoldModel]:
    out = []
    for n in names.split(","):
        try:
            out.append(get_model(n.strip()))
        except Exception:
            raise ConfigError(f"unknown manifold {n.strip()!r}") from None
    return out


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _r2(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    res = y - np.polyval(coef, x)
    tot = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum(res ** 2) / tot) if tot > 0 else 1.0


def _start_point(model: ManifoldModel) -> np.ndarray:
    if model.name == "circle":
        return np.array([1.0, 0.0])
    return np.array([0.6, 0.0, 0.8])


def _grid_for(dyn, p: _Params, nodes_default: int = 200, level_default: int = 4):
    if dyn.model.name == "circle":
        return circle_grid(p.get("nodes", nodes_default, int))
    return icosahedral_grid(p.get("level", level_default, int))


class _Output:
    def __init__(self, spec: ExperimentSpec):
        self.dir = spec.output_dir
        self.label = spec.label
        self.svg = spec.svg
        self.files: list[str] = []
        os.makedirs(self.dir, exist_ok=True)

    def table(self, suffix: str, header, rows):
        path = os.path.join(self.dir, f"{self.label}-{suffix}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in r])
        self.files.append(path)

    def plot(self, suffix: str, x, ys: dict, title: str, loglog: bool = True, xlabel="", ylabel=""):
        if not self.svg:
            return
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            return
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, y in ys.items():
            ax.plot(x, y, marker="o", label=name)
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(self.dir, f"{self.label}-{suffix}.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        self.files.append(path)


# experiments ----------------------------------------------------------------


def _geometry_certify(spec, p: _Params, out: _Output):
    """Criteria 1 and 2: map roundtrips, transport isometry, reversal and distance equivalence."""
    n = p.get("n_samples", 10000, int)
    frac = p.get("radius_fraction", 0.9)
    models = _models(spec.problem)
    rng = np.random.default_rng(spec.seed)
    metrics, rows = {}, []
    ok1 = ok2 = True
    t_c1 = t_c2 = 0.0
    for model in models:
        t0 = time.perf_counter()
        x = model.random_points(rng, n)
        v = model.random_tangents(rng, x, frac * model.injectivity_radius)
        y = model.exp(x, v)
        rt = float(np.max(np.linalg.norm(model.log(x, y) - v, axis=1)))
        dist = float(np.max(np.abs(model.dist(x, y) - np.linalg.norm(v, axis=1))))
        w = model.random_tangents(rng, x, 1.0)
        iso = float(np.max(np.abs(np.linalg.norm(model.transport(x, y, w), axis=1) - np.linalg.norm(w, axis=1))))
        rev = float(np.max(np.linalg.norm(model.transport(x, y, model.log(x, y)) + model.log(y, x), axis=1)))
        t_c1 += time.perf_counter() - t0
        t0 = time.perf_counter()
        a, b = model.random_points(rng, n), model.random_points(rng, n)
        ratio = model.dist(a, b) / np.linalg.norm(a - b, axis=1)
        t_c2 += time.perf_counter() - t0
        rmin, rmax = float(ratio.min()), float(ratio.max())
        m = model.name
        metrics.update({f"{m}.roundtrip": rt, f"{m}.distance": dist, f"{m}.isometry": iso, f"{m}.reversal": rev,
                        f"{m}.ratio_min": rmin, f"{m}.ratio_max": rmax})
        rows.append([m, n, rt, dist, iso, rev, rmin, rmax])
        ok1 &= rt <= 1e-8 and dist <= 1e-10 and iso <= 1e-10 and rev <= 1e-10
        ok2 &= rmin >= 1.0 - 1e-12 and rmax <= math.pi / 2 + 1e-9
    metrics["runtime.c1"] = t_c1
    metrics["runtime.c2"] = t_c2
    out.table("metrics", ["model", "n", "roundtrip", "distance", "isometry", "reversal", "ratio_min", "ratio_max"],
              rows)
    return metrics, {"C1": bool(ok1 and t_c1 < 5.0), "C2": bool(ok2 and t_c2 < 1.0)}


def _hessian_certify(spec, p: _Params, out: _Output):
    """Criterion 3 on random pairs with rho uniform in [rho_min, r_m]."""
    (model,) = _models(spec.problem)
    n = p.get("n_pairs", 1000, int)
    rmin = p.get("rho_min", 0.05)
    rmax = p.get("rho_max", model.safe_radius)
    if rmax > model.safe_radius + 1e-12:
        raise ConfigError("rho_max exceeds the safe radius")
    rng = np.random.default_rng(spec.seed)
    rows, recs, pairs = [], [], []
    for _ in range(n):
        rho = rng.uniform(rmin, rmax)
        x, y = jacobi.random_pair(model, rng, rho)
        v, w = jacobi.random_tangent(model, rng, x), jacobi.random_tangent(model, rng, y)
        rec = jacobi.certify_estimates(model, x, y, [v], [w])
        recs.append(rec)
        pairs.append((x, y))
    rho = np.array([r.rho for r in recs])
    dev = np.array([r.deviation_ratios.max() for r in recs])
    fdev = np.array([r.flipped_deviation_ratios.max() for r in recs])
    a2 = np.array([r.a2_entry for r in recs])
    fd = np.array([r.fd_rel_error for r in recs])
    j1 = (min(r.j1_min for r in recs), max(r.j1_max for r in recs))
    fj1 = (min(r.flipped_j1_min for r in recs), max(r.flipped_j1_max for r in recs))
    slope = _slope(rho, a2)
    bound = max(r.jacobi_bound_ratio for r in recs)
    ode = max(r.ode_residual for r in recs)
    jacobi.write_certification_csv(os.path.join(out.dir, f"{out.label}-pairs.csv"), recs, pairs)
    out.files.append(os.path.join(out.dir, f"{out.label}-pairs.csv"))
    order = np.argsort(rho)
    out.plot("a2", rho[order], {"max |A^2 - 4A|": a2[order]}, "A^2 - 4A vs rho", xlabel="rho")
    pass_line = 6.0 * model.curvature_bound + 1e-12
    metrics = {
        "max_deviation_ratio": float(dev.max()),
        "pass_line": 6.0 * model.curvature_bound,
        "a2_slope": slope,
        "j1_min": j1[0],
        "j1_max": j1[1],
        "fd_max_rel_error": float(fd.max()),
        "jacobi_bound_ratio": bound,
        "ode_residual": ode,
        "flipped.max_deviation_ratio": float(fdev.max()),
        "flipped.j1_min": fj1[0],
        "flipped.j1_max": fj1[1],
        "flipped.a2_slope": _slope(rho, np.array([r.flipped_a2_ratio for r in recs]) * rho ** 2),
    }
    ok = (dev.max() <= pass_line and abs(slope - 2) <= 0.2 and 0.5 <= j1[0] and j1[1] <= 1.5
          and fd.max() <= 1e-4)
    return metrics, {"C3": bool(ok)}


def _sde_convergence(spec, p: _Params, out: _Output):
    """Criterion 4: stored-state residuals, stability in the initial point, short-time growth."""
    dyn = _problem(spec.problem)
    n = p.get("n_paths", 10000, int)
    dt = p.get("dt", 1e-2)
    short_dt = p.get("short_dt", 1e-3)
    horizon = p.get("horizon", min(dyn.horizon, 0.5))
    cfg = IntegratorConfig(dt=dt, seed=spec.seed)
    model = dyn.model
    u = ControlSignal.constant(dyn.controls.points[-1], 0.0, dyn.horizon)
    x0 = _start_point(model)

    ens = simulate_batch(dyn, cfg, 0.0, x0, u, n, t_end=horizon, record=True)
    stored = float(np.max(model.dist2_to_manifold(ens.states)))

    # stability in the initial point under common noise
    K = len(time_grid(0.0, horizon, dt)) - 1
    from .sde import noise_table

    table = noise_table(spec.seed, np.arange(n), K, dyn.m)
    tangent = model.tangent_basis(x0)[0]
    d2 = np.array(p.get("initial_gaps", [1e-3, 2e-3, 4e-3, 7e-3, 1e-2], list))
    sups = []
    for g in d2:
        x1 = model.exp(x0, math.sqrt(g) * tangent)
        e1 = simulate_batch(dyn, cfg, 0.0, x0, u, n, t_end=horizon, noise=table)
        e2 = simulate_batch(dyn, cfg, 0.0, x1, u, n, t_end=horizon, noise=table)
        sups.append(float(np.mean(np.max(model.dist(e1.states, e2.states) ** 2, axis=1))))
    sups = np.array(sups)
    stab_slope = _slope(d2, sups)

    # short-time growth of E sup rho^2(X(s), xi)
    taus = np.array(p.get("short_times", [0.005, 0.01, 0.02, 0.03, 0.05], list))
    scfg = IntegratorConfig(dt=short_dt, seed=spec.seed + 1)
    es = simulate_batch(dyn, scfg, 0.0, x0, u, n, t_end=float(taus.max()), record=True)
    r2 = model.dist(es.states, x0) ** 2
    running = np.maximum.accumulate(r2, axis=1)
    idx = [int(np.argmin(np.abs(es.times - t))) for t in taus]
    growth = np.array([float(np.mean(running[:, i])) for i in idx])
    short_slope = _slope(taus, growth)

    out.table("stability", ["initial_rho2", "E_sup_rho2"], zip(d2, sups))
    out.table("short-time", ["tau", "E_sup_rho2"], zip(taus, growth))
    out.plot("stability", d2, {"E sup rho^2": sups}, "stability in the initial point", xlabel="rho^2(xi1, xi2)")
    out.plot("short-time", taus, {"E sup rho^2": growth}, "short-time growth", xlabel="t1 - t")
    metrics = {"stored_residual": stored, "max_pre_projection_residual": float(ens.max_pre_residual.max()),
               "stability_slope": stab_slope, "short_time_slope": short_slope}
    ok = stored <= 1e-12 and 0.5 <= stab_slope <= 2.0 and abs(short_slope - 1.0) <= 0.3
    return metrics, {"C4": bool(ok)}


def _bm_decay(spec, p: _Params, out: _Output):
    """Criterion 5: E<X(t), x0> = exp(-t) for Brownian motion on S^2."""
    dyn = _problem(spec.problem)
    if dyn.model.name != "sphere2" or dyn.m == 0:
        raise ConfigError("bm-decay needs a diffusive problem on sphere2")
    n = p.get("n_paths", 100000, int)
    dt = p.get("dt", 1e-3)
    t1 = p.get("t", 1.0)
    workers = p.get("workers", 1, int)
    x0 = np.array([0.0, 0.0, 1.0])
    cfg = IntegratorConfig(dt=dt, seed=spec.seed, workers=workers)
    bm = problems.sphere2_bm(horizon=t1)
    est = estimate_J(bm, 0.0, x0, ControlSignal.constant([0.0], 0.0, t1), n, cfg)
    target = math.exp(-t1)
    z = abs(est.mean - target) / est.stderr
    out.table("decay", ["t", "mean", "stderr", "target"], [[t1, est.mean, est.stderr, target]])
    metrics = {"mean": est.mean, "stderr": est.stderr, "target": target, "z_score": float(z)}
    return metrics, {"C5": bool(z <= 3.0)}


def _hjb_benchmark(spec, p: _Params, out: _Output):
    """Criterion 6 (circle-steering), 7 (sphere2-bm) or 12 (problem = all)."""
    if spec.problem == "all":
        return _scheme_structure(spec, p, out)
    dyn = _problem(spec.problem)
    dt = p.get("dt", 1e-2)
    if spec.problem == "circle-steering":
        grid = _grid_for(dyn, p, 200)
        n_int = p.get("intervals", 2, int)
        field_ = hjb.solve_backward(dyn, grid, dt)
        x0 = _start_point(dyn.model)
        v = float(field_.interpolate(0.0, x0[None])[0])
        best, sig = brute_force_value(dyn, 0.0, x0, n_int, dyn.controls, 2, IntegratorConfig(dt=dt, seed=spec.seed))
        err = abs(v - best.mean)
        out.table("values", ["method", "value"], [["semi-lagrangian", v], ["brute-force", best.mean]])
        return {"hjb_value": v, "brute_force_value": best.mean, "abs_error": err,
                "n_controls": len(dyn.controls)}, {"C6": bool(err <= 2e-2)}
    if spec.problem == "sphere2-bm":
        grid = _grid_for(dyn, p, level_default=4)
        field_ = hjb.solve_backward(dyn, grid, dt)
        exact = grid.nodes[:, 2][None] * np.exp(-(dyn.horizon - field_.times))[:, None]
        err = np.abs(field_.values - exact).max(axis=1)
        out.table("errors", ["t", "sup_error"], zip(field_.times, err))
        out.plot("errors", field_.times, {"sup error": err}, "sup error per slice", loglog=False, xlabel="t")
        sup = float(err.max())
        return {"sup_error": sup, "nodes": len(grid), "error_at_t0": float(err[0])}, {"C7": bool(sup <= 2e-2)}
    raise ConfigError(f"hjb-benchmark has no oracle for {spec.problem}")


def _structure_grid(dyn):
    return circle_grid(100) if dyn.model.name == "circle" else icosahedral_grid(3)


def _scheme_structure(spec, p: _Params, out: _Output):
    """Criterion 12: discrete comparison (exact) and constant invariance on every built-in problem."""
    rng = np.random.default_rng(spec.seed)
    c = p.get("shift", 0.75)
    tol = p.get("invariance_tol", 1e-12)
    rows, metrics = [], {}
    ok = True
    for name in problems.PROBLEMS:
        dyn = _problem(name)
        dyn = fields.replace_horizon(dyn, min(dyn.horizon, 0.2))
        grid = _structure_grid(dyn)
        dt = 1e-2 if name != "sphere2-controlled" else 5e-3
        bump = rng.uniform(0.0, 0.5, len(grid))
        h = dyn.terminal_cost

        def h2(x, h=h, grid=grid, bump=bump):
            base = h(x)
            _, j = grid.tree.query(np.atleast_2d(x))
            return base + bump[j].reshape(base.shape)

        V1 = hjb.solve_backward(dyn, grid, dt).values
        V2 = hjb.solve_backward(fields.replace_terminal(dyn, h2), grid, dt).values
        V3 = hjb.solve_backward(fields.shift_terminal(dyn, c), grid, dt).values
        comp = float(np.max(V1 - V2))
        inv = float(np.max(np.abs(V3 - V1 - c)))
        rows.append([name, comp, inv])
        metrics[f"{name}.comparison_max_violation"] = comp
        metrics[f"{name}.invariance_error"] = inv
        ok &= comp <= 0.0 and inv <= tol
    out.table("structure", ["problem", "max(V1 - V2)", "max|V(h+c) - V(h) - c|"], rows)
    return metrics, {"C12": bool(ok)}


def _refinements(p: _Params):
    nodes = [int(v) for v in p.get("nodes", [100, 200, 400], list)]
    dts = p.get("dts", [2e-2, 1e-2, 5e-3], list)
    if len(nodes) != len(dts):
        raise ConfigError("nodes and dts need the same length")
    return nodes, dts


def _dpp_gap(spec, p: _Params, out: _Output):
    """Criterion 8 on P1 and P4 (problem may list several, comma separated)."""
    names = [s.strip() for s in spec.problem.split(",")]
    n_paths = p.get("n_paths", 20000, int)
    nodes, dts = _refinements(p)
    base = p.get("base_index", 1, int)
    metrics, rows, ok = {}, [], True
    for name in names:
        dyn = _problem(name)
        if dyn.model.name != "circle":
            raise ConfigError("dpp-gap runs on circle problems")
        x0 = _start_point(dyn.model)
        s = p.get("s", dyn.horizon / 2)
        gaps = []
        for n, dt in zip(nodes, dts):
            F = hjb.solve_backward(dyn, circle_grid(n), dt)
            gaps.append(dpp_gap(dyn, 0.0, s, x0, F, dyn.controls, n_paths, IntegratorConfig(dt=dt, seed=spec.seed)))
            rows.append([name, n, dt, gaps[-1]])
        decreasing = gaps[-1] < gaps[0]
        metrics[f"{name}.gap"] = gaps[base]
        metrics[f"{name}.gap_coarse"] = gaps[0]
        metrics[f"{name}.gap_fine"] = gaps[-1]
        ok &= gaps[base] <= 5e-2 and decreasing
    out.table("gaps", ["problem", "nodes", "dt", "gap"], rows)
    return metrics, {"C8": bool(ok)}


def _feedback_gap(spec, p: _Params, out: _Output):
    """Criterion 9: closed-loop cost of the synthesized feedback against the grid value."""
    names = [s.strip() for s in spec.problem.split(",")]
    n_paths = p.get("n_paths", 10000, int)
    dt = p.get("dt", 1e-2)
    metrics, rows, ok = {}, [], True
    for name in names:
        dyn = _problem(name)
        grid = _grid_for(dyn, p)
        F = hjb.solve_backward(dyn, grid, dt)
        x0 = _start_point(dyn.model)
        est, v0 = hjb.closed_loop_estimate(dyn, F, 0.0, x0, dyn.controls, n_paths,
                                           IntegratorConfig(dt=dt, seed=spec.seed))
        gap = est.mean - v0
        rows.append([name, est.mean, est.stderr, v0, gap])
        metrics.update({f"{name}.gap": gap, f"{name}.stderr": est.stderr, f"{name}.closed_loop": est.mean,
                        f"{name}.grid_value": v0})
        ok &= -3 * est.stderr <= gap <= 5e-2
    out.table("gaps", ["problem", "closed_loop_cost", "stderr", "grid_value", "gap"], rows)
    return metrics, {"C9": bool(ok)}


def _regularity(spec, p: _Params, out: _Output):
    """Criterion 10: spatial Lipschitz constant across refinements and time-increment slope."""
    dyn = _problem(spec.problem)
    if dyn.model.name != "circle":
        raise ConfigError("regularity runs on circle problems")
    nodes, dts = _refinements(p)
    deltas = np.array(p.get("time_increments", [0.02, 0.04, 0.08, 0.16, 0.32], list))
    lips, slopes, rows = [], [], []
    for n, dt in zip(nodes, dts):
        g = circle_grid(n)
        F = hjb.solve_backward(dyn, g, dt)
        e = g.edges
        L = np.abs(F.values[0][e[:, 0]] - F.values[0][e[:, 1]]) / g.model.dist(g.nodes[e[:, 0]], g.nodes[e[:, 1]])
        inc = np.array([np.max(np.abs(F.slice_at(d) - F.values[0])) for d in deltas])
        lips.append(float(L.max()))
        slopes.append(_slope(deltas, inc))
        rows.append([n, dt, lips[-1], slopes[-1]])
    spread = max(abs(lv / lips[-1] - 1.0) for lv in lips)
    out.table("regularity", ["nodes", "dt", "lipschitz", "time_slope"], rows)
    metrics = {"lipschitz_fine": lips[-1], "lipschitz_spread": spread, "time_slope_min": min(slopes)}
    return metrics, {"C10": bool(spread <= 0.2 and min(slopes) >= 0.45)}


def _perturbation_size(dyn, d: float, grid) -> float:
    """sup |sigma_1 - sigma_2| + sup |D_sigma1 sigma1 - D_sigma2 sigma2| over nodes and U_h."""
    ext = fields.ExtensionConfig(dyn.model)
    other = fields.scale_diffusion(dyn, 1.0 + d)
    X = np.repeat(grid.nodes, len(dyn.controls), axis=0)
    U = np.tile(dyn.controls.points, (len(grid), 1))
    ds = np.linalg.norm(other.sigma(0.0, X, U) - dyn.sigma(0.0, X, U), axis=-1).sum(axis=-1).max()
    # the tangential part of 0.5 * sum D^E sigma sigma is 0.5 * sum D sigma sigma
    c1 = 2 * dyn.model.tangent_project(X, fields.ito_correction(dyn, ext, 0.0, X, U))
    c2 = 2 * dyn.model.tangent_project(X, fields.ito_correction(other, ext, 0.0, X, U))
    return float(ds + np.linalg.norm(c1 - c2, axis=-1).max())


def _continuous_dependence(spec, p: _Params, out: _Output):
    """Criterion 11: sigma -> (1 + delta) sigma sweep."""
    dyn = _problem(spec.problem)
    if dyn.m == 0:
        raise ConfigError("continuous-dependence needs a diffusive problem")
    deltas = np.array(p.get("deltas", [0.02, 0.04, 0.06, 0.08, 0.1], list))
    nodes = [int(v) for v in p.get("nodes", [200, 400], list)]
    dts = p.get("dts", [1e-2, 5e-3], list)
    rows, consts, r2s = [], [], []
    for n, dt in zip(nodes, dts):
        g = make_grid(dyn.model, n)
        F1 = hjb.solve_backward(dyn, g, dt)
        s = np.sqrt(dyn.horizon - F1.times[:-1])
        sups, cs = [], []
        for d in deltas:
            F2 = hjb.solve_backward(fields.scale_diffusion(dyn, 1.0 + d), g, dt)
            diff = np.abs(F1.values - F2.values).max(axis=1)
            size = _perturbation_size(dyn, d, g)
            sups.append(float(diff[0]))
            cs.append(float(np.max(diff[:-1] / (s * size))))
            rows.append([n, dt, d, diff[0], size, cs[-1]])
        consts.append(max(cs))
        r2s.append(_r2(deltas, sups))
    spread = max(abs(c / consts[-1] - 1.0) for c in consts)
    out.table("sweep", ["nodes", "dt", "delta", "sup_diff_t0", "perturbation", "ratio"], rows)
    metrics = {"r2_min": min(r2s), "fitted_C": consts[-1], "C_spread": spread}
    return metrics, {"C11": bool(min(r2s) >= 0.95 and spread <= 0.3)}


_RUNNERS = {
    "geometry-certify": _geometry_certify,
    "hessian-certify": _hessian_certify,
    "sde-convergence": _sde_convergence,
    "bm-decay": _bm_decay,
    "dpp-gap": _dpp_gap,
    "hjb-benchmark": _hjb_benchmark,
    "feedback-gap": _feedback_gap,
    "regularity": _regularity,
    "continuous-dependence": _continuous_dependence,
}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def run_experiment(spec: ExperimentSpec) -> RunReport:
    """Run one experiment, write its artifacts and return the report."""
    params = _Params(spec.params)
    out = _Output(spec)
    t0 = time.perf_counter()
    metrics, criteria = _RUNNERS[spec.name](spec, params, out)
    params.check()
    report = RunReport(spec, metrics, criteria, time.perf_counter() - t0,
                       {"seed": spec.seed, "version": _version()}, out.files)
    path = os.path.join(out.dir, f"{spec.label}-summary.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    report.files.append(path)
    return report


# default acceptance suite ---------------------------------------------------

CRITERIA = {
    "C1": "geometry roundtrips, transport isometry and reversal on circle and sphere2",
    "C2": "distance equivalence 1 <= rho/chord <= pi/2 on sphere2",
    "C3": "Hessian certification on 10^3 sphere2 pairs",
    "C4": "SDE residual, initial-point stability and short-time growth",
    "C5": "sphere2 Brownian motion decay E<X(1), x0> = exp(-1)",
    "C6": "semi-Lagrangian value vs brute force on circle-steering",
    "C7": "semi-Lagrangian value vs heat semigroup on sphere2-bm",
    "C8": "DPP gap on P1 and P4",
    "C9": "closed-loop feedback gap on P1 and P2",
    "C10": "regularity of the value on P4",
    "C11": "continuous dependence on the diffusion on P4",
    "C12": "discrete comparison and constant invariance on all problems",
}


def default_specs(seed: int = 0, output_dir: str = "results", svg: bool = False) -> list[ExperimentSpec]:
    """One spec per acceptance run, in criterion order."""
    rows = [
        ("geometry-certify", "circle,sphere2", {}),
        ("hessian-certify", "sphere2", {}),
        ("sde-convergence", "sphere2-controlled", {}),
        ("bm-decay", "sphere2-bm", {}),
        ("hjb-benchmark", "circle-steering", {}),
        ("hjb-benchmark", "sphere2-bm", {}),
        ("dpp-gap", "circle-steering,circle-diffusive", {}),
        ("feedback-gap", "circle-steering,sphere2-bm", {}),
        ("regularity", "circle-diffusive", {}),
        ("continuous-dependence", "circle-diffusive", {}),
        ("hjb-benchmark", "all", {}),
    ]
    return [ExperimentSpec(n, prob, dict(par), seed, output_dir, svg) for n, prob, par in rows]


def load_specs(path, seed=None, output_dir=None, svg: bool = False) -> list[ExperimentSpec]:
    """Read ``[experiment ...]`` sections; keys name/problem/seed/out, all others are parameters."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read spec file {path}")
    specs = []
    for sec in parser.sections():
        if not sec.startswith("experiment"):
            continue
        body = dict(parser[sec])
        try:
            name, problem = body.pop("name"), body.pop("problem")
        except KeyError as exc:
            raise ConfigError(f"section [{sec}] lacks {exc.args[0]!r}") from None
        s = int(body.pop("seed", 0)) if seed is None else seed
        out = body.pop("out", "results") if output_dir is None else output_dir
        label = sec.split(None, 1)[1].strip() if " " in sec else ""
        specs.append(ExperimentSpec(name, problem, body, s, out, svg, label))
    if not specs:
        raise ConfigError(f"{path} defines no [experiment ...] sections")
    return specs
