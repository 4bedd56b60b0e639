"""Cost functionals, Monte Carlo value estimates and the brute-force
dynamic-programming oracle over piecewise-constant controls."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .controls import ControlSignal
from .errors import EnumerationTooLarge
from .fields import ControlledDynamics, ControlSet
from .geometry import ManifoldPoint
from .sde import IntegratorConfig, PathEnsemble, SamplePath, noise_table, simulate_batch, time_grid

MAX_CANDIDATES = 10**6

__all__ = [
    "ControlSignal",
    "ValueEstimate",
    "path_cost",
    "ensemble_costs",
    "estimate_J",
    "brute_force_value",
    "dpp_gap",
    "dpp_candidates",
    "write_value_rows",
]


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int


def path_cost(dyn: ControlledDynamics, path: SamplePath) -> float:
    """Left-endpoint quadrature of the running cost plus the terminal cost."""
    dts = np.diff(path.times)
    f = np.array([float(dyn.f(path.times[k], path.states[k], path.controls[k])) for k in range(len(dts))])
    return math.fsum(f * dts) + float(dyn.h(path.states[-1]))


def ensemble_costs(dyn: ControlledDynamics, ens: PathEnsemble) -> np.ndarray:
    return ens.running_cost + dyn.h(ens.terminal)


def _summarize(costs: np.ndarray) -> ValueEstimate:
    n = len(costs)
    if n < 2 or np.ptp(costs) == 0:
        return ValueEstimate(float(costs[0]) if np.ptp(costs) == 0 else float(costs.mean()), 0.0, n)
    return ValueEstimate(float(costs.mean()), float(costs.std(ddof=1) / math.sqrt(n)), n)


def estimate_J(dyn: ControlledDynamics, t0: float, x0, u: ControlSignal, n_paths: int,
               cfg: IntegratorConfig, *, noise=None) -> ValueEstimate:
    """Sample mean and standard error of the pathwise cost."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    ens = simulate_batch(dyn, cfg, t0, x0, u, n_paths, record=False, noise=noise)
    return _summarize(ensemble_costs(dyn, ens))


def brute_force_value(dyn: ControlledDynamics, t0: float, x0, n_intervals: int, controls,
                      n_paths: int, cfg: IntegratorConfig):
    """Minimize the estimated cost over all |U_h|^K piecewise-constant controls.

    Every candidate sees the same noise table (common random numbers), so
    the comparison between candidates is deterministic.  Ties go to the
    candidate enumerated first.
    """
    pts = controls.points if isinstance(controls, ControlSet) else np.atleast_2d(np.asarray(controls, float))
    n_cand = len(pts) ** n_intervals
    if n_cand > MAX_CANDIDATES:
        raise EnumerationTooLarge(f"{n_cand} candidate controls exceed the limit {MAX_CANDIDATES}")
    K = len(time_grid(t0, dyn.horizon, cfg.dt)) - 1
    table = noise_table(cfg.seed, np.arange(n_paths), K, dyn.m)
    best, best_u = None, None
    for combo in itertools.product(range(len(pts)), repeat=n_intervals):
        sig = ControlSignal.uniform(pts[list(combo)], t0, dyn.horizon)
        est = estimate_J(dyn, t0, x0, sig, n_paths, cfg, noise=table)
        if best is None or est.mean < best.mean:
            best, best_u = est, sig
    return best, best_u


def dpp_candidates(dyn: ControlledDynamics, t: float, s: float, x, value_field, controls,
                   n_paths: int, cfg: IntegratorConfig) -> np.ndarray:
    """E[int_t^s f dr + V(s, X(s))] for each constant control, with common noise."""
    pts = controls.points if isinstance(controls, ControlSet) else np.atleast_2d(np.asarray(controls, float))
    K = len(time_grid(t, s, cfg.dt)) - 1
    table = noise_table(cfg.seed, np.arange(n_paths), K, dyn.m)
    out = np.empty(len(pts))
    for j, u in enumerate(pts):
        ens = simulate_batch(dyn, cfg, t, x, ControlSignal.constant(u, t, s), n_paths, t_end=s,
                             record=False, noise=table)
        out[j] = float(np.mean(ens.running_cost + value_field.interpolate(s, ens.terminal)))
    return out


def dpp_gap(dyn: ControlledDynamics, t: float, s: float, x, value_field, controls, n_paths: int,
            cfg: IntegratorConfig) -> float:
    """|V(t, x) - min_u E[int_t^s f + V(s, X(s))]| over constant controls on [t, s]."""
    if not t < s <= dyn.horizon + 1e-12:
        raise ValueError("need t < s <= T")
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, float)
    vals = dpp_candidates(dyn, t, s, xc, value_field, controls, n_paths, cfg)
    return float(abs(value_field.interpolate(t, xc[None])[0] - vals.min()))


def write_value_rows(filename, rows) -> None:
    """CSV with columns problem, t, x-coords..., value, stderr, method.

    ``rows`` holds tuples ``(problem, t, coords, value, stderr, method)``.
    """
    rows = list(rows)
    n1 = max(len(r[2]) for r in rows) if rows else 0
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "t"] + [f"x{i}" for i in range(n1)] + ["value", "stderr", "method"])
        for prob, t, coords, val, err, method in rows:
            w.writerow([prob, repr(float(t))] + [repr(float(c)) for c in coords]
                       + [repr(float(val)), repr(float(err)), method])
