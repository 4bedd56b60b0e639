"""Simulation of controlled Stratonovich SDEs through the ambient Ito form.

One projected Euler step reads

    z = x + (b + 0.5 * sum_i D^E_{sigma_i} sigma_i) dt + sum_i sigma_i dW^i
    x' = pi(z)

with Gaussian increments drawn from a Philox stream keyed by ``(seed, path)``;
the k-th step of path p always consumes the k-th block of m normals of that
stream, so results do not depend on batching or worker order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controls import ControlSignal
from .errors import OutsideTubularNeighborhood
from .fields import ControlledDynamics, ExtensionConfig, ito_correction
from .geometry import ManifoldModel, ManifoldPoint

SCHEMES = ("projected-euler-ito", "projected-heun")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-2
    scheme: str = "projected-euler-ito"
    project_each_step: bool = True
    seed: int = 0
    block_size: int = 8192
    workers: int = 1
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def time_grid(t0: float, t_end: float, dt: float) -> np.ndarray:
    """Uniform grid with K = ceil((t_end - t0) / dt) steps ending exactly at t_end."""
    span = t_end - t0
    if span <= 0:
        raise ValueError("need t0 < t_end")
    k = max(1, int(math.ceil(span / dt - 1e-9)))
    return np.linspace(t0, t_end, k + 1)


def noise_table(seed: int, path_ids, n_steps: int, m: int) -> np.ndarray:
    """Standard normals of shape (P, n_steps, m); row p is keyed by (seed, path_ids[p])."""
    path_ids = np.asarray(path_ids, dtype=np.int64)
    out = np.empty((len(path_ids), n_steps, m))
    if m == 0:
        return out
    for j, p in enumerate(path_ids):
        gen = np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(p)))
        out[j] = gen.standard_normal((n_steps, m))
    return out


@dataclass(eq=False)
class SamplePath:
    """One trajectory; ``noise[k]`` holds the Brownian increments of step k."""

    model: ManifoldModel
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    noise: np.ndarray
    pre_residuals: np.ndarray

    @property
    def max_offmanifold(self) -> float:
        return float(self.pre_residuals.max()) if self.pre_residuals.size else 0.0

    def point(self, k: int) -> ManifoldPoint:
        return ManifoldPoint(self.model, self.states[k])


@dataclass(eq=False)
class PathEnsemble:
    """Batch result.  Full trajectories are kept only when ``record=True``."""

    model: ManifoldModel
    times: np.ndarray
    path_ids: np.ndarray
    terminal: np.ndarray
    running_cost: np.ndarray
    max_pre_residual: np.ndarray
    states: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    pre_residuals: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.path_ids)

    def path(self, p: int) -> SamplePath:
        if self.states is None:
            raise ValueError("ensemble was simulated without recording trajectories")
        return SamplePath(self.model, self.times, self.states[p], self.controls[p], self.noise[p],
                          self.pre_residuals[p])


class _Neumaier:
    """Vectorized compensated summation."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, x):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    @property
    def total(self):
        return self.s + self.c


def _fields(dyn, ext, t, x, u, project_each_step):
    """(b, sigma, ito correction) at ambient states x; off-manifold states use the extension."""
    model = dyn.model
    if project_each_step:
        return dyn.b(t, x, u), dyn.sigma(t, x, u), ito_correction(dyn, ext, t, x, u)
    xp = model.project(x)
    lam = ext.cutoff(model.dist2_to_manifold(x))
    return (lam[:, None] * dyn.b(t, xp, u), lam[:, None, None] * dyn.sigma(t, xp, u),
            lam[:, None] * ito_correction(dyn, ext, t, xp, u))


def _run_block(dyn: ControlledDynamics, cfg: IntegratorConfig, times, x0, control: ControlSignal,
               z: np.ndarray, record: bool):
    model = dyn.model
    ext = ExtensionConfig(model, cfg.epsilon)
    P = z.shape[0]
    K = len(times) - 1
    x = np.array(np.broadcast_to(x0, (P, model.ambient_dim)), dtype=float)
    cost = _Neumaier(P)
    max_res = np.zeros(P)
    if record:
        states = np.empty((P, K + 1, model.ambient_dim))
        states[:, 0] = x
        ctrl = None
        incs = np.empty((P, K, dyn.m))
        res = np.empty((P, K))
    for k in range(K):
        t, dt = times[k], times[k + 1] - times[k]
        u = np.asarray(control.at(t, x), dtype=float)
        dW = z[:, k, :] * math.sqrt(dt)
        b, sig, corr = _fields(dyn, ext, t, x, u, cfg.project_each_step)
        cost.add(dyn.f(t, x, u) * dt)
        noise_term = np.einsum("pm,pmn->pn", dW, sig) if dyn.m else 0.0
        if cfg.scheme == "projected-euler-ito":
            znew = x + (b + corr) * dt + noise_term
        else:
            pred = x + b * dt + noise_term
            if not np.all(model.projectable(pred)):
                raise OutsideTubularNeighborhood("Heun predictor left the tubular neighborhood; reduce dt")
            b2, sig2, _ = _fields(dyn, ext, t + dt, pred, u, False)
            noise2 = np.einsum("pm,pmn->pn", dW, sig2) if dyn.m else 0.0
            znew = x + 0.5 * (b + b2) * dt + 0.5 * (noise_term + noise2)
        r = model.dist2_to_manifold(znew)
        np.maximum(max_res, r, out=max_res)
        if not np.all(model.projectable(znew)):
            raise OutsideTubularNeighborhood(
                f"step {k} left the tubular neighborhood (max dist^2 {r.max():.3e}); reduce dt"
            )
        x = model.project(znew) if cfg.project_each_step else znew
        if record:
            if ctrl is None:
                ctrl = np.empty((P, K, u.shape[-1]))
            ctrl[:, k] = u
            incs[:, k] = dW
            res[:, k] = r
            states[:, k + 1] = x
    out = {"terminal": x, "running_cost": cost.total, "max_pre_residual": max_res}
    if record:
        out.update(states=states, controls=ctrl, noise=incs, pre_residuals=res)
    return out


def simulate_batch(dyn: ControlledDynamics, cfg: IntegratorConfig, t0: float, x0, u: ControlSignal,
                   n_paths: int, *, t_end: Optional[float] = None, record: bool = True,
                   path_ids=None, noise: Optional[np.ndarray] = None) -> PathEnsemble:
    """Simulate ``n_paths`` trajectories from ``x0`` on [t0, t_end].

    ``x0`` is a :class:`ManifoldPoint`, an ambient point, or one start point
    per path (shape ``(n_paths, n1)``).  ``noise`` may supply a precomputed
    table from :func:`noise_table` (shape ``(n_paths, K, m)``); otherwise it is
    drawn block-wise from the seeded substreams.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    t_end = dyn.horizon if t_end is None else t_end
    times = time_grid(t0, t_end, cfg.dt)
    K = len(times) - 1
    x0 = np.asarray(x0.coords if isinstance(x0, ManifoldPoint) else x0, dtype=float)
    ids = np.arange(n_paths) if path_ids is None else np.asarray(path_ids, dtype=np.int64)
    if len(ids) != n_paths:
        raise ValueError("path_ids length must equal n_paths")
    per_path_x0 = x0.ndim == 2
    blocks = [slice(s, min(s + cfg.block_size, n_paths)) for s in range(0, n_paths, cfg.block_size)]

    def work(sl):
        z = noise[sl] if noise is not None else noise_table(cfg.seed, ids[sl], K, dyn.m)
        return _run_block(dyn, cfg, times, x0[sl] if per_path_x0 else x0, u, z, record)

    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(sl) for sl in blocks]

    def cat(key):
        return np.concatenate([p[key] for p in parts]) if key in parts[0] else None

    return PathEnsemble(dyn.model, times, ids, cat("terminal"), cat("running_cost"), cat("max_pre_residual"),
                        cat("states"), cat("controls"), cat("noise"), cat("pre_residuals"))


def simulate_path(dyn: ControlledDynamics, cfg: IntegratorConfig, t0: float, x0, u: ControlSignal,
                  *, t_end: Optional[float] = None, path_id: int = 0) -> SamplePath:
    ens = simulate_batch(dyn, cfg, t0, x0, u, 1, t_end=t_end, path_ids=[path_id])
    return ens.path(0)


def off_manifold_residual(path: SamplePath) -> float:
    """Largest dist^2(z, M) of the unprojected step results."""
    return path.max_offmanifold


def stored_residual(path: SamplePath) -> float:
    """Largest dist^2(x, M) over the stored states."""
    return float(np.max(path.model.dist2_to_manifold(path.states)))


def ensemble_to_csv(ens: PathEnsemble, filename) -> None:
    """Write path_id, step, t, coords..., u..., residual rows for a recorded ensemble."""
    if ens.states is None:
        raise ValueError("ensemble has no recorded trajectories")
    n1 = ens.states.shape[-1]
    k = ens.controls.shape[-1]
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "step", "t"] + [f"x{i}" for i in range(n1)] + [f"u{i}" for i in range(k)]
                   + ["residual"])
        K = len(ens.times) - 1
        for p, pid in enumerate(ens.path_ids):
            for s in range(K + 1):
                u = ens.controls[p, s] if s < K else np.full(k, np.nan)
                r = ens.pre_residuals[p, s - 1] if s > 0 else 0.0
                w.writerow([int(pid), s, repr(float(ens.times[s]))] + [repr(float(c)) for c in ens.states[p, s]]
                           + [repr(float(c)) for c in u] + [repr(float(r))])
