"""Controlled vector fields, their compactly supported ambient extension and
the Stratonovich-to-Ito correction drift.

Field callables are vectorized: ``drift(t, x, u)`` takes ``x`` of shape
``(..., n1)`` and ``u`` broadcastable to ``(..., k)`` and returns ambient
vectors of shape ``(..., n1)``; ``diffusion`` returns ``(..., m, n1)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonTangentField
from .geometry import ManifoldModel, ManifoldPoint, TangentVector

FD_STEP = 1e-5
TANGENCY_TOL = 1e-8

Field = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Finite control grid ``U_h`` of a compact set ``U`` in R^k."""

    points: np.ndarray
    kind: str = "finite"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ValueError("control set must be nonempty")
        if self.lower is not None:
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
                raise ValueError("control points outside the declared box")
        object.__setattr__(self, "points", pts)

    @classmethod
    def box(cls, lower, upper, counts) -> "ControlSet":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.broadcast_to(np.atleast_1d(counts), lower.shape)
        axes = [np.linspace(lo, hi, int(c)) if c > 1 else np.array([0.5 * (lo + hi)])
                for lo, hi, c in zip(lower, upper, counts)]
        pts = np.array(list(itertools.product(*axes)), dtype=float)
        return cls(pts, "box", lower, upper)

    @classmethod
    def finite(cls, points) -> "ControlSet":
        return cls(np.asarray(points, dtype=float))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "ControlSet":
        return replace(self, points=np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass(frozen=True, eq=False)
class ControlledDynamics:
    """The tuple (b, sigma_1..sigma_m, f, h, U) on a manifold.

    ``ambient_correction`` optionally registers the closed form of
    ``0.5 * sum_i D^E_{sigma_i} sigma_i`` (ambient derivative of the extended
    fields, evaluated on the manifold).  Without it the correction is
    computed by central differences of the extension.
    """

    model: ManifoldModel
    m: int
    drift: Field
    diffusion: Optional[Field]
    running_cost: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    controls: ControlSet
    horizon: float
    bound: float
    lipschitz: float
    ambient_correction: Optional[Field] = None
    autonomous: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def sigma(self, t, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.m == 0 or self.diffusion is None:
            return np.zeros(np.broadcast_shapes(x.shape[:-1], np.shape(u)[:-1]) + (0, x.shape[-1]))
        return self.diffusion(t, x, u)

    def b(self, t, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.drift(t, x, u), np.broadcast_shapes(x.shape, np.shape(u)[:-1] + (x.shape[-1],)))

    def f(self, t, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.running_cost(t, x, u), np.broadcast_shapes(x.shape[:-1], np.shape(u)[:-1]))

    def h(self, x) -> np.ndarray:
        return self.terminal_cost(np.asarray(x, dtype=float))


def eval_dynamics(dyn: ControlledDynamics, t: float, x: ManifoldPoint, u):
    """Evaluate (b, [sigma_i], f) at one point, checking tangency."""
    u = np.asarray(u, dtype=float)
    b = np.asarray(dyn.b(t, x.coords, u), dtype=float)
    sig = np.asarray(dyn.sigma(t, x.coords, u), dtype=float)
    for v in (b, *sig):
        res = float(dyn.model.kernel.normal_residual(x.coords, v))
        if res > TANGENCY_TOL * max(1.0, float(np.linalg.norm(v))):
            raise NonTangentField(f"field of {dyn.name} has normal component {res:.3e} at {x.coords}")
    drift = TangentVector(x, b)
    diffs = [TangentVector(x, s) for s in sig]
    return drift, diffs, float(dyn.f(t, x.coords, u))


# extension ---------------------------------------------------------------


def cutoff(s, epsilon: float):
    """lambda(s) = (s - eps^2)^2 / eps^4 on [0, eps^2], zero beyond."""
    s = np.asarray(s, dtype=float)
    e2 = epsilon * epsilon
    return np.where(s < e2, (s - e2) ** 2 / (e2 * e2), 0.0)


@dataclass(frozen=True)
class ExtensionConfig:
    model: ManifoldModel
    epsilon: Optional[float] = None
    fd_step: float = FD_STEP

    def __post_init__(self):
        eps = 0.5 * self.model.tubular_radius if self.epsilon is None else float(self.epsilon)
        if not 0 < eps <= self.model.tubular_radius:
            raise ValueError(f"epsilon must lie in (0, {self.model.tubular_radius}]")
        object.__setattr__(self, "epsilon", eps)

    def cutoff(self, s):
        return cutoff(s, self.epsilon)


def extend_field(cfg: ExtensionConfig, vector_field, z, u) -> np.ndarray:
    """Compactly supported extension X(pi(z), u) * lambda(dist^2(z, M)).

    ``vector_field(x, u)`` is a tangent field evaluated on manifold points.
    """
    model = cfg.model
    z = np.asarray(z, dtype=float)
    d2 = model.dist2_to_manifold(z)
    inside = model.projectable(z) & (d2 < cfg.epsilon**2)
    zp = np.where(inside[..., None], z, _anchor(model, z))
    x = model.project(zp)
    lam = np.where(inside, cfg.cutoff(d2), 0.0)
    return np.asarray(vector_field(x, u)) * lam[..., None]


def _anchor(model: ManifoldModel, z):
    # any manifold point works: its value is multiplied by zero
    base = model.random_points(np.random.default_rng(0), 1)[0]
    return np.broadcast_to(base, z.shape)


def ambient_derivative(cfg: ExtensionConfig, vector_field, x, v, u) -> np.ndarray:
    """Central difference d/ds Xbar(x + s v)|_0 of the extended field."""
    h = cfg.fd_step
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return (extend_field(cfg, vector_field, x + h * v, u) - extend_field(cfg, vector_field, x - h * v, u)) / (2 * h)


def covariant_derivative(cfg: ExtensionConfig, vector_field, x, v, u=None):
    """Levi-Civita derivative D_v X as the tangential part of the ambient one.

    Accepts a :class:`ManifoldPoint`/:class:`TangentVector` pair (returns a
    :class:`TangentVector`) or raw arrays (returns an array).
    """
    if isinstance(x, ManifoldPoint):
        d = ambient_derivative(cfg, vector_field, x.coords, v.coords, u)
        return TangentVector(x, cfg.model.tangent_project(x.coords, d))
    d = ambient_derivative(cfg, vector_field, x, v, u)
    return cfg.model.tangent_project(x, d)


def ito_correction(dyn: ControlledDynamics, cfg: ExtensionConfig, t, x, u) -> np.ndarray:
    """Ambient vector 0.5 * sum_i D^E_{sigma_i} sigma_i (normal part included)."""
    x = np.asarray(x, dtype=float)
    if dyn.m == 0 or dyn.diffusion is None:
        return np.zeros(np.broadcast_shapes(x.shape, np.shape(u)[:-1] + (x.shape[-1],)))
    if dyn.ambient_correction is not None:
        return np.asarray(dyn.ambient_correction(t, x, u), dtype=float)
    sig = dyn.sigma(t, x, u)
    total = np.zeros(sig.shape[:-2] + (x.shape[-1],))
    for i in range(dyn.m):
        fi = lambda y, uu, i=i: dyn.sigma(t, y, uu)[..., i, :]  # noqa: E731
        total = total + ambient_derivative(cfg, fi, np.broadcast_to(x, sig[..., i, :].shape), sig[..., i, :], u)
    return 0.5 * total


def fd_ito_correction(dyn: ControlledDynamics, cfg: ExtensionConfig, t, x, u) -> np.ndarray:
    """Finite-difference correction, ignoring any registered closed form."""
    return ito_correction(replace(dyn, ambient_correction=None), cfg, t, x, u)


def corrected_drift(dyn: ControlledDynamics, cfg: ExtensionConfig, t, x, u) -> np.ndarray:
    """Tangential drift b + 0.5 * sum_i D_{sigma_i} sigma_i as arrays."""
    x = np.asarray(x, dtype=float)
    corr = ito_correction(dyn, cfg, t, x, u)
    return dyn.b(t, x, u) + dyn.model.tangent_project(np.broadcast_to(x, corr.shape), corr)


def stratonovich_drift(dyn: ControlledDynamics, cfg: ExtensionConfig, t, x: ManifoldPoint, u) -> TangentVector:
    eval_dynamics(dyn, t, x, u)
    return TangentVector(x, corrected_drift(dyn, cfg, t, x.coords, np.asarray(u, dtype=float)))


def scale_diffusion(dyn: ControlledDynamics, factor: float) -> ControlledDynamics:
    """Dynamics with every sigma_i replaced by ``factor * sigma_i``."""
    if dyn.m == 0:
        return dyn
    diff = dyn.diffusion
    corr = dyn.ambient_correction
    new_corr = None if corr is None else (lambda t, x, u: factor * factor * corr(t, x, u))
    params = dict(dyn.params, sigma_factor=dyn.params.get("sigma_factor", 1.0) * factor)
    return replace(
        dyn,
        diffusion=lambda t, x, u: factor * diff(t, x, u),
        ambient_correction=new_corr,
        bound=dyn.bound + (abs(factor) - 1.0) * dyn.params.get("sigma_bound", dyn.bound),
        params=params,
    )


def shift_terminal(dyn: ControlledDynamics, c: float) -> ControlledDynamics:
    h = dyn.terminal_cost
    return replace(dyn, terminal_cost=lambda x: h(x) + c)


def replace_terminal(dyn: ControlledDynamics, terminal_cost) -> ControlledDynamics:
    return replace(dyn, terminal_cost=terminal_cost)


def replace_horizon(dyn: ControlledDynamics, horizon: float) -> ControlledDynamics:
    return replace(dyn, horizon=horizon, params=dict(dyn.params, horizon=horizon))
