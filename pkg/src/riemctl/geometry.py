"""Closed-form differential geometry of the supported embedded manifolds.

Every manifold lives in ambient coordinates: points are unit vectors (spheres)
or pairs of planar points of radius 1/sqrt(2) (Clifford torus), tangent vectors
are ambient vectors orthogonal to the normal space.  The vectorized kernels on
:class:`ManifoldModel` operate on arrays of shape ``(..., ambient_dim)``; the
module-level functions implement the object API on :class:`ManifoldPoint` and
:class:`TangentVector`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BeyondInjectivityRadius, CutLocus, OutsideTubularNeighborhood

ON_MANIFOLD_TOL = 1e-9
CUT_LOCUS_MARGIN = 1e-9


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _norm(a):
    return np.sqrt(_dot(a, a))


class _SphereKernel:
    """Unit sphere S^n in R^(n+1); n = 1 is the circle."""

    def __init__(self, n: int):
        self.n = n
        self.n1 = n + 1

    def dist2_to_manifold(self, z):
        return (_norm(z) - 1.0) ** 2

    def project(self, z):
        r = _norm(z)
        with np.errstate(invalid="ignore", divide="ignore"):
            return z / r[..., None]

    def projectable(self, z, eps):
        r = _norm(z)
        return (r > 0) & (np.abs(r - 1.0) < eps)

    def tangent_project(self, x, v):
        return v - _dot(x, v)[..., None] * x

    def normal_residual(self, x, v):
        return np.abs(_dot(x, v))

    def exp(self, x, v):
        th = _norm(v)[..., None]
        safe = np.where(th > 0, th, 1.0)
        sinc = np.where(th > 0, np.sin(safe) / safe, 1.0)
        return np.cos(th) * x + sinc * v

    def angle(self, x, y):
        # 2*atan2(|x-y|, |x+y|) is accurate for both tiny and near-antipodal angles
        return 2.0 * np.arctan2(_norm(x - y), _norm(x + y))

    def dist(self, x, y):
        return self.angle(x, y)

    def cut(self, x, y):
        return self.angle(x, y) >= math.pi - CUT_LOCUS_MARGIN

    def log(self, x, y):
        th = self.angle(x, y)[..., None]
        w = y - _dot(x, y)[..., None] * x
        s = _norm(w)[..., None]
        scale = np.where(s > 0, th / np.where(s > 0, s, 1.0), 0.0)
        return scale * w

    def transport(self, x, y, v):
        lg = self.log(x, y)
        th = _norm(lg)[..., None]
        safe = np.where(th > 0, th, 1.0)
        u = np.where(th > 0, lg / safe, 0.0)
        c = _dot(v, u)[..., None]
        return v + c * ((np.cos(th) - 1.0) * u - np.sin(th) * x)

    def tangent_basis(self, x):
        """Orthonormal basis of T_x as an array of shape (..., n, n1)."""
        x = np.asarray(x, dtype=float)
        if self.n == 1:
            return np.stack([-x[..., 1], x[..., 0]], axis=-1)[..., None, :]
        k = np.argmax(np.abs(x), axis=-1)
        eye = np.eye(self.n1)
        ek = eye[k]
        s = np.sign(np.take_along_axis(x, k[..., None], axis=-1))
        s = np.where(s == 0, 1.0, s)
        w = x + s * ek
        H = eye - 2.0 * w[..., :, None] * w[..., None, :] / _dot(w, w)[..., None, None]
        keep = np.ones(x.shape[:-1] + (self.n1,), dtype=bool)
        np.put_along_axis(keep, k[..., None], False, axis=-1)
        rows = H[keep].reshape(x.shape[:-1] + (self.n, self.n1))
        return rows

    def random_points(self, rng, size):
        z = rng.standard_normal((size, self.n1))
        return z / _norm(z)[:, None]


class _TorusKernel:
    """Clifford torus: two circles of radius 1/sqrt(2) in orthogonal planes of R^4."""

    n = 2
    n1 = 4
    r = 1.0 / math.sqrt(2.0)

    @staticmethod
    def _planes(a):
        a = np.asarray(a, dtype=float)
        return a.reshape(a.shape[:-1] + (2, 2))

    @staticmethod
    def _flat(a):
        return a.reshape(a.shape[:-2] + (4,))

    def _etheta(self, p):
        # unit tangent of each plane circle at planar point p (radius r)
        return np.stack([-p[..., 1], p[..., 0]], axis=-1) / self.r

    def _angles(self, x, y):
        px, py = self._planes(x), self._planes(y)
        cross = px[..., 0] * py[..., 1] - px[..., 1] * py[..., 0]
        dot = _dot(px, py)
        return np.arctan2(cross, dot)

    def dist2_to_manifold(self, z):
        return np.sum((_norm(self._planes(z)) - self.r) ** 2, axis=-1)

    def project(self, z):
        p = self._planes(z)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self._flat(self.r * p / _norm(p)[..., None])

    def projectable(self, z, eps):
        p = self._planes(z)
        ok = np.all(_norm(p) > 0, axis=-1)
        return ok & (np.sqrt(self.dist2_to_manifold(z)) < eps)

    def tangent_project(self, x, v):
        px, pv = self._planes(x), self._planes(v)
        e = self._etheta(px)
        return self._flat(_dot(pv, e)[..., None] * e)

    def normal_residual(self, x, v):
        px, pv = self._planes(x), self._planes(v)
        return np.sqrt(np.sum((_dot(px, pv) / self.r) ** 2, axis=-1))

    def exp(self, x, v):
        px, pv = self._planes(x), self._planes(v)
        e = self._etheta(px)
        phi = _dot(pv, e) / self.r
        c, s = np.cos(phi)[..., None], np.sin(phi)[..., None]
        return self._flat(c * px + s * self.r * e)

    def dist(self, x, y):
        d = self.r * self._angles(x, y)
        return np.sqrt(np.sum(d**2, axis=-1))

    def cut(self, x, y):
        return np.any(np.abs(self._angles(x, y)) >= math.pi - CUT_LOCUS_MARGIN, axis=-1)

    def log(self, x, y):
        d = self.r * self._angles(x, y)
        e = self._etheta(self._planes(x))
        return self._flat(d[..., None] * e)

    def transport(self, x, y, v):
        ex = self._etheta(self._planes(x))
        ey = self._etheta(self._planes(y))
        s = _dot(self._planes(v), ex)
        return self._flat(s[..., None] * ey)

    def tangent_basis(self, x):
        e = self._etheta(self._planes(x))
        zero = np.zeros_like(e)
        b1 = np.concatenate([e[..., 0, :], zero[..., 1, :]], axis=-1)
        b2 = np.concatenate([zero[..., 0, :], e[..., 1, :]], axis=-1)
        return np.stack([b1, b2], axis=-2)

    def random_points(self, rng, size):
        a = rng.uniform(0, 2 * math.pi, size=(size, 2))
        p = np.stack([np.cos(a), np.sin(a)], axis=-1) * self.r
        return p.reshape(size, 4)


@dataclass(frozen=True)
class ManifoldModel:
    """Compact embedded manifold with its geometric constants.

    ``safe_radius`` is ``min(i_M / 2, sqrt(1 / (2 C1)), 1)`` with the
    conservative Jacobi constant ``C1 = max(curvature_bound, 1)``.
    ``sectional_curvature`` is the constant curvature used by the Jacobi
    integrator (0 for flat models).
    """

    name: str
    ambient_dim: int
    intrinsic_dim: int
    injectivity_radius: float
    curvature_bound: float
    tubular_radius: float
    sectional_curvature: float
    on_manifold_tol: float = ON_MANIFOLD_TOL
    kernel: object = field(default=None, repr=False, compare=False)

    @property
    def jacobi_constant(self) -> float:
        return max(self.curvature_bound, 1.0)

    @property
    def safe_radius(self) -> float:
        return min(0.5 * self.injectivity_radius, math.sqrt(1.0 / (2.0 * self.jacobi_constant)), 1.0)

    # vectorized kernels -------------------------------------------------
    def project(self, z):
        return self.kernel.project(np.asarray(z, dtype=float))

    def projectable(self, z):
        """True where z lies in the tubular neighborhood of radius epsilon_M."""
        return self.kernel.projectable(np.asarray(z, dtype=float), self.tubular_radius)

    def projection_defined(self, z):
        """True where the nearest manifold point is unique (z off the medial set)."""
        return self.kernel.projectable(np.asarray(z, dtype=float), np.inf)

    def dist2_to_manifold(self, z):
        return self.kernel.dist2_to_manifold(np.asarray(z, dtype=float))

    def tangent_project(self, x, v):
        return self.kernel.tangent_project(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    def exp(self, x, v):
        return self.kernel.exp(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    def log(self, x, y):
        return self.kernel.log(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def dist(self, x, y):
        return self.kernel.dist(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def cut(self, x, y):
        return self.kernel.cut(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def transport(self, x, y, v):
        return self.kernel.transport(
            np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(v, dtype=float)
        )

    def tangent_basis(self, x):
        return self.kernel.tangent_basis(np.asarray(x, dtype=float))

    def random_points(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.kernel.random_points(rng, size)

    def random_tangents(self, rng: np.random.Generator, x, max_norm: float) -> np.ndarray:
        """Tangent vectors at each row of ``x`` with norm uniform in [0, max_norm]."""
        x = np.atleast_2d(x)
        B = self.tangent_basis(x)
        c = rng.standard_normal((x.shape[0], self.intrinsic_dim))
        c /= _norm(c)[:, None]
        c *= rng.uniform(0.0, max_norm, size=(x.shape[0], 1))
        return np.einsum("pi,pij->pj", c, B)

    def on_manifold_residual(self, z):
        return np.sqrt(self.dist2_to_manifold(z))


def circle() -> ManifoldModel:
    return ManifoldModel("circle", 2, 1, math.pi, 0.0, 0.9, 0.0, kernel=_SphereKernel(1))


def sphere2() -> ManifoldModel:
    return ManifoldModel("sphere2", 3, 2, math.pi, 1.0, 0.9, 1.0, kernel=_SphereKernel(2))


def sphere3() -> ManifoldModel:
    return ManifoldModel("sphere3", 4, 3, math.pi, 1.0, 0.9, 1.0, kernel=_SphereKernel(3))


def torus2() -> ManifoldModel:
    r = _TorusKernel.r
    return ManifoldModel("torus2", 4, 2, math.pi * r, 0.0, 0.9 * r, 0.0, kernel=_TorusKernel())


_MODELS = {"circle": circle, "sphere2": sphere2, "torus2": torus2, "sphere3": sphere3}


def get_model(name: str) -> ManifoldModel:
    try:
        return _MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown manifold {name!r}; expected one of {sorted(_MODELS)}") from None


def circle_point(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def circle_angle(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.arctan2(x[..., 1], x[..., 0])


def circle_tangent(x) -> np.ndarray:
    """Unit counter-clockwise tangent e_theta at circle points ``x``."""
    x = np.asarray(x, dtype=float)
    return np.stack([-x[..., 1], x[..., 0]], axis=-1)


# object API -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    model: ManifoldModel
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.shape != (self.model.ambient_dim,):
            raise ValueError(f"expected {self.model.ambient_dim} coordinates, got shape {c.shape}")
        res = float(self.model.on_manifold_residual(c))
        if res > self.model.on_manifold_tol:
            raise ValueError(f"point is off {self.model.name} by {res:.3e}")
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        model = self.base.model
        if c.shape != (model.ambient_dim,):
            raise ValueError(f"expected {model.ambient_dim} coordinates, got shape {c.shape}")
        res = float(model.kernel.normal_residual(self.base.coords, c))
        if res > model.on_manifold_tol * max(1.0, float(_norm(c))):
            raise ValueError(f"vector is not tangent (normal component {res:.3e})")
        object.__setattr__(self, "coords", c)

    @property
    def norm(self) -> float:
        return float(_norm(self.coords))


def point(model: ManifoldModel, coords) -> ManifoldPoint:
    return ManifoldPoint(model, np.asarray(coords, dtype=float))


def project_point(model: ManifoldModel, z) -> ManifoldPoint:
    """Nearest manifold point to the ambient vector ``z``."""
    z = np.asarray(z, dtype=float)
    if not bool(model.projection_defined(z)):
        raise OutsideTubularNeighborhood(f"nearest point on {model.name} is not unique for {z}")
    return ManifoldPoint(model, model.project(z))


def tangent_project(x: ManifoldPoint, v) -> TangentVector:
    return TangentVector(x, x.model.tangent_project(x.coords, np.asarray(v, dtype=float)))


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    model = x.model
    if v.norm >= model.injectivity_radius:
        warnings.warn(
            f"|v| = {v.norm:.4g} >= injectivity radius {model.injectivity_radius:.4g}",
            BeyondInjectivityRadius,
            stacklevel=2,
        )
    y = model.exp(x.coords, v.coords)
    # renormalize away roundoff so the result passes the point invariant
    return ManifoldPoint(model, model.project(y))


def _check_cut(x: ManifoldPoint, y: ManifoldPoint) -> None:
    if bool(x.model.cut(x.coords, y.coords)):
        raise CutLocus(f"{y.coords} lies in the cut locus of {x.coords}")


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    _check_cut(x, y)
    return TangentVector(x, x.model.log(x.coords, y.coords))


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    return float(x.model.dist(x.coords, y.coords))


def parallel_transport(x: ManifoldPoint, y: ManifoldPoint, v: TangentVector) -> TangentVector:
    _check_cut(x, y)
    return TangentVector(y, x.model.transport(x.coords, y.coords, v.coords))


def grad_distance_squared(x: ManifoldPoint, y: ManifoldPoint) -> tuple[TangentVector, TangentVector]:
    """Gradients of rho^2 in each argument: ``(-2 log_x y, -2 log_y x)``."""
    _check_cut(x, y)
    m = x.model
    return (
        TangentVector(x, -2.0 * m.log(x.coords, y.coords)),
        TangentVector(y, -2.0 * m.log(y.coords, x.coords)),
    )
