"""Jacobi fields along short geodesics, the Hessian of the squared distance,
and certification of the associated curvature estimates.

Fields are integrated in a parallel orthonormal frame {e_1..e_n} along the
geodesic with e_n = gamma'.  For the constant-curvature models shipped here
the component system is

    Jbar_i'' = -sign * K * Jbar_i   (i < n),      Jbar_n'' = 0,

with K the sectional curvature.  ``sign=+1`` is the standard convention
J'' + R(J, gamma')gamma' = 0; ``sign=-1`` integrates the opposite sign so the
two can be compared.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ConjugatePoint, CutLocus
from .geometry import ManifoldModel, ManifoldPoint, TangentVector

STANDARD = 1
FLIPPED = -1


def _coords(p) -> np.ndarray:
    if isinstance(p, (ManifoldPoint, TangentVector)):
        return np.asarray(p.coords, dtype=float)
    return np.asarray(p, dtype=float)


def sample_count(length: float) -> int:
    return max(32, int(math.ceil(length / 0.01)))


@dataclass(eq=False)
class GeodesicSegment:
    """Unit-speed minimizing geodesic from x to y with a parallel frame."""

    model: ManifoldModel
    x: np.ndarray
    y: np.ndarray
    sign: int = STANDARD

    def __post_init__(self):
        self.x = _coords(self.x)
        self.y = _coords(self.y)
        self.length = float(self.model.dist(self.x, self.y))
        if self.length <= 0:
            raise ValueError("segment endpoints coincide")
        if self.model.cut(self.x, self.y):
            raise CutLocus("segment endpoints are cut points")
        self.velocity = self.model.log(self.x, self.y) / self.length
        self.n_samples = sample_count(self.length)
        self.times = np.linspace(0.0, self.length, self.n_samples + 1)

    @cached_property
    def frame(self) -> np.ndarray:
        """Orthonormal frame at x, rows e_1..e_n, with e_n = gamma'(0)."""
        u = self.velocity
        B = self.model.tangent_basis(self.x)
        B = B - np.outer(B @ u, u)
        keep = np.argsort(-np.linalg.norm(B, axis=1))[: self.model.intrinsic_dim - 1]
        rows = []
        for r in B[np.sort(keep)]:
            for q in rows:
                r = r - (r @ q) * q
            rows.append(r / np.linalg.norm(r))
        return np.array(rows + [u])

    def point(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return self.model.exp(self.x, s[:, None] * self.velocity)

    def frame_at(self, s) -> np.ndarray:
        """Transported frame at gamma(s), shape (len(s), n, n1)."""
        pts = self.point(s)
        E = self.frame
        return self.model.transport(self.x, pts[:, None, :], E[None])

    @cached_property
    def frame_y(self) -> np.ndarray:
        E = self.frame
        return self.model.transport(np.broadcast_to(self.x, E.shape), np.broadcast_to(self.y, E.shape), E)

    @cached_property
    def generator(self) -> np.ndarray:
        """Matrix M of the first-order system (Jbar, Jbar')' = M (Jbar, Jbar')."""
        n = self.model.intrinsic_dim
        K = np.full(n, self.sign * self.model.sectional_curvature)
        K[-1] = 0.0
        M = np.zeros((2 * n, 2 * n))
        M[:n, n:] = np.eye(n)
        M[n:, :n] = -np.diag(K)
        return M

    @cached_property
    def propagators(self) -> np.ndarray:
        """RK4 state-transition matrices Phi(s_p), shape (P+1, 2n, 2n)."""
        M = self.generator
        h = self.length / self.n_samples
        hM = h * M
        I = np.eye(len(M))
        R = I + hM @ (I + hM @ (I / 2 + hM @ (I / 6 + hM / 24)))
        out = np.empty((self.n_samples + 1,) + M.shape)
        out[0] = I
        for p in range(self.n_samples):
            out[p + 1] = R @ out[p]
        return out


@dataclass(eq=False)
class JacobiField:
    """Frame components ``comps[p]`` and ``dcomps[p]`` of J and J' at ``segment.times[p]``."""

    segment: GeodesicSegment
    comps: np.ndarray
    dcomps: np.ndarray

    @cached_property
    def _frames(self) -> np.ndarray:
        return self.segment.frame_at(self.segment.times)

    @property
    def values(self) -> np.ndarray:
        """Ambient J(s_p), shape (P+1, n1)."""
        return np.einsum("pa,pan->pn", self.comps, self._frames)

    @property
    def derivatives(self) -> np.ndarray:
        return np.einsum("pa,pan->pn", self.dcomps, self._frames)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.comps, axis=1)

    def start_derivative(self) -> np.ndarray:
        return self.dcomps[0] @ self.segment.frame

    def end_value(self) -> np.ndarray:
        return self.comps[-1] @ self.segment.frame_y

    def end_derivative(self) -> np.ndarray:
        return self.dcomps[-1] @ self.segment.frame_y

    def ode_residual(self) -> float:
        """max |Jbar'' - M-part| with Jbar'' from 4th-order differences of Jbar'."""
        seg = self.segment
        n = seg.model.intrinsic_dim
        h = seg.length / seg.n_samples
        d2 = _diff4(self.dcomps, h)
        rhs = self.comps @ seg.generator[n:, :n].T
        return float(np.max(np.abs(d2 - rhs)))


def _diff4(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative of samples f (P+1, ...) with spacing h."""
    d = np.empty_like(f)
    d[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def make_segment(model: ManifoldModel, x, y, sign: int = STANDARD) -> GeodesicSegment:
    return GeodesicSegment(model, _coords(x), _coords(y), sign)


def _field_from_state(seg: GeodesicSegment, state: np.ndarray) -> JacobiField:
    n = seg.model.intrinsic_dim
    traj = seg.propagators @ state
    return JacobiField(seg, traj[:, :n], traj[:, n:])


def integrate_jacobi(segment: GeodesicSegment, v, vp) -> JacobiField:
    """Jacobi field with J(0) = v and J'(0) = vp (tangent vectors at x)."""
    E = segment.frame
    return _field_from_state(segment, np.concatenate([E @ _coords(v), E @ _coords(vp)]))


def boundary_jacobi(segment: GeodesicSegment, v, w) -> JacobiField:
    """The Jacobi field with J(0) = v and J(l) = w, found by a linear solve on J'(0)."""
    n = segment.model.intrinsic_dim
    a = segment.frame @ _coords(v)
    target = segment.frame_y @ _coords(w)
    Phi = segment.propagators[-1]
    S = Phi[:n, n:]
    if np.linalg.cond(S) > 1e12:
        raise ConjugatePoint("endpoint map is singular; the endpoints are conjugate")
    b = np.linalg.solve(S, target - Phi[:n, :n] @ a)
    return _field_from_state(segment, np.concatenate([a, b]))


def quadform_on_segment(segment: GeodesicSegment, v, w) -> float:
    J = boundary_jacobi(segment, v, w)
    a = segment.frame @ _coords(v)
    target = segment.frame_y @ _coords(w)
    return 2.0 * segment.length * (float(target @ J.dcomps[-1]) - float(a @ J.dcomps[0]))


def distance_hessian_quadform(model: ManifoldModel, x, y, v, w, sign: int = STANDARD) -> float:
    """A((v, w), (v, w)) = 2 l (<w, J'(l)> - <v, J'(0)>) for the boundary Jacobi field J."""
    return quadform_on_segment(make_segment(model, x, y, sign), v, w)


def fd_quadform(model: ManifoldModel, x, y, v, w, h: float = 1e-3) -> float:
    """d^2/ds^2 rho^2(exp_x(s v), exp_y(s w)) at 0, central differences with one Richardson step."""
    x, y, v, w = map(_coords, (x, y, v, w))

    def r2(s):
        return float(model.dist(model.exp(x, s * v), model.exp(y, s * w))) ** 2

    def second(k):
        return (r2(k) - 2 * r2(0.0) + r2(-k)) / (k * k)

    return (4 * second(h / 2) - second(h)) / 3


@dataclass(eq=False)
class DistanceHessian:
    """Matrix of D^2 rho^2 at (x, y) in the synchronized bases (rows of ex, ey)."""

    x: np.ndarray
    y: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    matrix: np.ndarray
    rho: float

    def deviation(self) -> np.ndarray:
        """A - 2 A_I."""
        return self.matrix - 2.0 * identity_block(len(self.ex))

    def swapped(self) -> np.ndarray:
        """Block-swap conjugate of the matrix; equals the Hessian computed at (y, x)."""
        n = len(self.ex)
        perm = np.r_[np.arange(n, 2 * n), np.arange(n)]
        return self.matrix[np.ix_(perm, perm)]


def identity_block(n: int) -> np.ndarray:
    """A_I = [[I, -I], [-I, I]]."""
    I = np.eye(n)
    return np.block([[I, -I], [-I, I]])


def synchronized_bases(model: ManifoldModel, x, y, ex: Optional[np.ndarray] = None):
    x, y = _coords(x), _coords(y)
    ex = model.tangent_basis(x) if ex is None else np.asarray(ex, dtype=float)
    ey = model.transport(np.broadcast_to(x, ex.shape), np.broadcast_to(y, ex.shape), ex)
    return ex, ey


def distance_hessian_matrix(model: ManifoldModel, x, y, sign: int = STANDARD,
                            ex: Optional[np.ndarray] = None) -> DistanceHessian:
    """Entries by polarization, A_ij = (A(E_i + E_j) - A(E_i - E_j)) / 4."""
    seg = make_segment(model, x, y, sign)
    ex, ey = synchronized_bases(model, seg.x, seg.y, ex)
    n = len(ex)
    n1 = seg.x.shape[0]
    E = np.zeros((2 * n, 2, n1))
    E[:n, 0] = ex
    E[n:, 1] = ey[np.arange(n)]
    A = np.empty((2 * n, 2 * n))
    for i in range(2 * n):
        A[i, i] = quadform_on_segment(seg, *E[i])
        for j in range(i):
            plus = E[i] + E[j]
            minus = E[i] - E[j]
            A[i, j] = A[j, i] = 0.25 * (quadform_on_segment(seg, *plus) - quadform_on_segment(seg, *minus))
    return DistanceHessian(seg.x, seg.y, ex, ey, A, seg.length)


# certification -------------------------------------------------------------


def j1_ratios(segment: GeodesicSegment, v) -> np.ndarray:
    """||J_1(t)|| / ||v|| at the sample times, where J(0)=0, J'(0)=v and J_1 = J/t (J_1(0) = v)."""
    v = _coords(v)
    J = integrate_jacobi(segment, np.zeros_like(v), v)
    t = segment.times
    norms = np.empty(len(t))
    norms[0] = np.linalg.norm(v)
    norms[1:] = J.norms()[1:] / t[1:]
    return norms / np.linalg.norm(v)


@dataclass
class CertificationRecord:
    """Per-pair certification metrics (``flipped_*`` use the opposite curvature sign)."""

    rho: float
    deviation_ratios: np.ndarray
    a2_entry: float
    a2_ratio: float
    j1_min: float
    j1_max: float
    jacobi_bound_ratio: float
    ode_residual: float
    fd_rel_error: float
    flipped_deviation_ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flipped_a2_ratio: float = 0.0
    flipped_j1_min: float = 1.0
    flipped_j1_max: float = 1.0

    def passes(self, curvature_bound: float, slack: float = 1e-12) -> dict:
        return {
            "hessian_deviation": bool(np.all(self.deviation_ratios <= 6 * curvature_bound + slack)),
            "j1": bool(0.5 <= self.j1_min and self.j1_max <= 1.5),
            "jacobi_bound": bool(self.jacobi_bound_ratio <= 3.0),
            "ode": bool(self.ode_residual <= 1e-8),
            "fd": bool(self.fd_rel_error <= 1e-4),
        }


def _deviation_ratios(seg: GeodesicSegment, model, vs, ws) -> np.ndarray:
    out = np.empty(len(vs))
    for k, (v, w) in enumerate(zip(vs, ws)):
        q = quadform_on_segment(seg, v, w)
        Lv = model.transport(seg.x, seg.y, v)
        ref = 2.0 * float(np.sum((w - Lv) ** 2))
        scale = (np.linalg.norm(v) + np.linalg.norm(w)) ** 2 * seg.length ** 2
        out[k] = abs(q - ref) / scale
    return out


def certify_estimates(model: ManifoldModel, x, y, vs, ws, fd_check: bool = True) -> CertificationRecord:
    """Evaluate the curvature estimates at the pair (x, y) on tangent samples vs (at x), ws (at y)."""
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    seg = make_segment(model, x, y)
    flip = make_segment(model, x, y, FLIPPED)
    rho = seg.length
    dev = _deviation_ratios(seg, model, vs, ws)
    fdev = _deviation_ratios(flip, model, vs, ws)

    def a2(sgn):
        H = distance_hessian_matrix(model, seg.x, seg.y, sgn).matrix
        e = float(np.max(np.abs(H @ H - 4 * H)))
        return e, e / rho ** 2

    a2_entry, a2_ratio = a2(STANDARD)
    _, fa2 = a2(FLIPPED)
    r = j1_ratios(seg, vs[0])
    fr = j1_ratios(flip, vs[0])
    J = boundary_jacobi(seg, vs[0], ws[0])
    bound = float(J.norms().max() / (np.linalg.norm(vs[0]) + np.linalg.norm(ws[0])))
    fd_err = 0.0
    if fd_check:
        q = quadform_on_segment(seg, vs[0], ws[0])
        ref = fd_quadform(model, seg.x, seg.y, vs[0], ws[0])
        fd_err = abs(q - ref) / max(abs(ref), float(vs[0] @ vs[0] + ws[0] @ ws[0]))
    return CertificationRecord(rho, dev, a2_entry, a2_ratio, float(r.min()), float(r.max()), bound,
                               J.ode_residual(), fd_err, fdev, fa2, float(fr.min()), float(fr.max()))


def random_pair(model: ManifoldModel, rng: np.random.Generator, rho: float):
    """A point x and y = exp_x(rho u) for a random unit tangent u."""
    x = model.random_points(rng, 1)[0]
    u = model.random_tangents(rng, x[None], 1.0)[0]
    u = u / np.linalg.norm(u)
    return x, model.exp(x, rho * u)


def random_tangent(model: ManifoldModel, rng: np.random.Generator, x) -> np.ndarray:
    g = rng.standard_normal(model.ambient_dim)
    return model.tangent_project(_coords(x), g)


def write_certification_csv(filename, records, pairs) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        n1 = len(pairs[0][0]) if pairs else 0
        w.writerow([f"x{i}" for i in range(n1)] + [f"y{i}" for i in range(n1)]
                   + ["rho", "max_deviation_ratio", "a2_ratio", "j1_min", "j1_max", "jacobi_bound_ratio",
                      "fd_rel_error", "flipped_max_deviation_ratio", "flipped_a2_ratio"])
        for rec, (x, y) in zip(records, pairs):
            w.writerow([repr(float(c)) for c in x] + [repr(float(c)) for c in y]
                       + [repr(v) for v in (rec.rho, float(rec.deviation_ratios.max()), rec.a2_ratio, rec.j1_min,
                                            rec.j1_max, rec.jacobi_bound_ratio, rec.fd_rel_error,
                                            float(rec.flipped_deviation_ratios.max()), rec.flipped_a2_ratio)])
