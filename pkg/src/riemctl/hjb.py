"""Semi-Lagrangian HJB solver, Hamiltonian evaluation, local derivative
recovery, residuals and feedback synthesis.

One backward step at node x reads

    V(t, x) = min_u  f(t, x, u) dt
              + 1/(2m) sum_i [V~(exp_x(dt b0 + sqrt(m dt) sigma_i))
                              + V~(exp_x(dt b0 - sqrt(m dt) sigma_i))]

with b0 = b + 0.5 sum_i D_{sigma_i} sigma_i and V~ the grid interpolant of
the slice at t + dt.  All interpolation weights are nonnegative, so the
scheme is monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .controls import ControlSignal
from .errors import DegenerateStencil, StepTooLarge
from .fields import ControlledDynamics, ControlSet, ExtensionConfig, corrected_drift
from .geometry import ManifoldPoint
from .grid import ManifoldGrid, ValueField
from .sde import IntegratorConfig, time_grid
from .value import ValueEstimate, estimate_J


def _points(controls) -> np.ndarray:
    if isinstance(controls, ControlSet):
        return controls.points
    return np.atleast_2d(np.asarray(controls, dtype=float))


@dataclass(frozen=True, eq=False)
class LocalDerivatives:
    """Gradient coefficients ``chi`` and symmetric Hessian ``A`` in the
    orthonormal tangent basis ``basis`` (rows are ambient vectors) at ``point``."""

    point: np.ndarray
    basis: np.ndarray
    chi: np.ndarray
    A: np.ndarray

    def grad(self) -> np.ndarray:
        """Ambient gradient vector (the dual of chi)."""
        return self.chi @ self.basis

    def chi_of(self, v) -> float:
        return float(self.chi @ (self.basis @ np.asarray(v, float)))

    def A_of(self, v, w) -> float:
        return float((self.basis @ np.asarray(v, float)) @ self.A @ (self.basis @ np.asarray(w, float)))

    def shifted(self, c: float) -> "LocalDerivatives":
        return self


# Hamiltonian ------------------------------------------------------------


def hamiltonian_batch(dyn: ControlledDynamics, t: float, X, U, basis, chi, A,
                      ext: Optional[ExtensionConfig] = None) -> np.ndarray:
    """H(t, x_p, u_j, chi_p, A_p) for every point p and control j, shape (P, q)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    ext = ext or ExtensionConfig(dyn.model)
    P, q = X.shape[0], U.shape[0]
    Xb = np.repeat(X, q, axis=0)
    Ub = np.tile(U, (P, 1))
    b0 = corrected_drift(dyn, ext, t, Xb, Ub).reshape(P, q, -1)
    sig = dyn.sigma(t, Xb, Ub).reshape(P, q, dyn.m, X.shape[1])
    f = dyn.f(t, Xb, Ub).reshape(P, q)
    bc = np.einsum("pan,pqn->pqa", basis, b0)
    first = np.einsum("pa,pqa->pq", chi, bc)
    if dyn.m:
        sc = np.einsum("pan,pqin->pqia", basis, sig)
        second = 0.5 * np.einsum("pqia,pab,pqib->pq", sc, A, sc)
    else:
        second = 0.0
    return second + first + f


def hamiltonian(dyn: ControlledDynamics, t: float, x, u, deriv: LocalDerivatives,
                ext: Optional[ExtensionConfig] = None) -> float:
    """0.5 sum_i A(sigma_i, sigma_i) + chi(b + 0.5 sum_i D_{sigma_i} sigma_i) + f."""
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, dtype=float)
    H = hamiltonian_batch(dyn, t, xc[None], np.atleast_2d(u), deriv.basis[None], deriv.chi[None],
                          deriv.A[None], ext)
    return float(H[0, 0])


def min_hamiltonian(dyn: ControlledDynamics, t: float, x, deriv: LocalDerivatives, controls,
                    ext: Optional[ExtensionConfig] = None):
    """Exact minimum over the finite control grid; ties go to the lowest index."""
    pts = _points(controls)
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, dtype=float)
    H = hamiltonian_batch(dyn, t, xc[None], pts, deriv.basis[None], deriv.chi[None], deriv.A[None], ext)[0]
    j = int(np.argmin(H))
    return float(H[j]), pts[j]


# semi-Lagrangian scheme ---------------------------------------------------


def check_step(dyn: ControlledDynamics, dt: float) -> None:
    reach = dyn.bound * dt + math.sqrt(2 * dyn.m * dt) * dyn.bound
    if reach >= dyn.model.safe_radius:
        raise StepTooLarge(
            f"characteristic reach {reach:.3f} >= safe radius {dyn.model.safe_radius:.3f}; reduce dt"
        )


@dataclass(eq=False)
class StepOperator:
    """Per-control running costs and averaged interpolation matrices of one backward step."""

    costs: np.ndarray  # (q, N), already multiplied by dt
    matrices: list

    def apply(self, V_next: np.ndarray):
        cand = np.stack([c + W @ V_next for c, W in zip(self.costs, self.matrices)])
        j = np.argmin(cand, axis=0)
        return cand[j, np.arange(cand.shape[1])], j


def characteristic_feet(dyn: ControlledDynamics, nodes, t: float, dt: float, u,
                        ext: Optional[ExtensionConfig] = None) -> np.ndarray:
    """Feet exp_x(dt b0 +- sqrt(m dt) sigma_i), shape (N, 2m, n1); (N, 1, n1) when m = 0."""
    ext = ext or ExtensionConfig(dyn.model)
    model = dyn.model
    u = np.broadcast_to(np.asarray(u, dtype=float), (len(nodes), len(np.atleast_1d(u))))
    b0 = corrected_drift(dyn, ext, t, nodes, u)
    if dyn.m == 0:
        return model.exp(nodes, dt * b0)[:, None, :]
    sig = dyn.sigma(t, nodes, u)
    s = math.sqrt(dyn.m * dt)
    steps = np.concatenate([dt * b0[:, None] + s * sig, dt * b0[:, None] - s * sig], axis=1)
    return model.exp(nodes[:, None, :], steps)


def build_step_operator(dyn: ControlledDynamics, grid: ManifoldGrid, t: float, dt: float, controls,
                        ext: Optional[ExtensionConfig] = None) -> StepOperator:
    check_step(dyn, dt)
    nodes = grid.nodes
    N = len(nodes)
    costs, mats = [], []
    for u in _points(controls):
        feet = characteristic_feet(dyn, nodes, t, dt, u, ext)
        r = feet.shape[1]
        W = grid.interp_matrix(feet.reshape(-1, feet.shape[-1]))
        # average the r feet of each node: rows n*r .. n*r + r - 1 belong to node n
        avg = sparse.csr_matrix((np.full(N * r, 1.0 / r), (np.repeat(np.arange(N), r), np.arange(N * r))),
                                shape=(N, N * r))
        mats.append((avg @ W).tocsr())
        costs.append(dyn.f(t, nodes, np.broadcast_to(u, (N, len(u)))) * dt)
    return StepOperator(np.array(costs), mats)


def semi_lagrangian_step(dyn: ControlledDynamics, grid: ManifoldGrid, V_next, t: float, dt: float,
                         controls, ext: Optional[ExtensionConfig] = None) -> np.ndarray:
    op = build_step_operator(dyn, grid, t, dt, controls, ext)
    return op.apply(np.asarray(V_next, dtype=float))[0]


def solve_backward(dyn: ControlledDynamics, grid: ManifoldGrid, dt: float, controls=None,
                   ext: Optional[ExtensionConfig] = None, t0: float = 0.0) -> ValueField:
    """Value slices from V(T) = h down to t0 on a uniform time grid."""
    controls = dyn.controls if controls is None else controls
    times = time_grid(t0, dyn.horizon, dt)
    K = len(times) - 1
    values = np.empty((K + 1, len(grid)))
    policy = np.zeros((K, len(grid)), dtype=int)
    values[K] = dyn.h(grid.nodes)
    op = None
    for k in range(K - 1, -1, -1):
        if op is None or not dyn.autonomous:
            op = build_step_operator(dyn, grid, times[k], times[k + 1] - times[k], controls, ext)
        values[k], policy[k] = op.apply(values[k + 1])
    meta = {"problem": dyn.name, "dt": dt, "policy": policy, "controls": _points(controls)}
    return ValueField(grid, times, values, "linear", meta)


# local derivatives --------------------------------------------------------


def _features(c: np.ndarray) -> np.ndarray:
    """[1, c, quadratic monomials] with 0.5 on squares, for c of shape (..., n)."""
    n = c.shape[-1]
    cols = [np.ones(c.shape[:-1]), *[c[..., i] for i in range(n)]]
    for i in range(n):
        for j in range(i, n):
            cols.append(0.5 * c[..., i] ** 2 if i == j else c[..., i] * c[..., j])
    return np.stack(cols, axis=-1)


def _unpack(coef: np.ndarray, n: int):
    chi = coef[..., 1:1 + n]
    A = np.empty(coef.shape[:-1] + (n, n))
    k = 1 + n
    for i in range(n):
        for j in range(i, n):
            A[..., i, j] = A[..., j, i] = coef[..., k]
            k += 1
    return chi, A


def stencil_size(n: int) -> int:
    p = 1 + n + n * (n + 1) // 2
    return 2 * p + 1


def local_derivatives_batch(field: ValueField, t: float, X, k: Optional[int] = None):
    """Least-squares quadratic fit of the slice at t around each row of X.

    Returns ``(basis, chi, A)`` with shapes (P, n, n1), (P, n), (P, n, n).
    """
    grid = field.grid
    model = grid.model
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = model.intrinsic_dim
    k = k or stencil_size(n)
    if k > len(grid):
        raise DegenerateStencil(f"stencil needs {k} nodes but the grid has {len(grid)}")
    V = field.slice_at(t)
    _, idx = grid.tree.query(X, k=k)
    basis = model.tangent_basis(X)
    w = model.log(X[:, None, :], grid.nodes[idx])
    c = np.einsum("pan,pkn->pka", basis, w)
    D = _features(c)
    h = grid.spacing
    wt = 1.0 / (1.0 + np.sum(c * c, axis=-1) / (h * h))
    Dw = D * wt[..., None]
    d = V[idx]
    d = d - d.mean(axis=1, keepdims=True)
    s = np.linalg.svd(Dw, compute_uv=False)
    if np.any(s[:, -1] <= 1e-10 * s[:, 0]):
        raise DegenerateStencil("local derivative stencil is rank deficient; refine the grid")
    coef = np.einsum("pij,pj->pi", np.linalg.pinv(Dw), d * wt)
    chi, A = _unpack(coef, n)
    return basis, chi, A


def local_derivatives(field: ValueField, t: float, x, k: Optional[int] = None) -> LocalDerivatives:
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, dtype=float)
    basis, chi, A = local_derivatives_batch(field, t, xc[None], k)
    return LocalDerivatives(xc, basis[0], chi[0], A[0])


def _slice_index(field: ValueField, t: float) -> int:
    k = int(np.argmin(np.abs(field.times - t)))
    return k


def time_derivative(field: ValueField, t: float, X) -> np.ndarray:
    """Central difference over slices around t (one-sided at the ends)."""
    X = np.atleast_2d(X)
    times = field.times
    k = _slice_index(field, t)
    lo, hi = max(k - 1, 0), min(k + 1, len(times) - 1)
    g = field.grid
    return (g.interpolate(field.values[hi], X) - g.interpolate(field.values[lo], X)) / (times[hi] - times[lo])


def hjb_residual_batch(dyn: ControlledDynamics, field: ValueField, t: float, X, controls=None,
                       ext: Optional[ExtensionConfig] = None) -> np.ndarray:
    controls = dyn.controls if controls is None else controls
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tk = field.times[_slice_index(field, t)]
    basis, chi, A = local_derivatives_batch(field, tk, X)
    H = hamiltonian_batch(dyn, tk, X, _points(controls), basis, chi, A, ext)
    return np.abs(time_derivative(field, tk, X) + H.min(axis=1))


def hjb_residual(dyn: ControlledDynamics, field: ValueField, t: float, x, controls=None,
                 ext: Optional[ExtensionConfig] = None) -> float:
    """|dV/dt + min_u H(t, x, u, DV, D^2V)| at the slice nearest to t."""
    if not field.times[0] < t < field.times[-1]:
        raise ValueError("residual is defined at interior times only")
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, dtype=float)
    return float(hjb_residual_batch(dyn, field, t, xc[None], controls, ext)[0])


# feedback -----------------------------------------------------------------


@dataclass(eq=False)
class FeedbackPolicy:
    """u = argmin_u H(t, x, u, DV, D^2V) with derivatives recovered from a value field."""

    dyn: ControlledDynamics
    field: ValueField
    controls: np.ndarray
    ext: Optional[ExtensionConfig] = None
    calls: int = field(default=0)

    def __call__(self, t: float, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.calls += 1
        if len(self.controls) == 1:
            return np.broadcast_to(self.controls[0], (len(X), self.controls.shape[1]))
        basis, chi, A = local_derivatives_batch(self.field, t, X)
        H = hamiltonian_batch(self.dyn, t, X, self.controls, basis, chi, A, self.ext)
        return self.controls[np.argmin(H, axis=1)]


def feedback_control(dyn: ControlledDynamics, field: ValueField, t: float, x, controls=None,
                     ext: Optional[ExtensionConfig] = None) -> np.ndarray:
    controls = dyn.controls if controls is None else controls
    xc = x.coords if isinstance(x, ManifoldPoint) else np.asarray(x, dtype=float)
    return FeedbackPolicy(dyn, field, _points(controls), ext)(t, xc[None])[0]


def closed_loop_estimate(dyn: ControlledDynamics, field: ValueField, t0: float, x0, controls, n_paths: int,
                         cfg: IntegratorConfig) -> tuple[ValueEstimate, float]:
    """Cost estimate under the synthesized feedback, and the field value at (t0, x0)."""
    controls = dyn.controls if controls is None else controls
    xc = x0.coords if isinstance(x0, ManifoldPoint) else np.asarray(x0, dtype=float)
    sig = ControlSignal.feedback(FeedbackPolicy(dyn, field, _points(controls)))
    est = estimate_J(dyn, t0, xc, sig, n_paths, cfg)
    return est, float(field.interpolate(t0, xc[None])[0])


def closed_loop_gap(dyn: ControlledDynamics, field: ValueField, t0: float, x0, controls, n_paths: int,
                    cfg: IntegratorConfig) -> float:
    """estimate_J under the feedback control minus V~(t0, x0)."""
    est, v0 = closed_loop_estimate(dyn, field, t0, x0, controls, n_paths, cfg)
    return est.mean - v0
