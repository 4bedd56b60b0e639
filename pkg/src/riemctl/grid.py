"""Manifold grids with monotone linear interpolation, and time-sliced value fields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .geometry import ManifoldModel, circle, circle_angle, circle_point, get_model, sphere2

TWO_PI = 2.0 * math.pi


def _icosahedron():
    p = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(level: int):
    """Nodes and outward-oriented triangles of the level-``level`` icosahedral subdivision."""
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new)
    return np.array(verts), np.asarray(faces)


class ManifoldGrid:
    """Nodes on a manifold plus an interpolation rule.

    Circle grids are uniform rings with linear interpolation in arc length;
    sphere grids are icosahedral triangulations with barycentric weights of
    the radial (gnomonic) projection onto the containing flat triangle.
    Weights are always nonnegative and sum to one.
    """

    def __init__(self, model: ManifoldModel, nodes: np.ndarray, kind: str, resolution: int,
                 facets: Optional[np.ndarray] = None):
        self.model = model
        self.nodes = np.asarray(nodes, dtype=float)
        self.kind = kind
        self.resolution = resolution
        self.facets = facets
        if kind == "icosahedral":
            tri = self.nodes[facets]
            self._facet_inv = np.linalg.inv(np.transpose(tri, (0, 2, 1)))
            cent = tri.sum(axis=1)
            self._facet_tree = cKDTree(cent / np.linalg.norm(cent, axis=1, keepdims=True))

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.nodes)

    @cached_property
    def spacing(self) -> float:
        """Mean geodesic length of grid edges."""
        e = self.edges
        return float(np.mean(self.model.dist(self.nodes[e[:, 0]], self.nodes[e[:, 1]])))

    @cached_property
    def edges(self) -> np.ndarray:
        if self.kind == "ring":
            i = np.arange(len(self))
            return np.stack([i, (i + 1) % len(self)], axis=1)
        f = self.facets
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def node_facets(self) -> list[np.ndarray]:
        """Indices of the triangles adjacent to each node (empty lists on rings)."""
        if self.facets is None:
            return [np.empty(0, dtype=int) for _ in range(len(self))]
        owners = [[] for _ in range(len(self))]
        for j, tri in enumerate(self.facets):
            for v in tri:
                owners[v].append(j)
        return [np.array(o) for o in owners]

    # interpolation ----------------------------------------------------
    def weights(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Node indices and weights, each of shape (Q, r), for query points q (Q, n1)."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if self.kind == "ring":
            n = len(self)
            s = np.mod(circle_angle(q), TWO_PI) * (n / TWO_PI)
            j = np.floor(s).astype(int)
            frac = s - j
            j %= n
            return np.stack([j, (j + 1) % n], axis=1), np.stack([1.0 - frac, frac], axis=1)
        return self._sphere_weights(q)

    def _sphere_weights(self, q):
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        k = min(8, len(self.facets))
        _, cand = self._facet_tree.query(qn, k=k)
        mu = np.einsum("qkij,qj->qki", self._facet_inv[cand], qn)
        score = mu.min(axis=2)
        best = np.argmax(score, axis=1)
        rows = np.arange(len(qn))
        fid = cand[rows, best]
        mu_best = mu[rows, best]
        bad = score[rows, best] < -1e-10
        if np.any(bad):
            mu_all = np.einsum("fij,qj->qfi", self._facet_inv, qn[bad])
            fb = np.argmax(mu_all.min(axis=2), axis=1)
            fid[bad] = fb
            mu_best[bad] = mu_all[np.arange(bad.sum()), fb]
        mu_best = np.clip(mu_best, 0.0, None)
        w = mu_best / mu_best.sum(axis=1, keepdims=True)
        return self.facets[fid], w

    def interpolate(self, values, q) -> np.ndarray:
        idx, w = self.weights(q)
        return np.sum(np.asarray(values)[idx] * w, axis=1)

    def interp_matrix(self, q) -> sparse.csr_matrix:
        idx, w = self.weights(q)
        Q, r = idx.shape
        rows = np.repeat(np.arange(Q), r)
        return sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(Q, len(self)))


def circle_grid(n_nodes: int) -> ManifoldGrid:
    theta = TWO_PI * np.arange(n_nodes) / n_nodes
    return ManifoldGrid(circle(), circle_point(theta), "ring", n_nodes)


def icosahedral_grid(level: int) -> ManifoldGrid:
    nodes, faces = icosphere(level)
    return ManifoldGrid(sphere2(), nodes, "icosahedral", level, faces)


def make_grid(model: ManifoldModel, resolution: int) -> ManifoldGrid:
    """Ring of ``resolution`` nodes on the circle, icosahedral level ``resolution`` on S^2."""
    if model.name == "circle":
        return circle_grid(resolution)
    if model.name == "sphere2":
        return icosahedral_grid(resolution)
    raise ValueError(f"no grid construction for {model.name}")


@dataclass(eq=False)
class ValueField:
    """Value slices ``values[k]`` at ``times[k]`` on a grid; linear in time between slices."""

    grid: ManifoldGrid
    times: np.ndarray
    values: np.ndarray
    interpolation: str = "linear"
    meta: dict = field(default_factory=dict)

    def slice_at(self, t: float) -> np.ndarray:
        times = self.times
        if t <= times[0]:
            return self.values[0]
        if t >= times[-1]:
            return self.values[-1]
        k = int(np.searchsorted(times, t, side="right")) - 1
        span = times[k + 1] - times[k]
        a = (t - times[k]) / span
        if a < 1e-9:
            return self.values[k]
        if a > 1 - 1e-9:
            return self.values[k + 1]
        return (1 - a) * self.values[k] + a * self.values[k + 1]

    def interpolate(self, t: float, q) -> np.ndarray:
        return self.grid.interpolate(self.slice_at(t), q)

    def shifted(self, c: float) -> "ValueField":
        return ValueField(self.grid, self.times, self.values + c, self.interpolation, dict(self.meta))

    # text exchange format ---------------------------------------------
    def save(self, filename) -> None:
        g = self.grid
        with open(filename, "w") as fh:
            fh.write("# riemctl value field\n")
            fh.write(f"model = {g.model.name}\n")
            fh.write(f"grid = {g.kind}\n")
            fh.write(f"resolution = {g.resolution}\n")
            fh.write(f"nodes = {len(g)}\n")
            fh.write(f"slices = {len(self.times)}\n")
            dt = float(np.mean(np.diff(self.times))) if len(self.times) > 1 else 0.0
            fh.write(f"dt = {dt!r}\n")
            fh.write(f"interpolation = {self.interpolation}\n")
            fh.write("# t node_id coords... value\n")
            for k, t in enumerate(self.times):
                for j, x in enumerate(g.nodes):
                    coords = " ".join(repr(float(c)) for c in x)
                    fh.write(f"{float(t)!r} {j} {coords} {float(self.values[k, j])!r}\n")

    @classmethod
    def load(cls, filename) -> "ValueField":
        header: dict[str, str] = {}
        rows = []
        with open(filename) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" in line:
                    k, v = line.split("=", 1)
                    header[k.strip()] = v.strip()
                else:
                    rows.append([float(s) for s in line.split()])
        grid = make_grid(get_model(header["model"]), int(header["resolution"]))
        n, ns = int(header["nodes"]), int(header["slices"])
        data = np.array(rows)
        if data.shape[0] != n * ns or n != len(grid):
            raise ValueError("value field file does not match its header")
        coords = data[:n, 2:-1]
        if not np.allclose(coords, grid.nodes, atol=1e-12):
            raise ValueError("stored node coordinates differ from the reconstructed grid")
        times = data[::n, 0]
        values = data[:, -1].reshape(ns, n)
        return cls(grid, times, values, header.get("interpolation", "linear"))
