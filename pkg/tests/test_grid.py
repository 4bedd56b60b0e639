import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemctl.geometry import circle_point, torus2
from riemctl.grid import ValueField, circle_grid, icosahedral_grid, icosphere, make_grid


@pytest.mark.parametrize("level,count", [(0, 12), (3, 642), (4, 2562), (5, 10242)])
def test_icosphere_counts(level, count):
    v, f = icosphere(level)
    assert len(v) == count
    assert len(f) == 20 * 4**level
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)


def test_triangles_cover_sphere():
    v, f = icosphere(3)
    tri = v[f]
    # outward orientation and total solid angle 4 pi
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    assert np.all(np.einsum("ij,ij->i", normals, tri.sum(axis=1)) > 0)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    assert np.sum(2 * np.arctan2(num, den)) == pytest.approx(4 * math.pi, rel=1e-12)


def test_min_node_distance_positive():
    g = icosahedral_grid(3)
    d, _ = g.tree.query(g.nodes, k=2)
    assert d[:, 1].min() > 0


@given(st.integers(0, 10**6))
def test_sphere_weights_are_convex(seed):
    g = icosahedral_grid(2)
    q = np.random.default_rng(seed).normal(size=(20, 3))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    idx, w = g.weights(q)
    assert np.all(w >= 0)
    assert np.allclose(w.sum(axis=1), 1.0)
    # the query lies in the cone of its triangle
    recon = np.einsum("qk,qkn->qn", w, g.nodes[idx])
    recon /= np.linalg.norm(recon, axis=1, keepdims=True)
    assert np.allclose(recon, q, atol=1e-12)


@given(st.floats(-10, 10))
def test_ring_weights_are_convex(theta):
    g = circle_grid(37)
    idx, w = g.weights(circle_point(np.array([theta])))
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)


def test_interpolation_exact_at_nodes():
    for g in (circle_grid(50), icosahedral_grid(2)):
        vals = np.sin(np.arange(len(g)))
        assert np.allclose(g.interpolate(vals, g.nodes), vals, atol=1e-12)


def test_ring_interpolation_linear_in_arc():
    g = circle_grid(4)
    vals = np.array([0.0, 1.0, 2.0, 3.0])
    assert g.interpolate(vals, circle_point(np.array([math.pi / 4])))[0] == pytest.approx(0.5)
    assert g.interpolate(vals, circle_point(np.array([-math.pi / 4])))[0] == pytest.approx(1.5)


def test_interp_matrix_matches_interpolate(rng):
    g = icosahedral_grid(2)
    q = rng.normal(size=(30, 3))
    vals = rng.normal(size=len(g))
    assert np.allclose(g.interp_matrix(q) @ vals, g.interpolate(vals, q))


def test_make_grid_dispatch():
    assert len(make_grid(circle_grid(10).model, 10)) == 10
    with pytest.raises(ValueError):
        make_grid(torus2(), 3)


def test_value_field_slices_and_roundtrip(tmp_path):
    g = icosahedral_grid(1)
    times = np.array([0.0, 0.5, 1.0])
    values = np.stack([np.full(len(g), k) for k in range(3)]).astype(float)
    F = ValueField(g, times, values)
    assert np.all(F.slice_at(0.25) == 0.5)
    assert np.all(F.slice_at(-1) == 0) and np.all(F.slice_at(2) == 2)
    assert np.all(F.shifted(1.5).values == values + 1.5)
    path = tmp_path / "field.txt"
    F.save(path)
    G = ValueField.load(path)
    assert np.array_equal(G.times, times) and np.array_equal(G.values, values)
    assert G.grid.kind == "icosahedral" and len(G.grid) == len(g)
