import math

import numpy as np
import pytest

from riemctl import problems
from riemctl.controls import ControlSignal
from riemctl.errors import EnumerationTooLarge
from riemctl.fields import ControlSet
from riemctl.grid import ValueField, circle_grid
from riemctl.sde import IntegratorConfig, simulate_path
from riemctl.value import brute_force_value, dpp_gap, estimate_J, path_cost, write_value_rows

X1 = np.array([1.0, 0.0])


def test_path_cost_examples():
    z = problems.zero_problem(horizon=1.0)
    path = simulate_path(z, IntegratorConfig(dt=0.1), 0.0, np.array([0, 0, 1.0]), ControlSignal.constant([0], 0, 1))
    assert path_cost(z, path) == 0.0
    one = problems.zero_problem(horizon=1.0, running=1.0)
    assert path_cost(one, path) == 1.0
    h3 = problems.zero_problem(horizon=1.0, terminal=lambda x: np.asarray(x)[..., 2])
    assert path_cost(h3, path) == 1.0


def test_estimate_j_deterministic():
    dyn = problems.circle_steering()
    est = estimate_J(dyn, 0.0, X1, ControlSignal.constant([-1.0], 0, 0.2), 5, IntegratorConfig())
    assert est.stderr == 0 and est.mean == pytest.approx(math.sin(-0.2), abs=1e-5)
    z = problems.zero_problem(horizon=2.0, running=0.5, terminal=lambda x: np.asarray(x)[..., 0])
    est = estimate_J(z, 0.5, np.array([0.6, 0.8, 0.0]), ControlSignal.constant([0], 0.5, 2.0), 3, IntegratorConfig())
    assert est.mean == pytest.approx(0.5 * 1.5 + 0.6, abs=1e-12)
    with pytest.raises(ValueError):
        estimate_J(z, 0.0, np.array([0, 0, 1.0]), ControlSignal.constant([0], 0, 2), 1, IntegratorConfig())


def test_stderr_scales_like_inverse_sqrt_n():
    dyn = problems.sphere2_bm(horizon=0.3)
    u = ControlSignal.constant([0.0], 0, 0.3)
    a = estimate_J(dyn, 0, np.array([0, 0, 1.0]), u, 1000, IntegratorConfig(dt=0.02))
    b = estimate_J(dyn, 0, np.array([0, 0, 1.0]), u, 4000, IntegratorConfig(dt=0.02))
    assert 1.5 < a.stderr / b.stderr < 2.7


def test_brute_force_examples():
    dyn = problems.circle_steering()
    cfg = IntegratorConfig()
    best, sig = brute_force_value(dyn, 0.0, X1, 2, dyn.controls, 2, cfg)
    assert np.allclose(sig.values[:, 0], [-1, -1])
    assert best.mean == pytest.approx(math.sin(-0.2), abs=1e-5)
    one = ControlSet.finite([[0.5]])
    b1, _ = brute_force_value(dyn, 0.0, X1, 1, one, 2, cfg)
    ref = estimate_J(dyn, 0.0, X1, ControlSignal.constant([0.5], 0, 0.2), 2, cfg)
    assert b1.mean == ref.mean
    dup = ControlSet.finite(np.vstack([dyn.controls.points, dyn.controls.points[:1]]))
    assert brute_force_value(dyn, 0.0, X1, 2, dup, 2, cfg)[0].mean == best.mean
    with pytest.raises(EnumerationTooLarge):
        brute_force_value(dyn, 0.0, X1, 13, dyn.controls, 2, cfg)


def test_brute_force_monotone_in_control_set():
    dyn = problems.circle_diffusive(horizon=0.2)
    cfg = IntegratorConfig(dt=0.02, seed=5)
    small = ControlSet.finite([[0.0], [1.0]])
    big = ControlSet.finite([[0.0], [1.0], [-1.0]])
    a, _ = brute_force_value(dyn, 0.0, X1, 2, small, 200, cfg)
    b, _ = brute_force_value(dyn, 0.0, X1, 2, big, 200, cfg)
    assert b.mean <= a.mean


def test_dpp_gap_zero_problem():
    dyn = problems.zero_problem(model=circle_grid(10).model, horizon=1.0, terminal=lambda x: np.asarray(x)[..., 1])
    g = circle_grid(50)
    field = ValueField(g, np.array([0.0, 1.0]), np.stack([g.nodes[:, 1]] * 2))
    assert dpp_gap(dyn, 0.0, 0.5, np.array([0.6, 0.8]), field, dyn.controls, 3, IntegratorConfig()) < 1e-3
    with pytest.raises(ValueError):
        dpp_gap(dyn, 0.5, 0.5, X1, field, dyn.controls, 3, IntegratorConfig())


def test_value_rows_csv(tmp_path):
    f = tmp_path / "v.csv"
    write_value_rows(f, [("circle-steering", 0.0, [1.0, 0.0], -0.19, 0.0, "brute-force")])
    lines = f.read_text().splitlines()
    assert lines[0] == "problem,t,x0,x1,value,stderr,method"
    assert lines[1].startswith("circle-steering,0.0,1.0,0.0,-0.19")
