import math

import numpy as np
import pytest

from riemctl import geometry as G
from riemctl import problems
from riemctl.controls import ControlSignal
from riemctl.errors import OutsideTubularNeighborhood
from riemctl.sde import (IntegratorConfig, ensemble_to_csv, noise_table, off_manifold_residual, simulate_batch,
                         simulate_path, stored_residual, time_grid)

S2 = G.sphere2()


def const(u, T=1.0):
    return ControlSignal.constant(u, 0.0, T)


def test_time_grid():
    t = time_grid(0.0, 1.0, 0.3)
    assert len(t) == 5 and t[-1] == 1.0
    assert len(time_grid(0.0, 0.05, 0.1)) == 2  # one step of length T - t0
    with pytest.raises(ValueError):
        time_grid(1.0, 1.0, 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="milstein")


def test_zero_dynamics_constant_path():
    dyn = problems.zero_problem()
    x0 = np.array([0.0, 0.6, 0.8])
    path = simulate_path(dyn, IntegratorConfig(), 0.0, x0, const([0.0]))
    assert np.all(path.states == x0)
    assert off_manifold_residual(path) == 0.0


def test_geodesic_flow_on_circle():
    dyn = problems.circle_steering(horizon=1.0)
    x0 = G.circle_point(0.3)
    for dt in (1e-2, 1e-3):
        path = simulate_path(dyn, IntegratorConfig(dt=dt), 0.0, x0, const([1.0]))
        assert G.circle_angle(path.states[-1]) == pytest.approx(1.3, abs=2 * dt)
        assert stored_residual(path) <= 1e-12


def test_batch_determinism_and_order_independence():
    dyn = problems.sphere2_controlled()
    x0 = np.array([0.6, 0.0, 0.8])
    u = const([1.0, -1.0])
    cfg = IntegratorConfig(dt=1e-2, seed=7, block_size=16)
    a = simulate_batch(dyn, cfg, 0.0, x0, u, 50)
    b = simulate_batch(dyn, cfg, 0.0, x0, u, 50)
    assert np.array_equal(a.states, b.states)
    c = simulate_batch(dyn, IntegratorConfig(dt=1e-2, seed=7, block_size=64, workers=3), 0.0, x0, u, 50)
    assert np.array_equal(a.terminal, c.terminal)
    sub = simulate_batch(dyn, cfg, 0.0, x0, u, 5, path_ids=[40, 41, 42, 43, 44])
    assert np.array_equal(sub.states, a.states[40:45])
    single = simulate_path(dyn, cfg, 0.0, x0, u)
    assert np.array_equal(single.states, a.states[0])


def test_noise_record_matches_table():
    dyn = problems.sphere2_bm()
    cfg = IntegratorConfig(dt=0.05, seed=3)
    ens = simulate_batch(dyn, cfg, 0.0, np.array([0, 0, 1.0]), const([0.0]), 4)
    z = noise_table(3, np.arange(4), 20, 3)
    assert np.allclose(ens.noise, z * math.sqrt(0.05))


def test_disjoint_seeds_clt():
    dyn = problems.sphere2_bm()
    x0 = np.array([0, 0, 1.0])
    means = []
    for seed in (1, 2):
        ens = simulate_batch(dyn, IntegratorConfig(dt=0.02, seed=seed), 0.0, x0, const([0.0]), 4000, record=False)
        means.append(ens.terminal[:, 2].mean())
    assert means[0] != means[1]
    assert abs(means[0] - means[1]) < 5 * 0.6 / math.sqrt(2000)


def test_projected_states_on_manifold():
    dyn = problems.circle_diffusive()
    ens = simulate_batch(dyn, IntegratorConfig(dt=1e-2), 0.0, np.array([1.0, 0]), const([0.5]), 200)
    assert np.max(dyn.model.dist2_to_manifold(ens.states)) <= 1e-12
    assert ens.path(3).max_offmanifold > 0


def test_pre_projection_residual_scales_with_dt():
    """Median pre-projection distance to S^2 is proportional to dt (its square to dt^2)."""
    dyn = problems.sphere2_bm(horizon=0.05)
    meds = []
    dts = [1e-2, 1e-3, 1e-4]
    for dt in dts:
        ens = simulate_batch(dyn, IntegratorConfig(dt=dt), 0.0, np.array([0, 0, 1.0]), const([0.0], 0.05), 200)
        meds.append(np.median(np.sqrt(ens.pre_residuals)))
    slope = np.polyfit(np.log(dts), np.log(meds), 1)[0]
    assert abs(slope - 1) <= 0.3


def test_outside_tubular_neighborhood_raises():
    dyn = problems.sphere2_bm(horizon=1.0)
    with pytest.raises(OutsideTubularNeighborhood):
        simulate_batch(dyn, IntegratorConfig(dt=0.5), 0.0, np.array([0, 0, 1.0]), const([0.0]), 200)


def test_heun_scheme_runs_and_agrees_weakly():
    dyn = problems.sphere2_bm(horizon=0.5)
    x0 = np.array([0, 0, 1.0])
    e = simulate_batch(dyn, IntegratorConfig(dt=1e-2, scheme="projected-heun"), 0.0, x0, const([0.0], 0.5), 4000,
                       record=False)
    assert abs(e.terminal[:, 2].mean() - math.exp(-0.5)) < 0.03


def test_control_perturbation_common_noise():
    dyn = problems.circle_diffusive(horizon=0.5)
    x0 = np.array([1.0, 0])
    table = noise_table(0, np.arange(500), 50, 1)
    base = simulate_batch(dyn, IntegratorConfig(), 0.0, x0, const([0.0], 0.5), 500, noise=table)
    out = []
    for du in (0.1, 0.2, 0.4):
        other = simulate_batch(dyn, IntegratorConfig(), 0.0, x0, const([du], 0.5), 500, noise=table)
        out.append(np.mean(np.max(dyn.model.dist(base.states, other.states) ** 2, axis=1)) / (du * du * 0.5))
    assert max(out) / min(out) < 2.0


def test_csv_export(tmp_path):
    dyn = problems.circle_diffusive(horizon=0.05)
    ens = simulate_batch(dyn, IntegratorConfig(dt=1e-2), 0.0, np.array([1.0, 0]), const([0.0], 0.05), 2)
    f = tmp_path / "paths.csv"
    ensemble_to_csv(ens, f)
    lines = f.read_text().splitlines()
    assert lines[0] == "path_id,step,t,x0,x1,u0,residual"
    assert len(lines) == 1 + 2 * 6
