"""Built-in control problems and their text-config loader."""

from __future__ import annotations

import configparser
import math
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .fields import ControlledDynamics, ControlSet
from .geometry import circle, circle_tangent, sphere2

SPHERE_FRAME_BOUND = 3.0 * math.sqrt(2.0 / 3.0)  # max_x sum_i |P_x e_i| on S^2


def _sphere_frame(x):
    """Projection frame sigma_i(x) = P_x(e_i), shape (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(3)
    return eye - x[..., :, None] * x[..., None, :]


def _u(u):
    return np.asarray(u, dtype=float)


def zero_problem(model=None, horizon: float = 1.0, running: float = 0.0, terminal=None) -> ControlledDynamics:
    """b = sigma = 0, constant running cost, terminal cost ``terminal`` (default 0)."""
    model = model or sphere2()
    term = terminal if terminal is not None else (lambda x: np.zeros(np.shape(x)[:-1]))
    return ControlledDynamics(
        model=model,
        m=0,
        drift=lambda t, x, u: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion=None,
        running_cost=lambda t, x, u: np.full(np.shape(x)[:-1], float(running)),
        terminal_cost=term,
        controls=ControlSet.finite([[0.0]]),
        horizon=horizon,
        bound=abs(running),
        lipschitz=0.0,
        name="zero",
        params={"running": running},
    )


def circle_steering(horizon: float = 0.2, n_controls: int = 3, control_cost: float = 0.0) -> ControlledDynamics:
    """P1: b = u e_theta, sigma = 0, f = control_cost * u^2, h = sin(theta)."""
    return ControlledDynamics(
        model=circle(),
        m=0,
        drift=lambda t, x, u: _u(u)[..., :1] * circle_tangent(x),
        diffusion=None,
        running_cost=lambda t, x, u: control_cost * _u(u)[..., 0] ** 2 + 0.0 * np.asarray(x)[..., 0],
        terminal_cost=lambda x: np.asarray(x)[..., 1],
        controls=ControlSet.box([-1.0], [1.0], [n_controls]),
        horizon=horizon,
        bound=1.0 + control_cost,
        lipschitz=1.0 + 2.0 * control_cost,
        name="circle-steering",
        params={"horizon": horizon, "n_controls": n_controls, "control_cost": control_cost, "sigma_bound": 0.0},
    )


def sphere2_bm(horizon: float = 1.0) -> ControlledDynamics:
    """P2: Brownian motion on S^2 through the projection frame; h(x) = x_3."""
    return ControlledDynamics(
        model=sphere2(),
        m=3,
        drift=lambda t, x, u: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion=lambda t, x, u: _sphere_frame(x),
        running_cost=lambda t, x, u: np.zeros(np.shape(x)[:-1]),
        terminal_cost=lambda x: np.asarray(x)[..., 2],
        controls=ControlSet.finite([[0.0]]),
        horizon=horizon,
        bound=SPHERE_FRAME_BOUND,
        lipschitz=1.0,
        # sum_i D^E_{P e_i} P e_i = -2x on the unit sphere
        ambient_correction=lambda t, x, u: -np.asarray(x, dtype=float),
        name="sphere2-bm",
        params={"horizon": horizon, "sigma_bound": SPHERE_FRAME_BOUND},
    )


def sphere2_controlled(horizon: float = 1.0, noise: float = 0.5, n_controls: int = 3) -> ControlledDynamics:
    """P3: b = u1 P_x(e_3), sigma_i = noise (1 + 0.2 u2) P_x(e_i), f = |u|^2 / 2, h = x_3."""

    def scale(u):
        return noise * (1.0 + 0.2 * _u(u)[..., 1])

    e3 = np.array([0.0, 0.0, 1.0])
    sig_bound = noise * 1.2 * SPHERE_FRAME_BOUND
    return ControlledDynamics(
        model=sphere2(),
        m=3,
        drift=lambda t, x, u: _u(u)[..., :1] * (e3 - np.asarray(x)[..., 2:3] * np.asarray(x)),
        diffusion=lambda t, x, u: scale(u)[..., None, None] * _sphere_frame(x),
        running_cost=lambda t, x, u: 0.5 * np.sum(_u(u) ** 2, axis=-1) + 0.0 * np.asarray(x)[..., 0],
        terminal_cost=lambda x: np.asarray(x)[..., 2],
        controls=ControlSet.box([-1.0, -1.0], [1.0, 1.0], [n_controls, n_controls]),
        horizon=horizon,
        bound=1.0 + sig_bound + 1.0,
        lipschitz=1.0 + 0.2 * noise * SPHERE_FRAME_BOUND * 2,
        ambient_correction=lambda t, x, u: -(scale(u) ** 2)[..., None] * np.asarray(x, dtype=float),
        name="sphere2-controlled",
        params={"horizon": horizon, "noise": noise, "n_controls": n_controls, "sigma_bound": sig_bound},
    )


def circle_diffusive(horizon: float = 1.0, noise: float = 0.4, n_controls: int = 5,
                     control_cost: float = 0.25) -> ControlledDynamics:
    """P4: b = u e_theta, sigma = noise (1 + 0.3 sin theta)(1 + 0.2 u) e_theta,
    f = control_cost * u^2, h = sin(theta)."""

    def g(x, u):
        x = np.asarray(x)
        return noise * (1.0 + 0.3 * x[..., 1]) * (1.0 + 0.2 * _u(u)[..., 0])

    def dg(x, u):
        # derivative of g along the unit tangent: d/dtheta sin(theta) = cos(theta) = x_1
        x = np.asarray(x)
        return noise * 0.3 * x[..., 0] * (1.0 + 0.2 * _u(u)[..., 0])

    def diffusion(t, x, u):
        return (g(x, u)[..., None] * circle_tangent(x))[..., None, :]

    def correction(t, x, u):
        x = np.asarray(x, dtype=float)
        gv = g(x, u)[..., None]
        return 0.5 * (gv * dg(x, u)[..., None] * circle_tangent(x) - gv**2 * x)

    sig_bound = noise * 1.3 * 1.2
    return ControlledDynamics(
        model=circle(),
        m=1,
        drift=lambda t, x, u: _u(u)[..., :1] * circle_tangent(x),
        diffusion=diffusion,
        running_cost=lambda t, x, u: control_cost * _u(u)[..., 0] ** 2 + 0.0 * np.asarray(x)[..., 0],
        terminal_cost=lambda x: np.asarray(x)[..., 1],
        controls=ControlSet.box([-1.0], [1.0], [n_controls]),
        horizon=horizon,
        bound=1.0 + sig_bound + control_cost,
        lipschitz=1.0 + 0.2 * noise * 1.3 + 2 * control_cost,
        ambient_correction=correction,
        name="circle-diffusive",
        params={"horizon": horizon, "noise": noise, "n_controls": n_controls,
                "control_cost": control_cost, "sigma_bound": sig_bound},
    )


PROBLEMS = {
    "circle-steering": (circle_steering, "P1: deterministic steering on S^1, h = sin(theta); brute-force oracle"),
    "sphere2-bm": (sphere2_bm, "P2: Brownian motion on S^2, h = x_3; heat-semigroup oracle"),
    "sphere2-controlled": (sphere2_controlled, "P3: S^2 with controlled drift and control-scaled diffusion"),
    "circle-diffusive": (circle_diffusive, "P4: S^1 with controlled drift and control-dependent diffusion"),
}


def list_problems() -> dict[str, str]:
    return {name: desc for name, (_, desc) in PROBLEMS.items()}


def make_problem(name: str, **params) -> ControlledDynamics:
    try:
        factory = PROBLEMS[name][0]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; known: {', '.join(PROBLEMS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got {text!r}") from None


def problem_from_config(section: Mapping[str, str]) -> ControlledDynamics:
    """Build a problem from ``problem = <name>`` plus numeric ``key = value`` entries."""
    if "problem" not in section:
        raise ConfigError("config section needs a 'problem' key")
    params = {k: _number(v) for k, v in section.items() if k != "problem"}
    return make_problem(section["problem"], **params)


def load_problem(path, section: str = "problem") -> ControlledDynamics:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read {path}")
    if not parser.has_section(section):
        raise ConfigError(f"{path} has no [{section}] section")
    return problem_from_config(dict(parser[section]))
