"""Open-loop piecewise-constant and feedback control signals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """A control u(.) on [t0, T].

    Open-loop signals hold ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``.
    Feedback signals call ``policy(t, x)`` with ``x`` of shape ``(P, n1)`` and
    must return controls of shape ``(P, k)``.
    """

    kind: str
    breakpoints: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    policy: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind == "open-loop":
            bp = np.asarray(self.breakpoints, dtype=float)
            vals = np.atleast_2d(np.asarray(self.values, dtype=float))
            if bp.ndim != 1 or len(bp) != len(vals) + 1:
                raise ValueError("need len(breakpoints) == len(values) + 1")
            if np.any(np.diff(bp) <= 0):
                raise ValueError("breakpoints must be increasing")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "values", vals)
        elif self.kind == "feedback":
            if self.policy is None:
                raise ValueError("feedback signal needs a policy")
        else:
            raise ValueError(f"unknown control kind {self.kind!r}")

    @classmethod
    def constant(cls, u, t0: float, t_end: float) -> "ControlSignal":
        return cls("open-loop", np.array([t0, t_end]), np.atleast_2d(np.asarray(u, dtype=float)))

    @classmethod
    def piecewise(cls, breakpoints, values) -> "ControlSignal":
        return cls("open-loop", np.asarray(breakpoints, dtype=float), np.asarray(values, dtype=float))

    @classmethod
    def uniform(cls, values, t0: float, t_end: float) -> "ControlSignal":
        """Piecewise-constant signal on ``len(values)`` equal intervals."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls.piecewise(np.linspace(t0, t_end, len(values) + 1), values)

    @classmethod
    def feedback(cls, policy) -> "ControlSignal":
        return cls("feedback", policy=policy)

    def at(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "feedback":
            return np.atleast_2d(np.asarray(self.policy(t, x), dtype=float))
        bp = self.breakpoints
        tol = 1e-9 * max(1.0, abs(bp[-1]))
        i = int(np.searchsorted(bp, t + tol, side="right")) - 1
        i = min(max(i, 0), len(self.values) - 1)
        return np.broadcast_to(self.values[i], (x.shape[0], self.values.shape[1]))
