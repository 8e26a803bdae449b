"""Discrete Lagrangian action of integer-time paths."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .environment import Environment


@dataclass(frozen=True)
class Path:
    """Positions at consecutive integer times start_time, start_time+1, ..."""

    start_time: int
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 1 or len(pos) < 1:
            raise ValueError("a path needs at least one position")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "start_time", int(self.start_time))

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.positions) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start_time, self.end_time + 1)

    def __len__(self):
        return len(self.positions)

    def at(self, time: int) -> float:
        return float(self.positions[int(time) - self.start_time])

    def segment(self, t0: int, t1: int) -> "Path":
        a = int(t0) - self.start_time
        b = int(t1) - self.start_time
        if a < 0 or b >= len(self.positions) or b < a:
            raise ValueError("segment outside the path")
        return Path(t0, self.positions[a:b + 1])

    def with_positions(self, positions) -> "Path":
        return Path(self.start_time, positions)


@dataclass(frozen=True)
class ActionParams:
    p: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")


class DegeneratePath(ValueError):
    pass


def _need_step(path: Path):
    if len(path) < 2:
        raise DegeneratePath("degenerate path")


def kinetic_action(path: Path) -> float:
    _need_step(path)
    d = np.diff(path.positions)
    return float(0.5 * np.sum(d * d))


def potential_action(env: Environment, path: Path, params: ActionParams | None = None) -> float:
    """p F at the start, F at interior times, (1-p) F at the end."""
    _need_step(path)
    p = (params or ActionParams()).p
    F = env.evaluate(path.times, path.positions)[0]
    return float(p * F[0] + np.sum(F[1:-1]) + (1.0 - p) * F[-1])


def total_action(env: Environment, path: Path, params: ActionParams | None = None,
                 W: Callable[[float], float] | None = None) -> float:
    w0 = float(W(path.positions[0])) if W is not None else 0.0
    return w0 + kinetic_action(path) + potential_action(env, path, params)


def action_gradient(env: Environment, path: Path):
    """Gradient of the action in the interior positions, with F' and F'' there.

    g_k = 2 x_k - x_{k-1} - x_{k+1} + F'(k, x_k).
    """
    x = path.positions
    t = path.times[1:-1]
    _, f, f2 = env.evaluate(t, x[1:-1], order=2)
    g = 2.0 * x[1:-1] - x[:-2] - x[2:] + f
    return g, f, f2


def el_step(env: Environment, k: int, x_prev: float, x_k: float) -> float:
    """Next position forced by the Euler-Lagrange relation at time k."""
    return 2.0 * x_k - x_prev + env.force(k, x_k)


def el_residual(env: Environment, path: Path) -> float:
    if len(path) < 3:
        return 0.0
    g, _, _ = action_gradient(env, path)
    return float(np.max(np.abs(g)))


def sigma_statistic(path: Path) -> int:
    """Sum over steps of |floor(x_{j+1}) - floor(x_j)| + 1."""
    c = np.floor(path.positions).astype(np.int64)
    return int(np.sum(np.abs(np.diff(c)) + 1))


def max_excursion(path: Path) -> float:
    return float(np.max(np.abs(path.positions - path.positions[0])))
