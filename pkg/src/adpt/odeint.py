"""Fixed-step RK4 with quadrature accumulators, and trapezoidal quadrature.

Integrands that depend only on (t, x) ride along with the state: classical
RK4 on the augmented system (x, acc) adds ``dt/6 * (h1 + 2 h2 + 2 h3 + h4)``
to each accumulator, where h_i is the integrand at the i-th stage point.
:func:`rk4_stages` exposes those stage points so that expensive integrands
(e.g. outer products of basis vectors) can be evaluated in one batch later.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DIVERGENCE_LIMIT = 1e9
RK4_WEIGHTS = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0


class DivergenceError(RuntimeError):
    """The state blew up (non-finite or above the divergence limit)."""

    def __init__(self, t: float, x):
        self.t = float(t)
        self.x = np.asarray(x)
        super().__init__(f"integration diverged at t = {self.t:.6g} (|x|_max = {np.max(np.abs(self.x)):.3g})")


def _check(t, x):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > DIVERGENCE_LIMIT):
        raise DivergenceError(t, x)


def _grid(t_grid):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-D sequence")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return t_grid


@dataclass
class StageTrajectory:
    """Grid states plus the RK4 stage points of every step.

    Attributes
    ----------
    t : (T+1,) grid times
    x : (T+1, n) states on the grid
    stage_t : (T, 4) stage times
    stage_x : (T, 4, n) stage states
    dt : (T,) step sizes
    """

    t: np.ndarray
    x: np.ndarray
    stage_t: np.ndarray
    stage_x: np.ndarray
    dt: np.ndarray

    def stage_weights(self) -> np.ndarray:
        """Quadrature weight of every stage point, shape (T, 4)."""
        return self.dt[:, None] * RK4_WEIGHTS[None, :]


def rk4_stages(vector_field: Callable, x0, t_grid) -> StageTrajectory:
    """Integrate ``dx/dt = vector_field(t, x)`` and record the stage points."""
    t_grid = _grid(t_grid)
    x = np.array(x0, dtype=float)
    _check(t_grid[0], x)
    steps = t_grid.size - 1
    n = x.size
    xs = np.empty((steps + 1, n))
    st = np.empty((steps, 4))
    sx = np.empty((steps, 4, n))
    xs[0] = x
    dts = np.diff(t_grid)
    for k in range(steps):
        t, h = t_grid[k], dts[k]
        half = t + 0.5 * h
        x2 = x + 0.5 * h * (k1 := vector_field(t, x))
        x3 = x + 0.5 * h * (k2 := vector_field(half, x2))
        x4 = x + h * (k3 := vector_field(half, x3))
        k4 = vector_field(t_grid[k + 1], x4)
        sx[k, 0], sx[k, 1], sx[k, 2], sx[k, 3] = x, x2, x3, x4
        st[k] = (t, half, half, t_grid[k + 1])
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(t_grid[k + 1], x)
        xs[k + 1] = x
    return StageTrajectory(t_grid, xs, st, sx, dts)


def rk4_augmented(vector_field: Callable, integrands: Sequence[Callable], x0, t_grid,
                  checkpoints=None) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Classical RK4 on the state augmented with running integrals.

    Parameters
    ----------
    vector_field : callable ``(t, x) -> dx``
    integrands : callables ``(t, x) -> float``; their integrals are accumulated
    x0 : initial state
    t_grid : strictly increasing step times
    checkpoints : grid times to report (default: every grid point)

    Returns
    -------
    list of ``(t, x(t), accumulators)`` at the checkpoints, in time order.
    """
    t_grid = _grid(t_grid)
    if checkpoints is None:
        wanted = np.ones(t_grid.size, dtype=bool)
    else:
        wanted = np.isin(t_grid, np.asarray(checkpoints, dtype=float))
        if wanted.sum() != len(np.unique(checkpoints)):
            raise ValueError("checkpoints must be a subset of the time grid")
    x = np.array(x0, dtype=float)
    _check(t_grid[0], x)
    acc = np.zeros(len(integrands))

    def h(t, y):
        return np.array([f(t, y) for f in integrands], dtype=float)

    out = []
    if wanted[0]:
        out.append((float(t_grid[0]), x.copy(), acc.copy()))
    for k in range(t_grid.size - 1):
        t, dt = t_grid[k], t_grid[k + 1] - t_grid[k]
        half = t + 0.5 * dt
        k1 = vector_field(t, x)
        h1 = h(t, x)
        x2 = x + 0.5 * dt * k1
        k2 = vector_field(half, x2)
        h2 = h(half, x2)
        x3 = x + 0.5 * dt * k2
        k3 = vector_field(half, x3)
        h3 = h(half, x3)
        x4 = x + dt * k3
        k4 = vector_field(t_grid[k + 1], x4)
        h4 = h(t_grid[k + 1], x4)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        acc = acc + (dt / 6.0) * (h1 + 2.0 * h2 + 2.0 * h3 + h4)
        _check(t_grid[k + 1], x)
        if wanted[k + 1]:
            out.append((float(t_grid[k + 1]), x.copy(), acc.copy()))
    return out


def rk4_cost(rhs: Callable, x0, t_grid):
    """RK4 where ``rhs(t, x)`` returns ``(dx, running_cost)`` in one call.

    Returns grid states (T+1, n) and the cumulative cost on the grid (T+1,).
    Used for closed-loop rollouts, where the control needed by the dynamics
    is also what the cost integrand needs.
    """
    t_grid = _grid(t_grid)
    x = np.array(x0, dtype=float)
    _check(t_grid[0], x)
    xs = np.empty((t_grid.size, x.size))
    cost = np.zeros(t_grid.size)
    xs[0] = x
    acc = 0.0
    for k in range(t_grid.size - 1):
        t, dt = t_grid[k], t_grid[k + 1] - t_grid[k]
        half = t + 0.5 * dt
        k1, h1 = rhs(t, x)
        k2, h2 = rhs(half, x + 0.5 * dt * k1)
        k3, h3 = rhs(half, x + 0.5 * dt * k2)
        k4, h4 = rhs(t_grid[k + 1], x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        acc = acc + (dt / 6.0) * (h1 + 2.0 * h2 + 2.0 * h3 + h4)
        _check(t_grid[k + 1], x)
        xs[k + 1] = x
        cost[k + 1] = acc
    return xs, cost


def trapezoid(t, h):
    """Composite trapezoidal rule over samples ``(t_i, h(t_i))``.

    ``h`` may carry trailing dimensions (matrix-valued integrands).  With two
    samples this is exactly ``(s - r) * (h(s) + h(r)) / 2``.
    """
    t = np.asarray(t)
    h = np.asarray(h)
    if t.ndim != 1 or t.shape[0] < 2:
        raise ValueError("trapezoid needs at least 2 samples")
    if h.shape[0] != t.shape[0]:
        raise ValueError(f"got {t.shape[0]} times but {h.shape[0]} integrand values")
    # object arrays (exact or symbolic numbers) skip the ordering check
    numeric = t.dtype != object
    total = None
    for i in range(t.shape[0] - 1):
        step = t[i + 1] - t[i]
        if numeric and not step > 0:
            raise ValueError("sample times must be strictly increasing")
        piece = step * (h[i + 1] + h[i]) / 2
        total = piece if total is None else total + piece
    return total


def trapezoid_weights(t) -> np.ndarray:
    """Per-sample weights ``w`` such that ``sum(w * h)`` is the composite rule."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("trapezoid needs at least 2 samples")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("sample times must be strictly increasing")
    w = np.zeros_like(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w
