"""Polynomial feedback controllers: evaluation, text files, closed-loop rollouts."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .odeint import rk4_cost
from .polybasis import basis_size, enumerate_monomials, eval_basis

MAGIC = "ADPT-CONTROLLER v1"


class ControllerFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PolynomialController:
    """``u(x) = W Phi_d(x)`` and ``V(x) = c Phi_{d+1}(x)``."""

    n: int
    m: int
    d: int
    W: np.ndarray
    c: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n1, n2 = basis_size(self.n, self.d + 1), basis_size(self.n, self.d)
        if W.shape != (self.m, n2):
            raise ValueError(f"W must be {self.m}x{n2} for n={self.n}, d={self.d}; got {W.shape}")
        if c.shape != (n1,):
            raise ValueError(f"c must have {n1} entries for n={self.n}, d={self.d}; got {c.size}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c", c)

    @property
    def control_basis(self):
        return enumerate_monomials(self.n, self.d)

    @property
    def value_basis(self):
        return enumerate_monomials(self.n, self.d + 1)

    def __eq__(self, other):
        if not isinstance(other, PolynomialController):
            return NotImplemented
        return ((self.n, self.m, self.d) == (other.n, other.m, other.d)
                and np.array_equal(self.W, other.W) and np.array_equal(self.c, other.c))

    __hash__ = None


def eval_control(ctrl: PolynomialController, x) -> np.ndarray:
    """Control at a state (n,) -> (m,), or a batch (S, n) -> (S, m)."""
    return eval_basis(ctrl.control_basis, x) @ ctrl.W.T


def eval_value(ctrl: PolynomialController, x):
    """Value estimate at a state (scalar) or a batch (S,)."""
    v = eval_basis(ctrl.value_basis, x) @ ctrl.c
    return float(v) if np.ndim(v) == 0 else v


def save(ctrl: PolynomialController, path) -> None:
    lines = [MAGIC, f"n {ctrl.n}", f"m {ctrl.m}", f"d {ctrl.d}", "W"]
    lines += [" ".join(repr(float(v)) for v in row) for row in ctrl.W]
    lines += ["c", " ".join(repr(float(v)) for v in ctrl.c)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path) -> PolynomialController:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    pos = 0

    def line(what):
        nonlocal pos
        if pos >= len(lines):
            raise ControllerFormatError(f"{path}: line {pos + 1}: unexpected end of file, expected {what}")
        pos += 1
        return lines[pos - 1].strip()

    def fail(msg):
        raise ControllerFormatError(f"{path}: line {pos}: {msg}")

    if line("header") != MAGIC:
        fail(f"expected header {MAGIC!r}")
    dims = {}
    for key in ("n", "m", "d"):
        parts = line(f"'{key} <int>'").split()
        if len(parts) != 2 or parts[0] != key:
            fail(f"expected '{key} <int>'")
        try:
            dims[key] = int(parts[1])
        except ValueError:
            fail(f"{key} must be an integer")
        if dims[key] < 1:
            fail(f"{key} must be positive")
    n, m, d = dims["n"], dims["m"], dims["d"]
    n1, n2 = basis_size(n, d + 1), basis_size(n, d)

    def numbers(count, what):
        text = line(what)
        try:
            vals = [float(v) for v in text.split()]
        except ValueError:
            fail(f"non-numeric entry in {what}")
        if len(vals) != count:
            fail(f"{what} has {len(vals)} entries, expected {count} for n={n}, d={d}")
        return vals

    if line("'W'") != "W":
        fail("expected 'W'")
    W = [numbers(n2, f"row {i + 1} of W") for i in range(m)]
    if line("'c'") != "c":
        fail("expected 'c'")
    c = numbers(n1, "c")
    while pos < len(lines):
        if line("end").strip():
            fail("trailing content")
    return PolynomialController(n, m, d, np.array(W), np.array(c))


@dataclass
class ClosedLoopResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost_so_far: np.ndarray
    tail: float  # running cost integrand at tf

    @property
    def J(self) -> float:
        return float(self.cost_so_far[-1])

    def state_norm(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def write_csv(self, path) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
                       + ["cost_so_far"])
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                           + [repr(float(v)) for v in self.u[k]] + [repr(float(self.cost_so_far[k]))])


def simulate_closed_loop(f: Callable, g: Callable, control: Callable, x0, tf: float, dt: float,
                         q: Callable, R) -> ClosedLoopResult:
    """Roll out ``x' = f(x) + g(x) u(x)`` with RK4 and accumulate the cost.

    ``control`` is a :class:`PolynomialController` or any ``x -> u``
    callable; ``q`` maps a state to the running state cost.  The cost is
    integrated over [0, tf]; the integrand at ``tf`` is reported as ``tail``.
    """
    if not tf > 0:
        raise ValueError("tf must be positive")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if isinstance(control, PolynomialController):
        ctrl = control
        spec = ctrl.control_basis
        W = ctrl.W

        def law(x):
            return W @ eval_basis(spec, x)
    else:
        def law(x):
            return np.atleast_1d(np.asarray(control(x), dtype=float))

    def rhs(t, x):
        u = law(x)
        return f(x) + g(x) @ u, q(x) + u @ R @ u

    steps = int(round(tf / dt))
    t = np.arange(steps + 1) * (tf / steps)
    with np.errstate(over="ignore", invalid="ignore"):
        xs, cost = rk4_cost(rhs, x0, t)  # blow-up is reported as DivergenceError
    us = np.array([law(x) for x in xs])
    tail = float(q(xs[-1]) + us[-1] @ R @ us[-1])
    return ClosedLoopResult(t, xs, us, cost, tail)
