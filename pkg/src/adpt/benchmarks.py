"""Built-in benchmark problems and the cost/timing harness.

Two fixtures are provided: a scalar-input nonlinear oscillator (spring with a
cubic stiffening term) and the satellite attitude problem, whose unit
quaternion dynamics are embedded in R^4 with an attracting term so that the
full error state lives in R^7.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import exprdsl as ex
from .controller import PolynomialController, simulate_closed_loop
from .modelbased import (ModelBasedOptions, Solution, parallel_map, prepare_exploration,
                         solve_model_based, _time_grid)
from .modelfree import ModelFreeOptions, Trajectory, TrajectoryLog, solve_model_free
from .odeint import rk4_stages
from .problem import ControlProblem


# ---------------------------------------------------------------------------
# satellite attitude
# ---------------------------------------------------------------------------

def quaternion_multiply(a, b) -> np.ndarray:
    """Hamilton product; a 3-vector is read as the pure quaternion (0, v)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] == 3:
        a = np.concatenate([np.zeros(a.shape[:-1] + (1,)), a], axis=-1)
    if b.shape[-1] == 3:
        b = np.concatenate([np.zeros(b.shape[:-1] + (1,)), b], axis=-1)
    a0, av = a[..., 0], a[..., 1:]
    b0, bv = b[..., 0], b[..., 1:]
    scalar = a0 * b0 - np.sum(av * bv, axis=-1)
    vec = a0[..., None] * bv + b0[..., None] * av + np.cross(av, bv)
    return np.concatenate([scalar[..., None], vec], axis=-1)


@dataclass(frozen=True)
class SatelliteFixture:
    inertia: tuple = (0.1029, 0.1263, 0.0292)  # principal moments, kg m^2
    alpha: float = 1.0                          # embedding gain
    q_weight: float = 2.0                       # q(x) = q_weight * |x|^2
    theta: float = 1.99999 * np.pi              # initial rotation angle about x

    def __post_init__(self):
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia must hold three positive principal moments")

    @property
    def q_e(self) -> np.ndarray:
        return np.array([1.0, 0.0, 0.0, 0.0])

    @property
    def R(self) -> np.ndarray:
        return np.eye(3)

    @property
    def Q(self) -> np.ndarray:
        return self.q_weight * np.eye(7)

    @property
    def x0(self) -> np.ndarray:
        h = self.theta / 2
        return np.array([np.cos(h) - 1.0, np.sin(h), 0.0, 0.0, 0.0, 0.0, 0.0])


def satellite_error_dynamics(e_q, e_omega, u, fixture: SatelliteFixture = SatelliteFixture()) -> np.ndarray:
    """Time derivative of the 7-dimensional error state."""
    q = np.asarray(e_q, dtype=float) + fixture.q_e
    w = np.asarray(e_omega, dtype=float)
    I = np.asarray(fixture.inertia, dtype=float)
    dq = 0.5 * quaternion_multiply(q, w) - fixture.alpha * (q @ q - 1.0) * q
    dw = np.cross(I * w, w) / I + np.asarray(u, dtype=float) / I
    return np.concatenate([dq, dw])


def satellite_problem(fixture: SatelliteFixture = SatelliteFixture()) -> ControlProblem:
    """The satellite error dynamics as a control-affine expression problem."""
    a = repr(float(fixture.alpha))
    I1, I2, I3 = (float(v) for v in fixture.inertia)
    emb = f"{a}*((1+x1)^2+x2^2+x3^2+x4^2-1)"
    f = [
        f"0.5*(-(x2*x5+x3*x6+x4*x7)) - {emb}*(1+x1)",
        f"0.5*((1+x1)*x5 + x3*x7 - x4*x6) - {emb}*x2",
        f"0.5*((1+x1)*x6 + x4*x5 - x2*x7) - {emb}*x3",
        f"0.5*((1+x1)*x7 + x2*x6 - x3*x5) - {emb}*x4",
        f"{(I2 - I3) / I1!r}*x6*x7",
        f"{(I3 - I1) / I2!r}*x7*x5",
        f"{(I1 - I2) / I3!r}*x5*x6",
    ]
    g = [["0"] * 3 for _ in range(4)]
    g += [[repr(1 / I1), "0", "0"], ["0", repr(1 / I2), "0"], ["0", "0", repr(1 / I3)]]
    w = repr(float(fixture.q_weight))
    q = "+".join(f"{w}*x{i}^2" for i in range(1, 8))
    return ControlProblem.from_text(7, 3, "; ".join(f), "; ".join(", ".join(r) for r in g), q,
                                    fixture.R, name="satellite")


# ---------------------------------------------------------------------------
# small fixtures
# ---------------------------------------------------------------------------

def oscillator_problem(k1=3.0, k2=2.0, k3=2.0, k4=5.0) -> ControlProblem:
    """``x1' = x2``, ``x2' = (-k1 x1 - k2 x1^3 - k3 x2 + u) / k4``, q = 5 x1^2 + 3 x2^2, R = 2."""
    f = f"x2; (-{k1!r}*x1-{k2!r}*x1^3-{k3!r}*x2)/{k4!r}"
    return ControlProblem.from_text(2, 1, f, f"0; 1/{k4!r}", "5*x1^2+3*x2^2", "2", name="oscillator")


def scalar_lqr_problem() -> ControlProblem:
    """``x' = u`` with q = x^2, R = 1: V*(x) = x^2, u*(x) = -x."""
    return ControlProblem.from_text(1, 1, "0", "1", "x1^2", "1", name="scalar")


SCALAR_ETA = "0.8*(sin(7*t)+sin(1.1*t)+sin(sqrt(3)*t)+sin(sqrt(6)*t))"


# ---------------------------------------------------------------------------
# synthetic measurement logs
# ---------------------------------------------------------------------------

def synthesize_log(problem: ControlProblem, u0, eta, x_init, t_span, dt: float = 1e-3,
                   record: float = 2e-3) -> TrajectoryLog:
    """Simulate exploration runs and record ``(t, x, u0(x), eta(t))`` samples.

    ``eta`` holds one list of m expressions per initial state.  Integration
    uses RK4 with step ``dt``; every ``record / dt``-th grid point is kept.
    """
    x_init = np.atleast_2d(np.asarray(x_init, dtype=float))
    every = int(round(record / dt))
    if every < 1 or abs(every * dt - record) > 1e-12:
        raise ValueError("record period must be a multiple of dt")
    u0_fn = ex.batch_function(u0, problem.n)

    def one(i):
        grid, _ = _time_grid(float(t_span[0]), float(t_span[1]), dt, record)
        inputs = [ex.add(u, e) for u, e in zip(u0, eta[i])]
        traj = rk4_stages(problem.closed_loop_field(inputs), x_init[i], grid)
        t = grid[::every]
        x = traj.x[::every]
        return Trajectory(t, x, u0_fn(t, x), ex.batch_function(eta[i], problem.n)(t, x))

    return TrajectoryLog(parallel_map(one, range(x_init.shape[0])))


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------

# exploration used for the satellite runs: four initial states over [0, 15]
# for model-based, four over [0, 20] recorded every 2 ms for model-free
SATELLITE_MB = dict(x_init_num=4, t_span=(0.0, 15.0))
SATELLITE_MF = dict(x_init_num=4, t_span=(0.0, 20.0), record=2e-3, stride=4)
COST_TF = 50.0
COST_DT = 1e-3


@dataclass
class BenchmarkRow:
    problem: str
    mode: str
    d: int
    J: float
    wall: float
    iterations: int
    converged: bool
    final_delta: float
    tail: float
    solution: Solution = field(repr=False)

    @property
    def controller(self) -> PolynomialController:
        return self.solution.controller


def _benchmark_setup(name):
    if name == "satellite":
        fixture = SatelliteFixture()
        return satellite_problem(fixture), fixture.x0, {}
    if name == "scalar":
        return scalar_lqr_problem(), np.array([1.0]), {"eta": [ex.parse(SCALAR_ETA)],
                                                       "x_init": np.array([[1.0]]),
                                                       "t_span": (0.0, 10.0)}
    raise ValueError(f"unknown benchmark {name!r}; choose satellite or scalar")


def run_benchmark(mode: str, d: int, seed: int = 0, problem: str = "satellite") -> BenchmarkRow:
    """Solve a built-in problem and evaluate ``J(x0)`` over ``[0, 50]``.

    ``mode`` is ``"mb"``/``"model-based"`` or ``"mf"``/``"model-free"``.
    The wall time covers data generation and iteration, not cost evaluation.
    """
    mode = {"model-based": "mb", "model-free": "mf"}.get(mode, mode)
    if mode not in ("mb", "mf"):
        raise ValueError(f"unknown mode {mode!r}; choose mb or mf")
    if not 1 <= int(d) <= 3:
        raise ValueError("degree must be 1, 2 or 3")
    prob, x0, extra = _benchmark_setup(problem)
    start = time.perf_counter()
    if mode == "mb":
        opts = ModelBasedOptions(seed=seed, **(SATELLITE_MB if problem == "satellite" else {}))
        opts = replace(opts, **extra)
        sol = solve_model_based(prob, d, opts)
    else:
        cfg = dict(SATELLITE_MF) if problem == "satellite" else dict(x_init_num=1, t_span=(0.0, 10.0),
                                                                    record=2e-3, stride=1)
        record, stride = cfg.pop("record"), cfg.pop("stride")
        opts = replace(ModelBasedOptions(seed=seed, **cfg), **extra)
        setup = prepare_exploration(prob, opts)
        data = synthesize_log(prob, setup.u0, setup.eta, setup.x_init, opts.t_span, opts.dt, record)
        sol = solve_model_free(data, prob.q, prob.R, d, ModelFreeOptions(stride=stride))
        sol.setup = setup
    wall = time.perf_counter() - start
    res = simulate_closed_loop(prob.f_fn, prob.g_fn, sol.controller, x0, COST_TF, COST_DT,
                               prob.q_fn, prob.R)
    adp = sol.adp
    return BenchmarkRow(problem, mode, int(d), res.J, wall, adp.iterations, adp.converged,
                        adp.final_delta, res.tail, sol)


def format_table(rows) -> str:
    """Aligned text table: mode, d, J(x0), wall-seconds, iterations."""
    head = ("mode", "d", "J(x0)", "wall-seconds", "iterations")
    body = [(r.mode, str(r.d), f"{r.J:.4f}", f"{r.wall:.2f}",
             str(r.iterations) + ("" if r.converged else " (not converged)")) for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
