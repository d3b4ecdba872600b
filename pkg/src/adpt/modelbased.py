"""Model-based mode: explore known dynamics, integrate, fit.

The pipeline is linearize -> CARE (default initial control) -> default
exploration -> RK4 data collection with running integrals -> policy
iteration.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from . import exprdsl as ex
from .adpcore import AdpProblem, AdpResult, SegmentBatch, adp_iterate, merge_stride_batch
from .controller import PolynomialController
from .odeint import rk4_stages
from .polybasis import enumerate_monomials, eval_basis
from .problem import ControlProblem

log = logging.getLogger(__name__)

# (source text, value) of the frequencies default exploration draws from
FREQUENCY_POOL = (
    ("0.7", 0.7), ("1.1", 1.1), ("2.3", 2.3), ("3", 3.0), ("5", 5.0), ("7", 7.0), ("9", 9.0),
    ("pi", np.pi), ("2*pi", 2 * np.pi), ("sqrt(2)", np.sqrt(2)), ("sqrt(3)", np.sqrt(3)),
    ("sqrt(5)", np.sqrt(5)), ("sqrt(6)", np.sqrt(6)), ("sqrt(7)", np.sqrt(7)), ("exp(1)", np.e),
)

DEFAULT_SEED = 0


class LinearizationError(ValueError):
    pass


class CareError(np.linalg.LinAlgError):
    pass


@dataclass
class ModelBasedOptions:
    """Exploration and iteration settings for :func:`solve_model_based`.

    Defaults follow the toolbox option table: two random initial states with
    components in (0.3, 0.9) or (-0.9, -0.3), time span [0, 8], amplitude
    0.8 with four sinusoids per exploration signal, stride 1, stop criterion
    1 with epsilon 1e-3 and at most 100 iterations.  ``segment`` (0.05 s)
    and ``dt`` (1e-3 s) set the equation length and RK4 step.
    """

    x_init: np.ndarray | None = None
    x_init_num: int = 2
    x_init_min: float = 0.3
    x_init_max: float = 0.9
    t_span: Sequence = (0.0, 8.0)
    dt: float = 1e-3
    segment: float = 0.05
    u0: list | None = None
    eta: list | None = None
    expl_ampl: float = 0.8
    num_freq: int = 4
    seed: int = DEFAULT_SEED
    stride: int | Sequence[int] = 1
    crit: int = 1
    epsilon: float = 1e-3
    max_iter: int = 100

    def __post_init__(self):
        if self.expl_ampl < 0:
            raise ValueError("explAmpl must be >= 0")
        if self.num_freq < 1:
            raise ValueError("numFreq must be >= 1")
        if not (0 <= self.x_init_min < self.x_init_max):
            raise ValueError("need 0 <= xInitMin < xInitMax")
        if self.dt <= 0 or self.segment <= 0:
            raise ValueError("dt and segment must be positive")


# ---------------------------------------------------------------------------
# linearization and LQR
# ---------------------------------------------------------------------------

def linearize(f: Sequence[ex.Expr], g: Sequence[Sequence[ex.Expr]], n: int):
    """Jacobian of ``f`` and value of ``g`` at the origin."""
    zero = np.zeros(n)
    f0 = np.array([ex.evaluate(e, zero) for e in f])
    if np.max(np.abs(f0), initial=0.0) > 1e-9:
        raise LinearizationError(f"f(0) = {f0} is not zero; the origin must be an equilibrium")
    try:
        A = np.array([[ex.evaluate(ex.differentiate(e, j + 1), zero) for j in range(n)] for e in f])
    except ex.UnsupportedDerivativeError as err:
        raise LinearizationError(f"cannot linearize f: {err}") from err
    B = np.array([[ex.evaluate(e, zero) for e in row] for row in g])
    return A, B


def quadratic_weight(q: ex.Expr, n: int) -> np.ndarray:
    """Q with ``q(x) ~ x^T Q x`` near 0, i.e. half the Hessian at the origin."""
    zero = np.zeros(n)
    first = [ex.differentiate(q, i + 1) for i in range(n)]
    H = np.array([[ex.evaluate(ex.differentiate(first[i], j + 1), zero) for j in range(n)] for i in range(n)])
    return 0.5 * (H + H.T) / 2


def solve_care(A, B, Q, R, tol: float = 1e-8):
    """Stabilizing solution of ``A^T P + P A - P B R^-1 B^T P + Q = 0``.

    Uses the stable invariant subspace of the Hamiltonian matrix (ordered
    real Schur form).  Returns ``(P, K)`` with ``K = R^-1 B^T P``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    Rinv_Bt = np.linalg.solve(R, B.T)
    H = np.block([[A, -B @ Rinv_Bt], [-Q, -A.T]])
    eig = np.linalg.eigvals(H)
    scale = max(1.0, np.max(np.abs(eig)))
    if np.min(np.abs(eig.real)) < tol * scale:
        raise CareError("Hamiltonian matrix has eigenvalues on the imaginary axis: "
                        "no stabilizing solution (check stabilizability/detectability)")
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise CareError(f"stable subspace has dimension {sdim}, expected {n}")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    try:
        P = np.linalg.solve(U11.T, U21.T).T
    except np.linalg.LinAlgError as err:
        raise CareError("stable subspace is not a graph over the state space") from err
    P = (P + P.T) / 2
    K = Rinv_Bt @ P
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise CareError("closed loop A - B K is not Hurwitz")
    return P, K


def care_residual(A, B, Q, R, P) -> float:
    A, B, Q, R, P = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, B, Q, R, P))
    B = B.reshape(A.shape[0], -1)
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T) @ P + Q
    return float(np.linalg.norm(res))


# ---------------------------------------------------------------------------
# exploration
# ---------------------------------------------------------------------------

def exploration_signal(freq_texts: Sequence[str], ampl: float) -> ex.Expr:
    """``ampl * (sin(w1*t) + ... )`` for the given frequency source texts."""
    if ampl == 0:
        return ex.Num(0.0)
    body = "+".join(f"sin({w}*t)" for w in freq_texts)
    return ex.parse(f"{ex.to_text(ex.Num(float(ampl)))}*({body})")


def _draw_signals(count, num_freq, ampl, rng) -> list[ex.Expr]:
    if num_freq > len(FREQUENCY_POOL):
        raise ValueError(f"numFreq={num_freq} exceeds the frequency pool size {len(FREQUENCY_POOL)}")
    seen = set()
    out = []
    for _ in range(count):
        for _attempt in range(1000):
            pick = tuple(rng.choice(len(FREQUENCY_POOL), size=num_freq, replace=False))
            if frozenset(pick) not in seen:
                break
        else:
            raise ValueError(f"cannot draw {count} distinct exploration signals from the pool")
        seen.add(frozenset(pick))
        out.append(exploration_signal([FREQUENCY_POOL[i][0] for i in pick], ampl))
    return out


def default_exploration(m: int, num_freq: int = 4, expl_ampl: float = 0.8, seed=DEFAULT_SEED,
                        rng: np.random.Generator | None = None) -> list[ex.Expr]:
    """m mutually distinct sums of sinusoids with frequencies drawn from the pool."""
    rng = np.random.default_rng(seed) if rng is None else rng
    return _draw_signals(m, num_freq, expl_ampl, rng)


def random_initial_states(count, n, lo, hi, rng) -> np.ndarray:
    """Components uniform on (lo, hi) with a random sign."""
    mag = rng.uniform(lo, hi, size=(count, n))
    sign = np.where(rng.random((count, n)) < 0.5, -1.0, 1.0)
    return mag * sign


# ---------------------------------------------------------------------------
# data collection
# ---------------------------------------------------------------------------

def _workers():
    try:
        return max(1, int(os.environ.get("ADPT_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map; uses up to ADPT_THREADS worker threads."""
    items = list(items)
    workers = min(_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _time_grid(t0, tf, dt, segment):
    steps = int(round((tf - t0) / dt))
    seg_steps = int(round(segment / dt))
    if steps < 1 or seg_steps < 1:
        raise ValueError(f"time span [{t0}, {tf}] with dt={dt}, segment={segment} has no steps")
    if abs(steps * dt - (tf - t0)) > 1e-9 * max(1.0, abs(tf)) or abs(seg_steps * dt - segment) > 1e-12:
        raise ValueError(f"dt={dt} must divide the time span and the segment length")
    if steps % seg_steps:
        raise ValueError(f"segment length {segment} does not divide time span [{t0}, {tf}]")
    return t0 + dt * np.arange(steps + 1), seg_steps


def segments_from_stages(traj, seg_steps, d, R, q_batch, u0_batch, eta_batch) -> SegmentBatch:
    """Raw segments (one per ``seg_steps`` RK4 steps) from a stage trajectory.

    The integrals use the RK4 stage weights, i.e. they equal the running
    integrals of the augmented RK4 system between segment boundaries.
    """
    steps = traj.stage_t.shape[0]
    nseg = steps // seg_steps
    n = traj.x.shape[1]
    P = seg_steps * 4
    nodes_t = traj.stage_t[: nseg * seg_steps].reshape(nseg, P)
    nodes_x = traj.stage_x[: nseg * seg_steps].reshape(nseg, P, n)
    w = traj.stage_weights()[: nseg * seg_steps].reshape(nseg, P)
    qv = q_batch(nodes_t, nodes_x)
    u0 = u0_batch(nodes_t, nodes_x)            # (nseg, P, m)
    eta = eta_batch(nodes_t, nodes_x)
    u0R = u0 @ R
    int_q = np.einsum("kp,kp->k", w, qv)
    int_u0Ru0 = np.einsum("kp,kpa,kpa->k", w, u0R, u0)
    cbasis = enumerate_monomials(n, d)
    vbasis = enumerate_monomials(n, d + 1)
    phi = eval_basis(cbasis, nodes_x)          # (nseg, P, N2)
    wphi = phi * w[..., None]
    int_alpha = np.matmul((eta @ R.T).transpose(0, 2, 1), wphi)
    int_beta = np.matmul(((u0 + eta) @ R.T).transpose(0, 2, 1), wphi)
    int_gamma = np.matmul(wphi.transpose(0, 2, 1), phi)
    ends = traj.x[seg_steps::seg_steps][:nseg]
    starts = traj.x[: nseg * seg_steps: seg_steps]
    jump = eval_basis(vbasis, ends) - eval_basis(vbasis, starts)
    return SegmentBatch(jump, int_q, int_u0Ru0, int_alpha, int_beta, int_gamma)


def apply_stride(raw: SegmentBatch, boundary_x: np.ndarray, stride: int, d: int) -> SegmentBatch:
    """Merge ``stride`` consecutive raw segments; jumps from merged endpoints.

    ``boundary_x`` holds the states at the raw segment boundaries
    (``len(raw) + 1`` rows).
    """
    if stride == 1:
        return raw
    merged = merge_stride_batch(raw, stride)
    k = len(merged)
    vbasis = enumerate_monomials(boundary_x.shape[1], d + 1)
    ends = boundary_x[stride: (k + 1) * stride: stride]
    starts = boundary_x[0: k * stride: stride]
    merged.phi_jump = eval_basis(vbasis, ends) - eval_basis(vbasis, starts)
    return merged


def _strides(stride, count):
    if np.ndim(stride) == 0:
        return [int(stride)] * count
    stride = [int(s) for s in stride]
    if len(stride) != count:
        raise ValueError(f"stride has {len(stride)} rows, expected {count}")
    return stride


def _spans(t_span, count):
    arr = np.asarray(t_span, dtype=float)
    if arr.ndim == 1:
        arr = np.tile(arr, (count, 1))
    if arr.shape != (count, 2):
        raise ValueError(f"tSpan must be [t0, tf] or {count} rows of [t0, tf]")
    if np.any(arr[:, 1] <= arr[:, 0]):
        raise ValueError("tSpan rows must satisfy t0 < tf")
    return arr


def collect_segments(problem: ControlProblem, u0: Sequence[ex.Expr], eta: Sequence[Sequence[ex.Expr]],
                     x_init, d: int, options: ModelBasedOptions) -> SegmentBatch:
    """Explore from every initial state and build the segment integrals.

    ``eta`` holds one list of m exploration expressions per initial state.
    """
    x_init = np.atleast_2d(np.asarray(x_init, dtype=float))
    count = x_init.shape[0]
    if x_init.shape[1] != problem.n:
        raise ValueError(f"initial states have dimension {x_init.shape[1]}, expected {problem.n}")
    if len(eta) != count:
        raise ValueError(f"need exploration signals for {count} initial states, got {len(eta)}")
    spans = _spans(options.t_span, count)
    strides = _strides(options.stride, count)
    R = problem.R
    n = problem.n
    u0_batch = ex.batch_function(u0, n)

    def one(i):
        grid, seg_steps = _time_grid(spans[i, 0], spans[i, 1], options.dt, options.segment)
        inputs = [ex.add(u, e) for u, e in zip(u0, eta[i])]
        field = problem.closed_loop_field(inputs)
        traj = rk4_stages(field, x_init[i], grid)
        eta_batch = ex.batch_function(eta[i], n)
        raw = segments_from_stages(traj, seg_steps, d, R,
                                   lambda t, x: problem.q_batch(x), u0_batch, eta_batch)
        boundary = traj.x[::seg_steps]
        return apply_stride(raw, boundary, strides[i], d)

    batches = parallel_map(one, range(count))
    if sum(len(b) for b in batches) == 0:
        raise ValueError("no segments after slicing; lengthen tSpan or reduce stride")
    return SegmentBatch.concatenate(batches)


# ---------------------------------------------------------------------------
# end-to-end solve
# ---------------------------------------------------------------------------

@dataclass
class ExplorationSetup:
    x_init: np.ndarray
    t_span: np.ndarray
    u0: list
    eta: list  # per initial state, m expressions each
    K_gain: np.ndarray | None = None
    P: np.ndarray | None = None


@dataclass
class Solution:
    controller: PolynomialController
    adp: AdpResult
    setup: ExplorationSetup
    wall_time: float = 0.0
    info: dict = field(default_factory=dict)


def lqr_initial_control(problem: ControlProblem):
    """Default initial control ``u0 = -K x`` from the linearized problem."""
    A, B = linearize(problem.f, problem.g, problem.n)
    Q = quadratic_weight(problem.q, problem.n)
    P, K = solve_care(A, B, Q, problem.R)
    return [ex.linear_form(-K[j]) for j in range(problem.m)], K, P


def prepare_exploration(problem: ControlProblem, options: ModelBasedOptions,
                        rng: np.random.Generator | None = None) -> ExplorationSetup:
    """Resolve initial states, initial control and exploration signals."""
    rng = np.random.default_rng(options.seed) if rng is None else rng
    if options.x_init is None:
        x_init = random_initial_states(options.x_init_num, problem.n, options.x_init_min,
                                       options.x_init_max, rng)
    else:
        x_init = np.atleast_2d(np.asarray(options.x_init, dtype=float))
    count = x_init.shape[0]
    K = P = None
    if options.u0 is None:
        u0, K, P = lqr_initial_control(problem)
    else:
        u0 = list(options.u0)
        if len(u0) != problem.m:
            raise ValueError(f"u0 has {len(u0)} rows, expected m={problem.m}")
    if options.eta is None:
        flat = _draw_signals(count * problem.m, options.num_freq, options.expl_ampl, rng)
        eta = [flat[i * problem.m:(i + 1) * problem.m] for i in range(count)]
    else:
        eta = list(options.eta)
        if eta and isinstance(eta[0], ex.Expr):
            eta = [eta] * count
        if len(eta) != count or any(len(e) != problem.m for e in eta):
            raise ValueError(f"eta must have m={problem.m} rows (per initial state)")
    return ExplorationSetup(x_init, _spans(options.t_span, count), u0, eta, K, P)


def solve_model_based(problem: ControlProblem, d: int, options: ModelBasedOptions | None = None,
                      setup: ExplorationSetup | None = None) -> Solution:
    """Fit a degree-``d`` polynomial controller for a known system."""
    options = options or ModelBasedOptions()
    start = time.perf_counter()
    if setup is None:
        setup = prepare_exploration(problem, options)
    if np.ndim(options.t_span) == 1 or np.shape(options.t_span) != setup.t_span.shape:
        options = replace(options, t_span=setup.t_span)
    batch = collect_segments(problem, setup.u0, setup.eta, setup.x_init, d, options)
    adp = adp_iterate(batch, AdpProblem(problem.n, problem.m, problem.R, d, options.crit,
                                        options.epsilon, options.max_iter))
    coeffs = adp.coefficients
    wall = time.perf_counter() - start
    ctrl = PolynomialController(problem.n, problem.m, d, coeffs.W, coeffs.c, info={
        "mode": "model-based", "iterations": adp.iterations, "seed": options.seed,
        "converged": adp.converged, "crit": options.crit,
    })
    log.info("model-based d=%d: %s (%.2fs)", d, adp.summary(), wall)
    return Solution(ctrl, adp, setup, wall)
