"""Model-free mode: fit a controller from recorded trajectories only.

Each trajectory is a list of samples ``(t, x, u0, eta)``, where ``u0`` is
the value of the (unknown to us) initial feedback at ``x`` and ``eta`` the
exploration input that was added to it.  Integrals use the trapezoidal rule
on the recorded samples; ``stride`` merges consecutive sample intervals into
one equation while still using every interior sample for the quadrature.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import exprdsl as ex
from .adpcore import AdpProblem, SegmentBatch, adp_iterate, merge_stride_batch
from .controller import PolynomialController
from .modelbased import Solution, parallel_map
from .polybasis import enumerate_monomials, eval_basis

log = logging.getLogger(__name__)


class TrajectoryFormatError(ValueError):
    pass


class CoarseSamplingWarning(UserWarning):
    pass


@dataclass
class Trajectory:
    t: np.ndarray    # (L,)
    x: np.ndarray    # (L, n)
    u0: np.ndarray   # (L, m)
    eta: np.ndarray  # (L, m)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        L = self.t.size
        self.x = np.asarray(self.x, dtype=float).reshape(L, -1)
        self.u0 = np.asarray(self.u0, dtype=float).reshape(L, -1)
        self.eta = np.asarray(self.eta, dtype=float).reshape(L, -1)
        if L < 2:
            raise TrajectoryFormatError(f"trajectory has {L} sample(s); at least 2 are needed")
        if self.u0.shape != self.eta.shape:
            raise TrajectoryFormatError("u0 and eta have different dimensions")
        if np.any(np.diff(self.t) <= 0):
            raise TrajectoryFormatError("sample times within a trajectory must be strictly increasing")

    def __len__(self):
        return self.t.size


@dataclass
class TrajectoryLog:
    trajectories: list[Trajectory]

    def __post_init__(self):
        if not self.trajectories:
            raise TrajectoryFormatError("log holds no trajectories")
        dims = {(tr.x.shape[1], tr.u0.shape[1]) for tr in self.trajectories}
        if len(dims) != 1:
            raise TrajectoryFormatError(f"trajectories have inconsistent dimensions {sorted(dims)}")

    @property
    def n(self):
        return self.trajectories[0].x.shape[1]

    @property
    def m(self):
        return self.trajectories[0].u0.shape[1]

    def __len__(self):
        return len(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryLog) or len(self) != len(other):
            return False
        return all(np.array_equal(getattr(a, f), getattr(b, f))
                   for a, b in zip(self.trajectories, other.trajectories)
                   for f in ("t", "x", "u0", "eta"))


def expected_header(n: int, m: int) -> list[str]:
    return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u0_{j + 1}" for j in range(m)]
            + [f"eta_{j + 1}" for j in range(m)])


def load_trajectories(path, n: int, m: int) -> TrajectoryLog:
    """Read a trajectory CSV (``t,x1..xn,u0_1..u0_m,eta_1..eta_m[,traj]``).

    Lines starting with ``#`` are comments.  With a ``traj`` column rows are
    grouped by its value; otherwise a new trajectory starts wherever ``t``
    does not increase.
    """
    path = Path(path)
    want = expected_header(n, m)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh))
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise TrajectoryFormatError(f"{path}: no header")
    line, header = rows[0]
    header = [h.strip() for h in header]
    has_traj = header[-1:] == ["traj"]
    cols = header[:-1] if has_traj else header
    if cols != want:
        missing = [c for c in want if c not in cols]
        extra = [c for c in cols if c not in want]
        raise TrajectoryFormatError(
            f"{path}: line {line}: header {','.join(header)} does not match n={n}, m={m}; expected "
            f"{','.join(want)}[,traj]" + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {extra}" if extra else ""))
    width = len(header)
    data = np.empty((len(rows) - 1, width))
    for k, (line, r) in enumerate(rows[1:]):
        if len(r) != width:
            raise TrajectoryFormatError(f"{path}: line {line}: {len(r)} cells, expected {width}")
        try:
            data[k] = [float(v) for v in r]
        except ValueError:
            bad = next(v for v in r if not _is_float(v))
            raise TrajectoryFormatError(f"{path}: line {line}: non-numeric cell {bad!r}") from None
    if has_traj:
        ids = data[:, -1]
        order = list(dict.fromkeys(ids.tolist()))
        groups = [np.flatnonzero(ids == v) for v in order]
    else:
        cut = np.flatnonzero(np.diff(data[:, 0]) <= 0) + 1
        groups = np.split(np.arange(data.shape[0]), cut)
    trajs = []
    for gi, idx in enumerate(groups):
        block = data[idx]
        try:
            trajs.append(Trajectory(block[:, 0], block[:, 1:1 + n], block[:, 1 + n:1 + n + m],
                                    block[:, 1 + n + m:1 + n + 2 * m]))
        except TrajectoryFormatError as err:
            raise TrajectoryFormatError(f"{path}: trajectory {gi + 1}: {err}") from None
    return TrajectoryLog(trajs)


def _is_float(v):
    try:
        float(v)
        return True
    except ValueError:
        return False


def write_trajectories(log_: TrajectoryLog, path, traj_column: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(expected_header(log_.n, log_.m) + (["traj"] if traj_column else []))
        for k, tr in enumerate(log_.trajectories):
            for i in range(len(tr)):
                row = [tr.t[i], *tr.x[i], *tr.u0[i], *tr.eta[i]]
                w.writerow([repr(float(v)) for v in row] + ([k + 1] if traj_column else []))


def _q_batch(q, n) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(q, str):
        q = ex.parse(q, n)
    if isinstance(q, ex.Expr):
        fn = ex.compile_rows([q], n, vectorized=True)
        return lambda x: fn(np.zeros(x.shape[:-1]), x)[0]
    return q


def build_segments(log_: TrajectoryLog, q, R, d: int, stride: int | Sequence[int] = 1) -> SegmentBatch:
    """Segment integrals from sampled trajectories (trapezoidal rule).

    Within each trajectory, equation ``i`` spans samples ``i*stride`` to
    ``(i+1)*stride``; tail intervals that do not fill a stride are dropped.
    Each sample interval gets the two-point rule and the ``stride`` pieces
    are summed in order, which is the composite rule over all interior
    samples.  The Phi Phi^T integral is kept in factored (node) form.
    """
    n, m = log_.n, log_.m
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (m, m):
        raise ValueError(f"R must be {m}x{m}")
    strides = [int(stride)] * len(log_) if np.ndim(stride) == 0 else [int(s) for s in stride]
    if len(strides) != len(log_) or min(strides) < 1:
        raise ValueError("stride must be >= 1 (one value, or one per trajectory)")
    qb = _q_batch(q, n)
    cbasis, vbasis = enumerate_monomials(n, d), enumerate_monomials(n, d + 1)

    def one(k):
        tr, delta = log_.trajectories[k], strides[k]
        nseg = (len(tr) - 1) // delta
        if nseg == 0:
            return None
        L = nseg * delta + 1
        x, u0, eta = tr.x[:L], tr.u0[:L], tr.eta[:L]
        half = np.diff(tr.t[:L]) / 2
        phi = eval_basis(cbasis, x)
        vphi = eval_basis(vbasis, x)

        def two_point(h):
            # one trapezoid per sample interval, then summed per stride below
            w = half.reshape((-1,) + (1,) * (h.ndim - 1))
            return w * (h[:-1] + h[1:])

        u0R = u0 @ R
        raw = SegmentBatch(
            vphi[1:] - vphi[:-1],
            two_point(qb(x)),
            two_point(np.einsum("la,la->l", u0R, u0)),
            two_point((eta @ R.T)[:, :, None] * phi[:, None, :]),
            two_point(((u0 + eta) @ R.T)[:, :, None] * phi[:, None, :]),
            node_phi=np.stack([phi[:-1], phi[1:]], axis=1),
            node_w=np.stack([half, half], axis=1),
        )
        merged = merge_stride_batch(raw, delta)
        merged.phi_jump = vphi[delta::delta] - vphi[:-1:delta]
        return merged

    parts = [b for b in parallel_map(one, range(len(log_))) if b is not None]
    if not parts:
        raise ValueError("no segments: every trajectory is shorter than stride + 1 samples")
    return SegmentBatch.concatenate(parts)


def estimate_signal_frequency(log_: TrajectoryLog) -> float:
    """Rough angular frequency of the exploration data (RMS-derivative ratio)."""
    best = 0.0
    for tr in log_.trajectories:
        deta = np.diff(tr.eta, axis=0) / np.diff(tr.t)[:, None]
        centered = tr.eta - tr.eta.mean(axis=0)
        num = np.sqrt(np.mean(deta ** 2, axis=0))
        den = np.sqrt(np.mean(centered ** 2, axis=0))
        ok = den > 1e-12
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


@dataclass
class ModelFreeOptions:
    stride: int | Sequence[int] = 1
    crit: int = 1
    epsilon: float = 1e-3
    max_iter: int = 100


def solve_model_free(data, q, R, d: int, options: ModelFreeOptions | None = None,
                     n: int | None = None, m: int | None = None) -> Solution:
    """Fit a degree-``d`` controller from a :class:`TrajectoryLog` or CSV path."""
    options = options or ModelFreeOptions()
    start = time.perf_counter()
    if not isinstance(data, TrajectoryLog):
        if n is None or m is None:
            raise ValueError("n and m are required when loading trajectories from a file")
        data = load_trajectories(data, n, m)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    omega = estimate_signal_frequency(data)
    max_dt = max(float(np.max(np.diff(tr.t))) for tr in data.trajectories)
    if omega * max_dt > 0.5:
        warnings.warn(f"sample period {max_dt:g} s is coarse for signals near {omega:.3g} rad/s "
                      f"(omega*dt = {omega * max_dt:.2f} > 0.5); trapezoid integrals will be inaccurate",
                      CoarseSamplingWarning, stacklevel=2)
    batch = build_segments(data, q, R, d, options.stride)
    adp = adp_iterate(batch, AdpProblem(data.n, data.m, R, d, options.crit, options.epsilon,
                                        options.max_iter))
    coeffs = adp.coefficients
    wall = time.perf_counter() - start
    ctrl = PolynomialController(data.n, data.m, d, coeffs.W, coeffs.c, info={
        "mode": "model-free", "iterations": adp.iterations, "converged": adp.converged,
        "crit": options.crit,
    })
    log.info("model-free d=%d: %s (%.2fs)", d, adp.summary(), wall)
    return Solution(ctrl, adp, setup=None, wall_time=wall)
