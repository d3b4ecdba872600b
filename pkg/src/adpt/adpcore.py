"""Least-squares policy iteration over trajectory segments.

Every segment [r_k, s_k] of an explored trajectory yields one linear
equation in the value coefficients ``c`` (over Phi_{d+1}) and the control
coefficients ``W`` (over Phi_d).  Iteration ``i = 0`` uses only the
exploration signal; later iterations correct with the previous control
estimate ``W_prev``:

    row_k  = [ phi_jump_k | 2 vec(int_alpha_k) ]                         (i = 0)
    row_k  = [ phi_jump_k | 2 vec(int_beta_k - R W_prev int_gamma_k) ]   (i >= 1)
    b_k    = -(int_q_k + int_u0Ru0_k)                                    (i = 0)
    b_k    = -int_q_k - <W_prev^T R W_prev, int_gamma_k>                 (i >= 1)

``vec`` stacks matrix columns.  ``int_gamma`` is the time integral of
Phi_d Phi_d^T (N2 x N2).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .polybasis import basis_size

log = logging.getLogger(__name__)

COEFF_DIVERGENCE = 1e9


class PersistentExcitationError(RuntimeError):
    """The initial least-squares system is rank deficient."""


class NonConvergenceError(RuntimeError):
    pass


class RankDeficiencyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class SegmentData:
    """Integrals over one segment [r_k, s_k].

    phi_jump : Phi_{d+1}(x(s)) - Phi_{d+1}(x(r)), shape (N1,)
    int_q, int_u0Ru0 : integrals of q(x) and u0^T R u0
    int_alpha : integral of R eta Phi_d^T, shape (m, N2)
    int_beta : integral of R (u0 + eta) Phi_d^T, shape (m, N2)
    int_gamma : integral of Phi_d Phi_d^T, shape (N2, N2)
    """

    phi_jump: np.ndarray
    int_q: float
    int_u0Ru0: float
    int_alpha: np.ndarray
    int_beta: np.ndarray
    int_gamma: np.ndarray


@dataclass
class SegmentBatch:
    """Stacked segment integrals (struct of arrays).

    ``int_gamma`` is either stored densely, shape (K, N2, N2), or kept in
    factored form as quadrature nodes: ``gamma_k = sum_p w[k, p] *
    outer(phi[k, p], phi[k, p])`` with ``node_phi`` (K, P, N2) and
    ``node_w`` (K, P).  The factored form keeps memory linear in N2, which
    matters for long sampled logs at higher degrees.
    """

    phi_jump: np.ndarray
    int_q: np.ndarray
    int_u0Ru0: np.ndarray
    int_alpha: np.ndarray
    int_beta: np.ndarray
    int_gamma: np.ndarray | None = None
    node_phi: np.ndarray | None = field(default=None, repr=False)
    node_w: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.int_gamma is None and (self.node_phi is None or self.node_w is None):
            raise ValueError("SegmentBatch needs int_gamma or its quadrature nodes")
        k = self.phi_jump.shape[0]
        for name in ("int_q", "int_u0Ru0", "int_alpha", "int_beta"):
            if getattr(self, name).shape[0] != k:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} segments, expected {k}")
        if self.int_alpha.shape != self.int_beta.shape:
            raise ValueError("int_alpha and int_beta shapes differ")

    def __len__(self):
        return self.phi_jump.shape[0]

    @property
    def m(self):
        return self.int_alpha.shape[1]

    @property
    def n1(self):
        return self.phi_jump.shape[1]

    @property
    def n2(self):
        return self.int_alpha.shape[2]

    def gamma(self) -> np.ndarray:
        """Dense (K, N2, N2) gamma integrals."""
        if self.int_gamma is not None:
            return self.int_gamma
        weighted = self.node_phi * self.node_w[..., None]
        return np.matmul(weighted.transpose(0, 2, 1), self.node_phi)

    def gamma_left(self, W: np.ndarray) -> np.ndarray:
        """``W @ gamma_k`` for every segment, shape (K, m, N2)."""
        if self.int_gamma is not None:
            return np.matmul(W[None, :, :], self.int_gamma)
        u = self.node_phi @ W.T  # (K, P, m)
        u *= self.node_w[..., None]
        return np.matmul(u.transpose(0, 2, 1), self.node_phi)

    def gamma_quadratic(self, W: np.ndarray, R: np.ndarray) -> np.ndarray:
        """``<W^T R W, gamma_k>`` for every segment, shape (K,)."""
        if self.int_gamma is not None:
            M = W.T @ R @ W
            return np.einsum("ij,kij->k", M, self.int_gamma)
        u = self.node_phi @ W.T
        return np.einsum("kp,kpa,ab,kpb->k", self.node_w, u, R, u, optimize=True)

    def segment(self, k: int) -> SegmentData:
        gamma = self.int_gamma[k] if self.int_gamma is not None else (
            (self.node_phi[k] * self.node_w[k][:, None]).T @ self.node_phi[k])
        return SegmentData(self.phi_jump[k], float(self.int_q[k]), float(self.int_u0Ru0[k]),
                           self.int_alpha[k], self.int_beta[k], gamma)

    def to_segments(self) -> list[SegmentData]:
        return [self.segment(k) for k in range(len(self))]

    @classmethod
    def from_segments(cls, segments: Sequence[SegmentData]) -> "SegmentBatch":
        if not segments:
            raise ValueError("no segments")
        shapes = {(s.phi_jump.shape, s.int_alpha.shape, s.int_beta.shape, s.int_gamma.shape)
                  for s in segments}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent segment dimensions: {sorted(shapes)}")
        return cls(
            np.array([s.phi_jump for s in segments], dtype=float),
            np.array([s.int_q for s in segments], dtype=float),
            np.array([s.int_u0Ru0 for s in segments], dtype=float),
            np.array([s.int_alpha for s in segments], dtype=float),
            np.array([s.int_beta for s in segments], dtype=float),
            np.array([s.int_gamma for s in segments], dtype=float),
        )

    @classmethod
    def concatenate(cls, batches: Sequence["SegmentBatch"]) -> "SegmentBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            raise ValueError("no segments")
        dense = all(b.int_gamma is not None for b in batches)
        factored = all(b.node_phi is not None for b in batches)
        same_p = factored and len({b.node_phi.shape[1] for b in batches}) == 1
        kw = {}
        if dense:
            kw["int_gamma"] = np.concatenate([b.int_gamma for b in batches])
        if same_p:
            kw["node_phi"] = np.concatenate([b.node_phi for b in batches])
            kw["node_w"] = np.concatenate([b.node_w for b in batches])
        if not kw:
            kw["int_gamma"] = np.concatenate([b.gamma() for b in batches])
        return cls(
            np.concatenate([b.phi_jump for b in batches]),
            np.concatenate([b.int_q for b in batches]),
            np.concatenate([b.int_u0Ru0 for b in batches]),
            np.concatenate([b.int_alpha for b in batches]),
            np.concatenate([b.int_beta for b in batches]),
            **kw,
        )


def merge_stride(segments: Sequence[SegmentData], stride: int) -> list[SegmentData]:
    """Merge runs of ``stride`` consecutive segments into one.

    Merged equation ``i`` covers segments ``i*stride .. (i+1)*stride - 1``
    for every ``i`` with ``(i+1)*stride <= K``; a short tail is dropped.
    Integrals are summed in order, the jump spans first start to last end
    (consecutive jumps telescope, so the jump is also their sum).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride == 1:
        return list(segments)
    merged = []
    for i in range(len(segments) // stride):
        run = segments[i * stride:(i + 1) * stride]
        acc = run[0]
        q, u0 = acc.int_q, acc.int_u0Ru0
        a, b, g = acc.int_alpha, acc.int_beta, acc.int_gamma
        jump = acc.phi_jump
        for s in run[1:]:
            q = q + s.int_q
            u0 = u0 + s.int_u0Ru0
            a = a + s.int_alpha
            b = b + s.int_beta
            g = g + s.int_gamma
            jump = jump + s.phi_jump
        merged.append(SegmentData(jump, q, u0, a, b, g))
    return merged


def merge_stride_batch(batch: SegmentBatch, stride: int) -> SegmentBatch:
    """Array version of :func:`merge_stride` (same sequential summation order)."""
    if stride == 1:
        return batch
    k = (len(batch) // stride) * stride
    if k == 0:
        raise ValueError(f"{len(batch)} segments cannot fill a stride of {stride}")

    def fold(arr):
        arr = arr[:k].reshape((k // stride, stride) + arr.shape[1:])
        out = arr[:, 0].copy()
        for j in range(1, stride):
            out = out + arr[:, j]
        return out

    kw = {}
    if batch.int_gamma is not None:
        kw["int_gamma"] = fold(batch.int_gamma)
    else:
        p = batch.node_phi.shape[1]
        kw["node_phi"] = batch.node_phi[:k].reshape(k // stride, stride * p, -1)
        kw["node_w"] = batch.node_w[:k].reshape(k // stride, stride * p)
    return SegmentBatch(fold(batch.phi_jump), fold(batch.int_q), fold(batch.int_u0Ru0),
                        fold(batch.int_alpha), fold(batch.int_beta), **kw)


@dataclass(frozen=True)
class AdpProblem:
    """Dimensions, cost weight and iteration controls for one solve."""

    n: int
    m: int
    R: np.ndarray
    d: int = 1
    crit: int = 1
    epsilon: float = 1e-3
    max_iter: int = 100

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "R", R)
        if R.shape != (self.m, self.m):
            raise ValueError(f"R must be {self.m}x{self.m}, got {R.shape}")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be positive definite")
        if self.d < 1:
            raise ValueError(f"degree must be >= 1, got {self.d}")
        if self.crit not in (0, 1, 2, 3):
            raise ValueError(f"stop criterion must be 0..3, got {self.crit}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def n1(self):
        return basis_size(self.n, self.d + 1)

    @property
    def n2(self):
        return basis_size(self.n, self.d)


@dataclass(frozen=True)
class PolicyCoefficients:
    c: np.ndarray  # (N1,)
    W: np.ndarray  # (m, N2)
    iteration: int


def _as_batch(segments) -> SegmentBatch:
    if isinstance(segments, SegmentBatch):
        return segments
    return SegmentBatch.from_segments(list(segments))


def _vec_rows(arr: np.ndarray) -> np.ndarray:
    # (K, m, N2) -> (K, m*N2), column-stacking each m x N2 block
    return arr.transpose(0, 2, 1).reshape(arr.shape[0], -1)


def assemble(segments, problem: AdpProblem, prev: PolicyCoefficients | None = None):
    """Build ``(A, b)`` for iteration 0 (``prev`` None) or a later iteration."""
    batch = _as_batch(segments)
    if batch.n1 != problem.n1 or batch.n2 != problem.n2 or batch.m != problem.m:
        raise ValueError(
            f"segment dimensions (N1={batch.n1}, m={batch.m}, N2={batch.n2}) do not match "
            f"problem (N1={problem.n1}, m={problem.m}, N2={problem.n2})")
    R = problem.R
    if prev is None:
        ctrl = batch.int_alpha
        b = -(batch.int_q + batch.int_u0Ru0)
    else:
        W = np.asarray(prev.W, dtype=float)
        ctrl = batch.int_beta - np.matmul(R[None], batch.gamma_left(W))
        b = -batch.int_q - batch.gamma_quadratic(W, R)
    A = np.hstack([batch.phi_jump, 2.0 * _vec_rows(ctrl)])
    return A, b


def solve_least_squares(A, b):
    """Minimum-norm least-squares solution via the SVD.

    Returns ``(z, rank, residual)`` where ``residual = ||A z - b||``.  The
    numerical rank uses the threshold ``max(K, N) * eps * sigma_max``.  A
    rank-deficient system is solved anyway and reported with a
    :class:`RankDeficiencyWarning`.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    K, N = A.shape
    if K < 1:
        raise ValueError("empty system")
    if K > 2 * N:
        # same singular values and null space as A, much smaller SVD
        Q, Rf = np.linalg.qr(A, mode="reduced")
        M, rhs = Rf, Q.T @ b
    else:
        M, rhs = A, b
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = max(K, N) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    keep = s > tol
    rank = int(keep.sum())
    z = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
    residual = float(np.linalg.norm(A @ z - b))
    if rank < min(K, N):
        warnings.warn(f"least-squares system is rank deficient (rank {rank} of {min(K, N)})",
                      RankDeficiencyWarning, stacklevel=2)
    return z, rank, residual


def numerical_rank(A) -> int:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return int((s > max(A.shape) * np.finfo(float).eps * s[0]).sum()) if s.size else 0


def _split(z, problem):
    c = z[:problem.n1]
    W = z[problem.n1:].reshape((problem.m, problem.n2), order="F")
    return c, W


def _stop(crit, eps, dc, dW, c_prev, W_prev):
    if crit == 0:
        return dc <= eps
    if crit == 1:
        return dc ** 2 + dW ** 2 <= eps ** 2
    if crit == 2:
        return dc <= eps * np.linalg.norm(c_prev)
    return dc ** 2 + dW ** 2 <= eps ** 2 * (np.linalg.norm(c_prev) ** 2 + np.linalg.norm(W_prev) ** 2)


@dataclass
class IterationRecord:
    iteration: int
    c: np.ndarray
    W: np.ndarray
    delta: float  # sqrt(||dc||^2 + ||dW||_F^2); nan at i = 0
    rank: int
    residual: float


@dataclass
class AdpResult:
    coefficients: PolicyCoefficients
    history: list[IterationRecord]
    converged: bool
    segments: int

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def final_delta(self) -> float:
        return self.history[-1].delta

    def summary(self) -> str:
        last = self.history[-1]
        status = "converged" if self.converged else "NOT converged"
        return (f"{status} after {self.iterations} iterations; final delta {last.delta:.3e}; "
                f"segments {self.segments}; rank {last.rank} of {last.c.size + last.W.size}; "
                f"residual {last.residual:.3e}")


def adp_iterate(segments, problem: AdpProblem) -> AdpResult:
    """Run least-squares policy iteration until the stop criterion holds.

    Raises :class:`PersistentExcitationError` if the first system is rank
    deficient and :class:`NonConvergenceError` if coefficients blow up.
    Reaching ``max_iter`` is not an error: the result has ``converged=False``.
    """
    batch = _as_batch(segments)
    if len(batch) == 0:
        raise ValueError("no segments")
    unknowns = problem.n1 + problem.m * problem.n2
    history: list[IterationRecord] = []
    prev = None
    converged = False
    for i in range(problem.max_iter):
        A, b = assemble(batch, problem, prev)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            z, rank, residual = solve_least_squares(A, b)
        if i == 0 and rank < unknowns:
            raise PersistentExcitationError(
                f"initial least-squares system has rank {rank} < {unknowns} unknowns "
                f"({len(batch)} segments): the data is not persistently exciting; "
                "add trajectories or use a richer exploration signal")
        if rank < unknowns:
            warnings.warn(f"iteration {i}: rank {rank} < {unknowns}", RankDeficiencyWarning, stacklevel=2)
        c, W = _split(z, problem)
        if not (np.all(np.isfinite(z)) and np.linalg.norm(z) < COEFF_DIVERGENCE):
            raise NonConvergenceError(f"coefficients diverged at iteration {i} (|z| = {np.linalg.norm(z):.3g})")
        if prev is None:
            delta = float("nan")
            done = False
        else:
            dc = float(np.linalg.norm(c - prev.c))
            dW = float(np.linalg.norm(W - prev.W))
            delta = float(np.hypot(dc, dW))
            done = _stop(problem.crit, problem.epsilon, dc, dW, prev.c, prev.W)
        history.append(IterationRecord(i, c, W, delta, rank, residual))
        log.debug("iteration %d: delta %.3e rank %d residual %.3e", i, delta, rank, residual)
        prev = PolicyCoefficients(c, W, i)
        if done:
            converged = True
            break
    return AdpResult(prev, history, converged, len(batch))
