"""Graded monomial basis used for every value/control approximation.

Monomials are ordered by total degree (1..d); inside a degree block they
follow lexicographic order with x1 as the most significant variable, e.g. for
n = 3 the degree-2 block is x1^2, x1*x2, x1*x3, x2^2, x2*x3, x3^2.  The
literature sometimes calls this "graded reverse lexicographic"; the listed
order is the one implemented here and it is the order coefficient files are
written in.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def basis_size(n: int, d: int) -> int:
    """Number of monomials of total degree 1..d in n variables."""
    if n < 1 or d < 1:
        raise ValueError(f"basis_size needs n >= 1 and d >= 1, got n={n}, d={d}")
    # sum_{i=1}^{d} C(i+n-1, n-1) telescopes to C(n+d, n) - 1; build the
    # binomial incrementally so huge arguments stop early
    k = min(n, d)
    size = 1
    for i in range(1, k + 1):
        size = size * (n + d - k + i) // i
        if size > sys.maxsize:
            raise OverflowError(f"basis for n={n}, d={d} exceeds the addressable size")
    return size - 1


def _degree_block(n: int, k: int) -> list[tuple[int, ...]]:
    # descending lex: the exponent of x1 goes first and from high to low
    if n == 1:
        return [(k,)]
    out = []
    for a in range(k, -1, -1):
        for rest in _degree_block(n - 1, k - a):
            out.append((a,) + rest)
    return out


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Ordered exponent table for Phi_d(x).

    Attributes
    ----------
    n, d : int
        State dimension and maximum total degree.
    exponents : ndarray, shape (N, n)
        One row per monomial in basis order.
    """

    n: int
    d: int
    exponents: np.ndarray = field(repr=False)
    # per degree k >= 2: (variable index, parent index in block k-1) so that
    # monomial = x[var] * previous_block[parent]
    _recurrence: tuple = field(repr=False, compare=False)
    _blocks: tuple = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.exponents.shape[0]

    def __len__(self) -> int:
        return self.size

    def labels(self) -> list[str]:
        """Human-readable monomials, e.g. ``x1^2*x3``."""
        out = []
        for row in self.exponents:
            parts = []
            for i, a in enumerate(row):
                if a == 1:
                    parts.append(f"x{i + 1}")
                elif a > 1:
                    parts.append(f"x{i + 1}^{a}")
            out.append("*".join(parts))
        return out


@lru_cache(maxsize=64)
def enumerate_monomials(n: int, d: int) -> BasisSpec:
    """Build the basis description for ``n`` variables up to degree ``d``."""
    basis_size(n, d)
    blocks = [_degree_block(n, k) for k in range(1, d + 1)]
    recurrence = []
    for k in range(2, d + 1):
        prev = {e: j for j, e in enumerate(blocks[k - 2])}
        var = np.empty(len(blocks[k - 1]), dtype=np.intp)
        parent = np.empty(len(blocks[k - 1]), dtype=np.intp)
        for j, e in enumerate(blocks[k - 1]):
            i = next(idx for idx, a in enumerate(e) if a > 0)
            lower = list(e)
            lower[i] -= 1
            var[j] = i
            parent[j] = prev[tuple(lower)]
        recurrence.append((var, parent))
    exps = np.array([e for block in blocks for e in block], dtype=np.int64)
    exps.setflags(write=False)
    bounds = np.cumsum([0] + [len(b) for b in blocks])
    return BasisSpec(n, d, exps, tuple(recurrence), tuple(zip(bounds[:-1], bounds[1:])))


def _check_dim(spec: BasisSpec, x: np.ndarray) -> None:
    if x.shape[-1] != spec.n:
        raise ValueError(f"state has dimension {x.shape[-1]}, basis expects {spec.n}")


def eval_basis(spec: BasisSpec, x) -> np.ndarray:
    """Evaluate Phi_d at one state (shape (n,)) or a batch (shape (S, n)).

    Returns shape (N,) or (S, N).
    """
    x = np.asarray(x, dtype=float)
    _check_dim(spec, x)
    block = x
    blocks = [block]
    for var, parent in spec._recurrence:
        block = x[..., var] * block[..., parent]
        blocks.append(block)
    return np.concatenate(blocks, axis=-1)


def eval_basis_jacobian(spec: BasisSpec, x) -> np.ndarray:
    """Gradient of every monomial at ``x``; shape (N, n)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("eval_basis_jacobian takes a single state vector")
    _check_dim(spec, x)
    e = spec.exponents
    jac = np.zeros((spec.size, spec.n))
    for i in range(spec.n):
        lowered = e.copy()
        lowered[:, i] -= 1
        has = e[:, i] > 0
        lowered[~has, i] = 0
        vals = np.prod(np.power(x, lowered), axis=1)
        jac[:, i] = np.where(has, e[:, i] * vals, 0.0)
    return jac
