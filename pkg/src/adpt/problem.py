"""Control-affine problem definitions built from expressions."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exprdsl as ex


@dataclass(eq=False)
class ControlProblem:
    """``x' = f(x) + g(x) u`` with running cost ``q(x) + u^T R u``.

    ``f`` holds n expressions, ``g`` an n x m nested list, ``q`` one
    expression; all may use x1..xn (``t`` is accepted but the system is
    treated as autonomous by the solvers).
    """

    n: int
    m: int
    f: list
    g: list
    q: ex.Expr
    R: np.ndarray
    name: str = field(default="problem")

    def __post_init__(self):
        if len(self.f) != self.n:
            raise ValueError(f"f has {len(self.f)} rows, expected n={self.n}")
        if len(self.g) != self.n or any(len(row) != self.m for row in self.g):
            raise ValueError(f"g must be {self.n}x{self.m}")
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.R.shape != (self.m, self.m):
            raise ValueError(f"R must be {self.m}x{self.m}, got {self.R.shape}")
        for e in list(self.f) + [e for row in self.g for e in row] + [self.q]:
            ex.bind(e, self.n)

    @classmethod
    def from_text(cls, n: int, m: int, f: str, g: str, q: str, R, name="problem") -> "ControlProblem":
        """Build from source text, e.g. ``f="x2; -x1"``, ``g="0; 1"``."""
        if isinstance(R, str):
            R = ex.parse_numeric_matrix(R, m, m)
        return cls(n, m, ex.parse_vector(f, n, n), ex.parse_matrix(g, n, m, n), ex.parse(q, n), R, name)

    @cached_property
    def _f(self):
        return ex.compile_rows(self.f, self.n)

    @cached_property
    def _g(self):
        return ex.compile_rows([e for row in self.g for e in row], self.n)

    @cached_property
    def _q(self):
        return ex.compile_rows([self.q], self.n)

    @cached_property
    def _q_batch(self):
        return ex.compile_rows([self.q], self.n, vectorized=True)

    def f_fn(self, x) -> np.ndarray:
        return np.array(self._f(0.0, x))

    def g_fn(self, x) -> np.ndarray:
        return np.array(self._g(0.0, x)).reshape(self.n, self.m)

    def q_fn(self, x) -> float:
        return self._q(0.0, x)[0]

    def q_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._q_batch(np.zeros(x.shape[:-1]), x)[0]

    def closed_loop_field(self, inputs):
        """Compiled ``(t, x) -> f(x) + g(x) v`` for input expressions ``v``."""
        return ex.compile_control_affine(self.f, self.g, inputs, self.n)

    def to_text(self) -> dict:
        """Source strings for the ``[system]``/``[cost]`` sections of a problem file."""
        return {
            "n": str(self.n),
            "m": str(self.m),
            "f": "; ".join(ex.to_text(e) for e in self.f),
            "g": "; ".join(", ".join(ex.to_text(e) for e in row) for row in self.g),
            "q": ex.to_text(self.q),
            "R": "; ".join(", ".join(repr(float(v)) for v in row) for row in self.R),
        }
