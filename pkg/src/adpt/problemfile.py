"""INI-style problem files.

Example::

    [system]
    n = 2
    m = 1
    f = x2; (-3*x1 - 2*x1^3 - 2*x2)/5
    g = 0; 1/5

    [cost]
    q = 5*x1^2 + 3*x2^2
    R = 2

    [adp]
    d = 3

    [explore]
    xInit = -3, 2; 2.2, 3
    tSpan = 0, 6

Every key outside ``[system]`` and ``[cost]`` is optional.  Matrices are
written row by row with ``;`` between rows and ``,`` between columns.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exprdsl as ex
from .modelbased import ModelBasedOptions
from .problem import ControlProblem


class ProblemFileError(ValueError):
    def __init__(self, path, section, key, message):
        self.path, self.section, self.key = str(path), section, key
        where = f"[{section}]" + (f" {key}" if key else "")
        super().__init__(f"{path}: {where}: {message}")


KNOWN = {
    "system": {"n", "m", "f", "g"},
    "cost": {"q", "r"},
    "adp": {"d", "crit", "epsilon", "maxiter", "stride", "seed"},
    "explore": {"xinit", "xinitnum", "xinitmin", "xinitmax", "tspan", "dt", "segment", "u0", "eta",
                "explampl", "numfreq"},
}


@dataclass
class ProblemFile:
    path: str
    problem: ControlProblem
    d: int = 1
    options: ModelBasedOptions = field(default_factory=ModelBasedOptions)


def _reader(path):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as err:
        raise ProblemFileError(path, "-", None, f"cannot read file ({err.strerror})") from None
    except configparser.Error as err:
        raise ProblemFileError(path, "-", None, f"malformed file: {err.message}") from None
    for sec in cp.sections():
        if sec not in KNOWN:
            raise ProblemFileError(path, sec, None, f"unknown section; expected one of {sorted(KNOWN)}")
        for key in cp[sec]:
            if key not in KNOWN[sec]:
                raise ProblemFileError(path, sec, key, "unknown key")
    return cp


def load_problem(path) -> ProblemFile:
    """Parse a problem file; every error names the file, section and key."""
    path = Path(path)
    cp = _reader(path)

    def raw(sec, key, required=False):
        if cp.has_option(sec, key.lower()):
            return cp.get(sec, key.lower())
        if required:
            raise ProblemFileError(path, sec, key, "missing required key")
        return None

    def conv(sec, key, fn, required=False, default=None):
        text = raw(sec, key, required)
        if text is None:
            return default
        try:
            return fn(text)
        except (ValueError, ArithmeticError) as err:
            raise ProblemFileError(path, sec, key, str(err)) from None

    def pos_int(text):
        v = int(text)
        if v < 1:
            raise ValueError(f"must be a positive integer, got {v}")
        return v

    n = conv("system", "n", pos_int, True)
    m = conv("system", "m", pos_int, True)
    f = conv("system", "f", lambda s: ex.parse_vector(s, n, n), True)
    g = conv("system", "g", lambda s: ex.parse_matrix(s, n, m, n), True)
    q = conv("cost", "q", lambda s: ex.parse(s, n), True)
    R = conv("cost", "R", lambda s: ex.parse_numeric_matrix(s, m, m), True)
    if not np.allclose(R, R.T) or np.any(np.linalg.eigvalsh((R + R.T) / 2) <= 0):
        raise ProblemFileError(path, "cost", "R", "must be symmetric positive definite")
    problem = ControlProblem(n, m, f, g, q, R, name=path.stem)

    d = conv("adp", "d", pos_int, default=1)
    kw = {}
    for key, name, fn in (("crit", "crit", int), ("epsilon", "epsilon", float),
                          ("maxIter", "max_iter", pos_int), ("seed", "seed", int),
                          ("xInitNum", "x_init_num", pos_int), ("xInitMin", "x_init_min", float),
                          ("xInitMax", "x_init_max", float), ("dt", "dt", float),
                          ("segment", "segment", float), ("explAmpl", "expl_ampl", float),
                          ("numFreq", "num_freq", pos_int)):
        sec = "adp" if key in ("crit", "epsilon", "maxIter", "seed") else "explore"
        v = conv(sec, key, fn)
        if v is not None:
            kw[name] = v
    if kw.get("crit", 1) not in (0, 1, 2, 3):
        raise ProblemFileError(path, "adp", "crit", "must be 0, 1, 2 or 3")

    def stride(text):
        vals = ex.parse_numeric_matrix(text).reshape(-1)
        if np.any(vals < 1) or np.any(vals != np.round(vals)):
            raise ValueError("stride entries must be positive integers")
        return int(vals[0]) if vals.size == 1 else [int(v) for v in vals]

    kw["stride"] = conv("adp", "stride", stride, default=1)
    x_init = conv("explore", "xInit", lambda s: ex.parse_numeric_matrix(s, cols=n))
    if x_init is not None:
        kw["x_init"] = x_init
    count = x_init.shape[0] if x_init is not None else kw.get("x_init_num", 2)

    def tspan(text):
        ts = ex.parse_numeric_matrix(text, cols=2)
        if ts.shape[0] not in (1, count):
            raise ValueError(f"needs one row or one per initial state ({count})")
        if np.any(ts[:, 1] <= ts[:, 0]):
            raise ValueError("each row must satisfy start < end")
        return ts[0] if ts.shape[0] == 1 else ts

    ts = conv("explore", "tSpan", tspan)
    if ts is not None:
        kw["t_span"] = ts
    u0 = conv("explore", "u0", lambda s: ex.parse_vector(s, m, n))
    if u0 is not None:
        kw["u0"] = u0

    def eta(text):
        rows = ex.parse_vector(text, None, n)
        if len(rows) == m:
            return rows
        if len(rows) == m * count:
            return [rows[i * m:(i + 1) * m] for i in range(count)]
        raise ValueError(f"needs m={m} rows (shared) or m x states = {m * count} rows, got {len(rows)}")

    e = conv("explore", "eta", eta)
    if e is not None:
        kw["eta"] = e
    try:
        options = ModelBasedOptions(**kw)
    except ValueError as err:
        raise ProblemFileError(path, "explore", None, str(err)) from None
    return ProblemFile(str(path), problem, d, options)


def dump_problem(problem: ControlProblem, path, d: int = 1, extra: dict | None = None) -> None:
    """Write ``[system]``/``[cost]`` (and ``[adp] d``) for a problem."""
    txt = problem.to_text()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["system"] = {k: txt[k] for k in ("n", "m", "f", "g")}
    cp["cost"] = {"q": txt["q"], "R": txt["R"]}
    cp["adp"] = {"d": str(d)}
    for sec, vals in (extra or {}).items():
        cp[sec] = {**(cp[sec] if cp.has_section(sec) else {}), **vals}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
