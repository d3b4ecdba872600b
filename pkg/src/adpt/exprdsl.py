"""A small expression language for dynamics, costs and exploration signals.

Grammar (standard precedence, ``^`` binds tightest and is right-associative,
then unary minus, then ``* /``, then ``+ -``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x<k>' | 't' | 'pi' | FUNC '(' expr ')' | '(' expr ')'

Functions: sin cos tan exp log sqrt abs.  No implicit multiplication.

Vectors are written as rows separated by ``;``; matrices additionally split
columns with ``,``.  Expressions can be evaluated by walking the tree
(:func:`evaluate`, with located domain errors) or compiled to Python code for
the integration hot loops (:func:`compile_rows`).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, source, line, col, token):
        self.source, self.line, self.col, self.token = source, line, col, token
        super().__init__(f"{message} at line {line}, column {col} (token {token!r})")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Raised when evaluation leaves the domain of an operation."""


class UnsupportedDerivativeError(ExprError):
    pass


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True, repr=False)
class Expr:
    pos: tuple = field(default=(1, 1), compare=False, kw_only=True)

    def __str__(self):
        return to_text(self)

    def __repr__(self):
        return f"{type(self).__name__}({to_text(self)!r})"


@dataclass(frozen=True, repr=False)
class Num(Expr):
    value: float


@dataclass(frozen=True, repr=False)
class Const(Expr):
    name: str  # only "pi"

    @property
    def value(self):
        return math.pi


@dataclass(frozen=True, repr=False)
class Var(Expr):
    index: int  # 1-based state index


@dataclass(frozen=True, repr=False)
class Time(Expr):
    pass


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, repr=False)
class Call(Expr):
    fn: str
    arg: Expr


VarId = Union[int, str]

# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),;]))"
)
_VAR = re.compile(r"x([1-9][0-9]*)$")


def _line_col(source, offset):
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _tokenize(source):
    tokens = []
    i = 0
    while i < len(source):
        if source[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(source, i)
        if m is None or m.end() == i:
            line, col = _line_col(source, i)
            raise ExprSyntaxError("unexpected character", source, line, col, source[i])
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        i = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def where(self, tok):
        return _line_col(self.source, tok[2])

    def fail(self, message, tok, cls=ExprSyntaxError):
        line, col = self.where(tok)
        raise cls(message, self.source, line, col, tok[1] or "<end>")

    def expect(self, text):
        tok = self.take()
        if tok[1] != text or tok[0] != "op":
            self.fail(f"expected {text!r}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            self.fail("empty expression", self.peek())
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail("unexpected token", tok)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            tok = self.take()
            e = BinOp(tok[1], e, self.term(), pos=self.where(tok))
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            tok = self.take()
            e = BinOp(tok[1], e, self.unary(), pos=self.where(tok))
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary(), pos=self.where(tok))
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.take()
            return BinOp("^", base, self.unary(), pos=self.where(tok))
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        pos = self.where(tok)
        if kind == "num":
            return Num(float(text), pos=pos)
        if kind == "name":
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.fail(f"function {text!r} must be called with one argument", self.peek(), ArityError)
                self.take()
                arg = self.expr()
                nxt = self.peek()
                if nxt[1] == ",":
                    self.fail(f"function {text!r} takes exactly one argument", nxt, ArityError)
                self.expect(")")
                return Call(text, arg, pos=pos)
            if text == "t":
                return Time(pos=pos)
            if text == "pi":
                return Const("pi", pos=pos)
            m = _VAR.match(text)
            if m:
                return Var(int(m.group(1)), pos=pos)
            self.fail(f"unknown identifier {text!r}", tok, UnknownIdentifierError)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        self.fail("unexpected token", tok)


def parse(source: str, n: int | None = None) -> Expr:
    """Parse one scalar expression; with ``n`` given, check variable indices."""
    e = _Parser(source).parse()
    if n is not None:
        bind(e, n)
    return e


def _split_top(text, sep):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    return parts


def parse_vector(source: str, rows: int | None = None, n: int | None = None) -> list[Expr]:
    """Parse ``"e1; e2; ..."`` into a list of expressions."""
    items = [s for s in _split_top(source, ";")]
    if items and not items[-1].strip():
        items = items[:-1]
    exprs = [parse(s, n) for s in items]
    if rows is not None and len(exprs) != rows:
        raise ExprError(f"expected {rows} rows, got {len(exprs)}")
    return exprs


def parse_matrix(source: str, rows: int | None = None, cols: int | None = None,
                 n: int | None = None) -> list[list[Expr]]:
    """Parse ``"a, b; c, d"`` (rows by ``;``, columns by ``,``)."""
    row_texts = _split_top(source, ";")
    if row_texts and not row_texts[-1].strip():
        row_texts = row_texts[:-1]
    mat = [[parse(s, n) for s in _split_top(r, ",")] for r in row_texts]
    if rows is not None and len(mat) != rows:
        raise ExprError(f"expected {rows} rows, got {len(mat)}")
    widths = {len(r) for r in mat}
    if len(widths) > 1:
        raise ExprError(f"ragged matrix: row lengths {sorted(widths)}")
    if cols is not None and mat and len(mat[0]) != cols:
        raise ExprError(f"expected {cols} columns, got {len(mat[0])}")
    return mat


def parse_numeric_matrix(source: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Matrix literal of constant expressions, e.g. ``"1, 0; 0, 2"``."""
    mat = parse_matrix(source, rows, cols)
    return np.array([[evaluate(e, ()) for e in row] for row in mat], dtype=float)


def walk(e: Expr):
    yield e
    if isinstance(e, Neg):
        yield from walk(e.arg)
    elif isinstance(e, BinOp):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, Call):
        yield from walk(e.arg)


def max_var_index(e: Expr) -> int:
    return max((node.index for node in walk(e) if isinstance(node, Var)), default=0)


def depends_on_variables(e: Expr) -> bool:
    return any(isinstance(node, (Var, Time)) for node in walk(e))


def bind(e: Expr, n: int) -> Expr:
    """Check that ``e`` only refers to x1..xn."""
    for node in walk(e):
        if isinstance(node, Var) and node.index > n:
            line, col = node.pos
            raise UnknownIdentifierError(
                f"variable x{node.index} exceeds state dimension {n}", "", line, col, f"x{node.index}")
    return e


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def _num_text(v: float) -> str:
    if math.isinf(v) or math.isnan(v):
        raise ExprError(f"cannot print non-finite literal {v}")
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _NEG_PREC
    if isinstance(e, Num) and (e.value < 0 or (e.value == 0 and math.copysign(1, e.value) < 0)):
        return _NEG_PREC
    return 5


def to_text(e: Expr) -> str:
    """Canonical text form; ``parse(to_text(e))`` rebuilds the same tree."""
    if isinstance(e, Num):
        if e.value == 0 and math.copysign(1.0, e.value) < 0:
            return "-0"
        return _num_text(e.value)
    if isinstance(e, Const):
        return e.name
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _NEG_PREC:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left, right = to_text(e.left), to_text(e.right)
        if e.op == "^":
            # base must be an atom; exponent may be a power or a negation
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < _NEG_PREC:
                right = f"({right})"
        else:
            if _prec(e.left) < p:
                left = f"({left})"
            # left-associative: equal precedence on the right needs parens
            if _prec(e.right) <= p:
                right = f"({right})"
        return f"{left}{e.op}{right}"
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Tree-walking evaluation
# --------------------------------------------------------------------------

def _domain(msg, node):
    line, col = node.pos
    raise DomainError(f"{msg} in '{to_text(node)}' at line {line}, column {col}")


def evaluate(e: Expr, x: Sequence[float], t: float = 0.0) -> float:
    """Evaluate ``e`` at state ``x`` and time ``t``."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index > len(x):
            _domain(f"unbound variable x{e.index}", e)
        return float(x[e.index - 1])
    if isinstance(e, Time):
        return float(t)
    if isinstance(e, Neg):
        return -evaluate(e.arg, x, t)
    if isinstance(e, Call):
        a = evaluate(e.arg, x, t)
        if e.fn == "log" and a <= 0:
            _domain("logarithm of non-positive value", e)
        if e.fn == "sqrt" and a < 0:
            _domain("square root of negative value", e)
        try:
            return _MATH_FUNCS[e.fn](a)
        except (OverflowError, ValueError):
            _domain(f"{e.fn} out of range", e)
    if isinstance(e, BinOp):
        a = evaluate(e.left, x, t)
        b = evaluate(e.right, x, t)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0:
                _domain("division by zero", e)
            return a / b
        if a == 0 and b < 0:
            _domain("zero raised to a negative power", e)
        if a < 0 and not float(b).is_integer():
            _domain("negative base with non-integer exponent", e)
        try:
            return math.pow(a, b)
        except OverflowError:
            _domain("power overflow", e)
    raise TypeError(f"not an expression node: {e!r}")


_MATH_FUNCS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "exp": math.exp,
    "log": math.log, "sqrt": math.sqrt, "abs": abs,
}

# --------------------------------------------------------------------------
# Simplifying constructors and differentiation
# --------------------------------------------------------------------------


def _is_num(e, v=None):
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0):
        return b
    if _is_num(b, 0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0):
        return a
    if _is_num(a, 0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0) or _is_num(b, 0):
        return Num(0.0)
    if _is_num(a, 1):
        return b
    if _is_num(b, 1):
        return a
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b) and b.value != 0:
        return Num(a.value / b.value)
    if _is_num(a, 0):
        return Num(0.0)
    if _is_num(b, 1):
        return a
    return BinOp("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 1):
        return a
    if _is_num(b, 0):
        return Num(1.0)
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(fn: str, a: Expr) -> Expr:
    return Call(fn, a)


def _resolve_var(var: VarId):
    if isinstance(var, int):
        return Var(var)
    if var == "t":
        return Time()
    m = _VAR.match(var)
    if not m:
        raise ExprError(f"cannot differentiate with respect to {var!r}")
    return Var(int(m.group(1)))


def _matches(node, target):
    if isinstance(target, Time):
        return isinstance(node, Time)
    return isinstance(node, Var) and node.index == target.index


def _depends(e, target):
    return any(_matches(node, target) for node in walk(e))


def differentiate(e: Expr, var: VarId) -> Expr:
    """Symbolic derivative of ``e`` with respect to ``var`` (``1``, ``"x1"`` or ``"t"``)."""
    return _diff(e, _resolve_var(var))


def _diff(e, v):
    if isinstance(e, (Num, Const)):
        return Num(0.0)
    if isinstance(e, (Var, Time)):
        return Num(1.0 if _matches(e, v) else 0.0)
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Call):
        u = e.arg
        du = _diff(u, v)
        if e.fn == "abs":
            raise UnsupportedDerivativeError(f"abs is not differentiable: '{to_text(e)}'")
        if _is_num(du, 0):
            return Num(0.0)
        if e.fn == "sin":
            outer = call("cos", u)
        elif e.fn == "cos":
            outer = neg(call("sin", u))
        elif e.fn == "tan":
            outer = div(Num(1.0), power(call("cos", u), Num(2.0)))
        elif e.fn == "exp":
            outer = call("exp", u)
        elif e.fn == "log":
            return div(du, u)
        elif e.fn == "sqrt":
            return div(du, mul(Num(2.0), call("sqrt", u)))
        else:  # pragma: no cover - parser rejects unknown functions
            raise UnsupportedDerivativeError(e.fn)
        return mul(outer, du)
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op == "+":
            return add(_diff(a, v), _diff(b, v))
        if e.op == "-":
            return sub(_diff(a, v), _diff(b, v))
        if e.op == "*":
            return add(mul(_diff(a, v), b), mul(a, _diff(b, v)))
        if e.op == "/":
            da, db = _diff(a, v), _diff(b, v)
            if _is_num(db, 0):
                return div(da, b)
            return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
        # power
        if not depends_on_variables(b):
            da = _diff(a, v)
            if _is_num(da, 0):
                return Num(0.0)
            if _is_num(b):
                lowered = Num(b.value - 1.0)
            else:
                lowered = sub(b, Num(1.0))
            return mul(mul(b, power(a, lowered)), da)
        if not _depends(a, v) and not _depends(b, v):
            return Num(0.0)
        # a^b = exp(b*log(a)), so d(a^b) = a^b * d(b*log(a))
        return mul(e, _diff(mul(b, call("log", a)), v))
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Compilation
# --------------------------------------------------------------------------


def _py(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Const):
        return "_pi"
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Neg):
        return f"(-{_py(e.arg)})"
    if isinstance(e, Call):
        return f"_{e.fn}({_py(e.arg)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            if isinstance(e.right, Num) and e.right.value.is_integer() and abs(e.right.value) <= 64:
                k = int(e.right.value)
                if k >= 0:
                    return f"({_py(e.left)}**{k})"
            return f"_pow({_py(e.left)}, {_py(e.right)})"
        return f"({_py(e.left)} {e.op} {_py(e.right)})"
    raise TypeError(f"not an expression node: {e!r}")


def _np_pow(a, b):
    return np.power(np.asarray(a, dtype=float), b)


_SCALAR_NS = {f"_{k}": v for k, v in _MATH_FUNCS.items()}
_SCALAR_NS.update(_pi=math.pi, _pow=math.pow)
_VECTOR_NS = {f"_{k}": getattr(np, {"abs": "abs"}.get(k, k)) for k in _MATH_FUNCS}
_VECTOR_NS.update(_pi=math.pi, _pow=_np_pow)


def compile_rows(exprs: Sequence[Expr], n: int, vectorized: bool = False) -> Callable:
    """Compile a list of expressions into ``fn(t, x) -> tuple``.

    With ``vectorized`` the function accepts ``x`` of shape (S, n) and ``t``
    of shape (S,) and returns a tuple of arrays (constants are broadcast).
    """
    for e in exprs:
        bind(e, n)
    if vectorized:
        unpack = "".join(f"    x{i + 1} = x[..., {i}]\n" for i in range(n))
    else:
        unpack = "".join(f"    x{i + 1} = x[{i}]\n" for i in range(n))
    body = ", ".join(_py(e) for e in exprs)
    src = f"def _compiled(t, x):\n{unpack}    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_VECTOR_NS if vectorized else _SCALAR_NS)
    exec(compile(src, "<adpt-expr>", "exec"), ns)
    fn = ns["_compiled"]
    if not vectorized:
        return fn

    def batched(t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        with np.errstate(all="ignore"):
            vals = fn(np.broadcast_to(np.asarray(t, dtype=float), shape), x)
        return tuple(np.broadcast_to(np.asarray(v, dtype=float), shape) for v in vals)

    return batched


def vector_function(exprs: Sequence[Expr], n: int) -> Callable[[float, np.ndarray], np.ndarray]:
    """``fn(t, x) -> ndarray (len(exprs),)`` for a single state."""
    raw = compile_rows(exprs, n)
    return lambda t, x: np.array(raw(t, x))


def batch_function(exprs: Sequence[Expr], n: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """``fn(t, X) -> ndarray (S, len(exprs))`` for a batch of states."""
    raw = compile_rows(exprs, n, vectorized=True)
    return lambda t, x: np.stack(raw(t, x), axis=-1)


def linear_form(coeffs: np.ndarray) -> Expr:
    """Expression for ``coeffs @ x`` (zero coefficients dropped)."""
    out: Expr = Num(0.0)
    for i, c in enumerate(np.asarray(coeffs, dtype=float)):
        if c == 0:
            continue
        term = mul(Num(abs(float(c))), Var(i + 1))
        if _is_num(out, 0):
            out = term if c > 0 else neg(term)
        else:
            out = add(out, term) if c > 0 else sub(out, term)
    return out


def compile_control_affine(f: Sequence[Expr], g: Sequence[Sequence[Expr]],
                           inputs: Sequence[Expr], n: int) -> Callable[[float, np.ndarray], np.ndarray]:
    """Compile ``x' = f(x) + g(x) v(t, x)`` into one scalar function.

    ``inputs`` are the m expressions of ``v`` (e.g. ``u0 + eta``); each is
    evaluated once per call and zero entries of ``g`` are skipped.
    """
    m = len(inputs)
    for e in list(f) + [e for row in g for e in row] + list(inputs):
        bind(e, n)
    lines = ["def _field(t, x):"]
    lines += [f"    x{i + 1} = x[{i}]" for i in range(n)]
    lines += [f"    v{j} = {_py(inputs[j])}" for j in range(m)]
    rows = []
    for i in range(n):
        terms = [] if _is_num(f[i], 0) else [_py(f[i])]
        for j in range(m):
            gij = g[i][j]
            if _is_num(gij, 0):
                continue
            terms.append(f"v{j}" if _is_num(gij, 1) else f"{_py(gij)} * v{j}")
        rows.append(" + ".join(terms) if terms else "0.0")
    lines.append(f"    return _array(({', '.join(rows)},))")
    ns = dict(_SCALAR_NS, _array=lambda v: np.array(v, dtype=float))
    exec(compile("\n".join(lines) + "\n", "<adpt-field>", "exec"), ns)
    return ns["_field"]
