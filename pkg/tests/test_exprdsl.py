import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from adpt import exprdsl as ex


def val(text, x=(), t=0.0, n=None):
    return ex.evaluate(ex.parse(text, n), x, t)


def test_cost_expression():
    assert val("5*x1^2+3*x2^2", (1, 2)) == 17


def test_rational_expression():
    assert val("(-3*x1-2*x1^3-2*x2)/5", (1, 1)) == pytest.approx(-1.4)


@pytest.mark.parametrize("text,expected", [
    ("2^3^2", 512.0),           # right associative
    ("-2^2", -4.0),             # unary minus binds looser than ^
    ("2*-3", -6.0),
    ("1-2-3", -4.0),
    ("8/4/2", 1.0),
    ("pi", math.pi),
    ("sqrt(16)+exp(0)+log(1)", 5.0),
    ("abs(-2.5)", 2.5),
    ("1e-3*1000", 1.0),
    ("cos(0)+sin(0)+tan(0)", 1.0),
])
def test_precedence_and_functions(text, expected):
    assert val(text) == pytest.approx(expected)


def test_time_variable():
    assert val("sin(7*t)", t=0.5) == pytest.approx(math.sin(3.5))


@pytest.mark.parametrize("text", ["2x1", "x1 x2", "(x1", "x1)", "", "3+", "sin x1", "x1^^2"])
def test_syntax_errors(text):
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse(text)


def test_error_location():
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse("x1 + * x2")
    assert info.value.col == 6
    assert "line 1" in str(info.value) or info.value.line == 1


def test_unknown_identifier():
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("y1 + 1")
    with pytest.raises(ex.UnknownIdentifierError):
        ex.parse("foo(x1)")


def test_arity():
    with pytest.raises(ex.ArityError):
        ex.parse("sin(x1, x2)")


def test_variable_out_of_range():
    with pytest.raises(ex.ExprError):
        ex.parse("x3", n=2)
    with pytest.raises(ex.ExprError):
        ex.parse("x0")


@pytest.mark.parametrize("text,x", [("1/x1", (0,)), ("log(x1)", (0,)), ("sqrt(x1)", (-1,)),
                                    ("x1^(-1)", (0,)), ("x1^0.5", (-2,))])
def test_domain_errors(text, x):
    with pytest.raises(ex.DomainError):
        val(text, x)


def test_round_trip_text():
    for text in ["5*x1^2+3*x2^2", "(-3*x1-2*x1^3-2*x2)/5", "-(x1+x2)^2", "x1^(x2^2)",
                 "0.8*(sin(7*t)+sin(1.1*t))", "x1-(x2-x3)", "x1/(x2*x3)", "2*-x1"]:
        e = ex.parse(text)
        again = ex.parse(ex.to_text(e))
        assert again == e, text


def test_vector_and_matrix():
    f = ex.parse_vector("x2; -x1", 2, 2)
    assert [ex.to_text(e) for e in f] == ["x2", "-x1"]
    g = ex.parse_matrix("0, 1; 1, x1", 2, 2, 2)
    assert ex.evaluate(g[1][1], (3, 0)) == 3
    with pytest.raises(ex.ExprError):
        ex.parse_vector("x1; x2", 3)
    with pytest.raises(ex.ExprError):
        ex.parse_matrix("1, 2; 3", None, None)
    np.testing.assert_array_equal(ex.parse_numeric_matrix("1, 0; 0, 2"), np.diag([1.0, 2.0]))


def test_derivative_examples():
    assert ex.to_text(ex.differentiate(ex.parse("x1^3"), 1)) == "3*x1^2"
    d = ex.differentiate(ex.parse("sin(2*x1)"), "x1")
    assert ex.evaluate(d, (0.0,)) == pytest.approx(2.0)
    assert ex.evaluate(ex.differentiate(ex.parse("t^2"), "t"), (), 3.0) == pytest.approx(6.0)


def test_derivative_of_abs_rejected():
    with pytest.raises(ex.UnsupportedDerivativeError):
        ex.differentiate(ex.parse("abs(x1)"), 1)


_sym = sp.symbols("x1 x2")
_pieces = ["x1", "x2", "2.5", "sin(x1)", "cos(x2)", "exp(x1/3)", "x1^2", "x2^3", "tan(x1/2)",
           "sqrt(x1^2+1)", "log(x2^2+2)"]


@settings(max_examples=60, deadline=None)
@given(a=st.sampled_from(_pieces), b=st.sampled_from(_pieces), op=st.sampled_from("+-*/^"),
       x=st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)))
def test_derivative_against_sympy(a, b, op, x):
    if op == "^":
        text = f"({a})^2*({b})"
    elif op == "/":
        text = f"({a})/(({b})^2+1)"
    else:
        text = f"({a}){op}({b})"
    e = ex.parse(text, 2)
    ref = sp.sympify(text.replace("^", "**"), locals=dict(zip(("x1", "x2"), _sym)))
    for i, s in enumerate(_sym):
        got = ex.evaluate(ex.differentiate(e, i + 1), x)
        want = float(sp.diff(ref, s).subs(dict(zip(_sym, x))))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_compiled_matches_interpreter():
    exprs = ex.parse_vector("x2*sin(t); -x1^3 + exp(x2/4); 1", None, 2)
    scalar = ex.compile_rows(exprs, 2)
    batch = ex.batch_function(exprs, 2)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 2))
    T = rng.uniform(0, 3, size=6)
    out = batch(T, X)
    assert out.shape == (6, 3)
    for k in range(6):
        ref = [ex.evaluate(e, X[k], T[k]) for e in exprs]
        np.testing.assert_allclose(scalar(T[k], X[k]), ref, rtol=1e-14)
        np.testing.assert_allclose(out[k], ref, rtol=1e-14)


def test_control_affine_field():
    f = ex.parse_vector("x2; -x1", 2, 2)
    g = ex.parse_matrix("0; 1", 2, 1, 2)
    fn = ex.compile_control_affine(f, g, [ex.parse("-x2 + sin(t)")], 2)
    np.testing.assert_allclose(fn(1.0, np.array([0.5, 2.0])), [2.0, -0.5 - 2.0 + math.sin(1.0)])


def test_linear_form():
    e = ex.linear_form(np.array([1.5, 0.0, -2.0]))
    assert ex.evaluate(e, (1, 7, 3)) == pytest.approx(-4.5)
    assert ex.evaluate(ex.linear_form(np.zeros(2)), (1, 1)) == 0


def test_dependencies():
    assert ex.depends_on_variables(ex.parse("sin(3*t)"))
    assert not ex.depends_on_variables(ex.parse("2*pi^2"))
    assert ex.max_var_index(ex.parse("x4*x2")) == 4
