import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adpt.benchmarks import (SatelliteFixture, format_table, quaternion_multiply, run_benchmark,
                             satellite_error_dynamics, satellite_problem)
from adpt.modelbased import linearize

quat = st.lists(st.floats(-2, 2), min_size=4, max_size=4).map(np.array)


def test_quaternion_table():
    one, i, j, k = np.eye(4)
    np.testing.assert_array_equal(quaternion_multiply(one, j), j)
    np.testing.assert_array_equal(quaternion_multiply(one, i), i)
    np.testing.assert_array_equal(quaternion_multiply(i, j), k)
    np.testing.assert_array_equal(quaternion_multiply(j, i), -k)
    np.testing.assert_array_equal(quaternion_multiply(i, i), -one)
    np.testing.assert_array_equal(quaternion_multiply(one, [1.0, 0, 0]), i)


@settings(max_examples=50, deadline=None)
@given(a=quat, b=quat, c=quat)
def test_quaternion_properties(a, b, c):
    np.testing.assert_allclose(quaternion_multiply(quaternion_multiply(a, b), c),
                               quaternion_multiply(a, quaternion_multiply(b, c)), atol=1e-12)
    assert np.linalg.norm(quaternion_multiply(a, b)) == pytest.approx(
        np.linalg.norm(a) * np.linalg.norm(b), rel=1e-12, abs=1e-12)


def test_error_dynamics_examples():
    fx = SatelliteFixture()
    assert not satellite_error_dynamics(np.zeros(4), np.zeros(3), np.zeros(3), fx).any()
    out = satellite_error_dynamics(np.zeros(4), [1.0, 0, 0], np.zeros(3), fx)
    np.testing.assert_allclose(out, [0, 0.5, 0, 0, 0, 0, 0], atol=1e-15)
    q = np.array([2.0, 0, 0, 0])
    out = satellite_error_dynamics(q - fx.q_e, np.zeros(3), np.zeros(3), fx)
    np.testing.assert_allclose(out[:4], -3 * q)


def test_expression_model_matches_numpy():
    fx = SatelliteFixture()
    p = satellite_problem(fx)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, u = rng.normal(size=7), rng.normal(size=3)
        ref = satellite_error_dynamics(x[:4], x[4:], u, fx)
        np.testing.assert_allclose(p.f_fn(x) + p.g_fn(x) @ u, ref, rtol=1e-13, atol=1e-13)
    assert not p.f_fn(np.zeros(7)).any()


def test_fixture_values():
    fx = SatelliteFixture()
    x0 = fx.x0
    assert x0[0] == pytest.approx(np.cos(0.999995 * np.pi) - 1)
    assert x0[1] == pytest.approx(np.sin(0.999995 * np.pi))
    np.testing.assert_array_equal(fx.Q, 2 * np.eye(7))
    assert np.linalg.norm(fx.q_e) == 1
    p = satellite_problem(fx)
    assert p.q_fn(np.ones(7)) == pytest.approx(14.0)
    A, B = linearize(p.f, p.g, 7)
    np.testing.assert_allclose(B[4:], np.diag(1 / np.array(fx.inertia)))
    assert A[0, 0] == pytest.approx(-2.0)


def test_scalar_benchmark_and_table():
    rows = [run_benchmark("mb", 1, problem="scalar"), run_benchmark("mf", 1, problem="scalar")]
    for r in rows:
        assert r.J == pytest.approx(1.0, rel=0.02)
    table = format_table(rows).splitlines()
    assert table[0].split() == ["mode", "d", "J(x0)", "wall-seconds", "iterations"]
    assert table[1].split()[:2] == ["mb", "1"]


def test_benchmark_argument_checks():
    with pytest.raises(ValueError):
        run_benchmark("xx", 1)
    with pytest.raises(ValueError):
        run_benchmark("mb", 4)
    with pytest.raises(ValueError):
        run_benchmark("mb", 1, problem="pendulum")
