import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adpt.adpcore import (AdpProblem, NonConvergenceError, PersistentExcitationError,
                          PolicyCoefficients, RankDeficiencyWarning, SegmentBatch, SegmentData,
                          adp_iterate, assemble, merge_stride, merge_stride_batch,
                          solve_least_squares, _stop)
from helpers import random_segments, row_residual


def test_lstsq_identity():
    b = np.array([1.0, -2.0, 3.0])
    z, rank, res = solve_least_squares(np.eye(3), b)
    np.testing.assert_allclose(z, b)
    assert rank == 3 and res == pytest.approx(0, abs=1e-14)


def test_lstsq_scalar_mean():
    z, rank, res = solve_least_squares(np.array([[1.0], [1.0]]), np.array([1.0, 3.0]))
    assert z[0] == pytest.approx(2.0) and rank == 1
    assert res ** 2 == pytest.approx(2.0)


def test_lstsq_min_norm_on_rank_deficiency():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.warns(RankDeficiencyWarning):
        z, rank, _ = solve_least_squares(A, np.array([2.0, 4.0]))
    assert rank == 1
    np.testing.assert_allclose(z, [1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(K=st.integers(3, 60), N=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_lstsq_matches_numpy(K, N, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(K, N))
    b = rng.normal(size=K)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        z, rank, res = solve_least_squares(A, b)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(z, ref, rtol=1e-8, atol=1e-10)
    assert res == pytest.approx(np.linalg.norm(A @ ref - b), rel=1e-9, abs=1e-12)


def test_vec_ordering_stacks_columns():
    rng = np.random.default_rng(0)
    prob = AdpProblem(2, 2, np.eye(2), d=1)
    segs = random_segments(rng, 2, 2, 1, 3)
    A, _ = assemble(segs, prob)
    a = segs[0].int_alpha  # (m=2, N2=2)
    np.testing.assert_array_equal(A[0, prob.n1:], 2 * np.array([a[0, 0], a[1, 0], a[0, 1], a[1, 1]]))


@pytest.mark.parametrize("seed", range(10))
def test_assembly_matches_row_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m, d = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    F = rng.normal(size=(m, m))
    R = F @ F.T + m * np.eye(m)
    prob = AdpProblem(n, m, R, d)
    segs = random_segments(rng, n, m, d, 6)
    c = rng.normal(size=prob.n1)
    W = rng.normal(size=(m, prob.n2))
    z = np.concatenate([c, W.reshape(-1, order="F")])
    Wp = rng.normal(size=(m, prob.n2))
    for prev in (None, PolicyCoefficients(rng.normal(size=prob.n1), Wp, 0)):
        A, b = assemble(segs, prob, prev)
        want = [row_residual(s, c, W, R, None if prev is None else Wp) for s in segs]
        np.testing.assert_allclose(A @ z - b, want, rtol=1e-12, atol=1e-12)


def test_factored_gamma_equals_dense():
    rng = np.random.default_rng(1)
    K, P, n2, m = 4, 5, 3, 2
    phi = rng.normal(size=(K, P, n2))
    w = rng.uniform(0.1, 1, size=(K, P))
    dense = np.einsum("kp,kpi,kpj->kij", w, phi, phi)
    common = (rng.normal(size=(K, 6)), rng.normal(size=K), rng.normal(size=K),
              rng.normal(size=(K, m, n2)), rng.normal(size=(K, m, n2)))
    fb = SegmentBatch(*common, node_phi=phi, node_w=w)
    db = SegmentBatch(*common, int_gamma=dense)
    W = rng.normal(size=(m, n2))
    R = np.diag([1.0, 2.0])
    np.testing.assert_allclose(fb.gamma(), dense, rtol=1e-12)
    np.testing.assert_allclose(fb.gamma_left(W), db.gamma_left(W), rtol=1e-12)
    np.testing.assert_allclose(fb.gamma_quadratic(W, R), db.gamma_quadratic(W, R), rtol=1e-12)


def test_batch_round_trip():
    segs = random_segments(np.random.default_rng(2), 2, 1, 2, 5)
    back = SegmentBatch.from_segments(segs).to_segments()
    for a, b in zip(segs, back):
        np.testing.assert_array_equal(a.int_gamma, b.int_gamma)
        np.testing.assert_array_equal(a.phi_jump, b.phi_jump)


def test_merge_stride_counts_and_sums():
    segs = random_segments(np.random.default_rng(3), 1, 1, 1, 10)
    merged = merge_stride(segs, 4)
    assert len(merged) == 2
    assert merged[1].int_q == segs[4].int_q + segs[5].int_q + segs[6].int_q + segs[7].int_q
    assert merge_stride(segs, 1) == segs
    assert merge_stride(segs, 11) == []
    with pytest.raises(ValueError):
        merge_stride(segs, 0)


def test_merge_stride_batch_matches_list():
    segs = random_segments(np.random.default_rng(4), 2, 2, 1, 9)
    a = merge_stride_batch(SegmentBatch.from_segments(segs), 3)
    b = SegmentBatch.from_segments(merge_stride(segs, 3))
    for f in ("phi_jump", "int_q", "int_u0Ru0", "int_alpha", "int_beta"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    np.testing.assert_array_equal(a.gamma(), b.gamma())


def test_problem_validation():
    with pytest.raises(ValueError):
        AdpProblem(1, 1, [[-1.0]])
    with pytest.raises(ValueError):
        AdpProblem(2, 2, [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        AdpProblem(1, 1, 1.0, crit=4)
    with pytest.raises(ValueError):
        AdpProblem(1, 1, 1.0, d=0)


def test_stop_criteria():
    c_prev, W_prev = np.array([3.0, 4.0]), np.zeros((1, 1))
    assert _stop(0, 0.1, 0.05, 9.0, c_prev, W_prev)
    assert not _stop(1, 0.1, 0.05, 0.09, c_prev, W_prev)
    assert _stop(1, 0.1, 0.06, 0.08, c_prev, W_prev)
    assert _stop(2, 0.1, 0.49, 9.0, c_prev, W_prev)
    assert not _stop(2, 0.1, 0.51, 0.0, c_prev, W_prev)
    assert _stop(3, 0.1, 0.3, 0.4, c_prev, W_prev)
    assert not _stop(3, 0.1, 0.4, 0.4, c_prev, W_prev)


def _scalar_lqr_segments(K=200, h=0.05, eta_on=True):
    """Exact integrals for x' = -0.5 x + eta with hand-rolled fine quadrature."""
    from adpt.adpcore import SegmentData
    dt = 1e-3
    steps = int(round(h / dt))
    eta = (lambda t: 0.8 * (np.sin(7 * t) + np.sin(1.1 * t) + np.sin(np.sqrt(3) * t)
                            + np.sin(np.sqrt(6) * t))) if eta_on else (lambda t: 0.0 * t)
    x, t = 1.0, 0.0
    segs = []
    for _ in range(K):
        ts = t + dt * np.arange(steps + 1)
        xs = [x]
        for k in range(steps):
            f = lambda tt, xx: -0.5 * xx + eta(tt)
            k1 = f(ts[k], xs[-1]); k2 = f(ts[k] + dt / 2, xs[-1] + dt / 2 * k1)
            k3 = f(ts[k] + dt / 2, xs[-1] + dt / 2 * k2); k4 = f(ts[k] + dt, xs[-1] + dt * k3)
            xs.append(xs[-1] + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        xs = np.array(xs)
        w = np.full(steps + 1, dt); w[0] = w[-1] = dt / 2
        e = eta(ts)
        u0 = -0.5 * xs
        segs.append(SegmentData(np.array([xs[-1] - xs[0], xs[-1] ** 2 - xs[0] ** 2]),
                                float(w @ xs ** 2), float(w @ u0 ** 2), np.array([[w @ (e * xs)]]),
                                np.array([[w @ ((u0 + e) * xs)]]), np.array([[w @ xs ** 2]])))
        x, t = xs[-1], ts[-1]
    return segs


def test_iterate_scalar_lqr():
    res = adp_iterate(_scalar_lqr_segments(), AdpProblem(1, 1, 1.0, d=1))
    assert res.converged
    c, W = res.coefficients.c, res.coefficients.W
    assert W[0, 0] == pytest.approx(-1.0, abs=1e-2)
    assert c[1] == pytest.approx(1.0, abs=1e-2)
    assert c[0] == pytest.approx(0.0, abs=1e-2)
    assert np.isnan(res.history[0].delta)
    assert res.final_delta <= 1e-3


def test_iterate_max_iter_not_error():
    res = adp_iterate(_scalar_lqr_segments(60), AdpProblem(1, 1, 1.0, d=1, max_iter=1))
    assert not res.converged and res.iterations == 1


def test_no_exploration_is_rank_deficient():
    with pytest.raises(PersistentExcitationError, match="persistently exciting"):
        adp_iterate(_scalar_lqr_segments(40, eta_on=False), AdpProblem(1, 1, 1.0, d=1))


def test_coefficient_blow_up():
    # full rank but nearly singular: the first coefficient is ~1e14
    one = np.array([[1.0]])
    segs = [SegmentData(np.array([1e-11, 0.0]), 1e3, 0.0, 0 * one, one, one),
            SegmentData(np.array([0.0, 1.0]), 1e3, 0.0, 0 * one, one, one),
            SegmentData(np.array([0.0, 0.0]), 1e3, 0.0, one, one, one)]
    with pytest.raises(NonConvergenceError, match="diverged"):
        adp_iterate(segs, AdpProblem(1, 1, 1.0, d=1))
