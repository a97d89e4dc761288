import math

import numpy as np
import pytest
from oracles import lambda_scan

from accelflow.problems import QuadraticProblem
from accelflow.stepsize import (
    AccumulatorState,
    BracketError,
    FeedbackParams,
    StationaryPointError,
    a_next,
    alpha_next,
    bisect_lambda,
    exact_window,
    lambda_feedback,
    large_step_check,
    tensor_window,
)
from accelflow.taylor import SubproblemSolution, build_model, solve_regularized


def params(p, low, high, theta=None):
    return FeedbackParams(p=p, theta=theta if theta is not None else low, theta_low=low, theta_high=high)


def test_lambda_feedback_examples():
    assert lambda_feedback(params(1, 0.3, math.inf), grad_norm=17.0) == 0.3
    assert lambda_feedback(params(2, 0.25, 1.0), grad_norm=4.0) == pytest.approx(0.25)
    assert lambda_feedback(params(3, 0.125, 1.0), grad_norm=1.0) == pytest.approx(0.5)


def test_lambda_feedback_identity_property():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = int(rng.integers(1, 4))
        theta = float(rng.uniform(0.01, 2.0))
        gn = float(10.0 ** rng.uniform(-8, 8))
        lam = lambda_feedback(params(p, theta, math.inf, theta=theta), gn)
        assert lam**p * gn ** (p - 1) == pytest.approx(theta, rel=1e-13)


def test_lambda_feedback_stationary_raises():
    with pytest.raises(StationaryPointError):
        lambda_feedback(params(2, 0.25, 1.0), grad_norm=0.0)


def test_a_next_examples_and_residual():
    assert a_next(0.0, 1.0) == pytest.approx(1.0)
    assert a_next(2.0, 1.0) == pytest.approx(2.0)
    assert a_next(1.0, 2.0) == pytest.approx(1.0 + math.sqrt(3.0))
    rng = np.random.default_rng(1)
    prev_a, prev_l = None, None
    for _ in range(300):
        A = float(10.0 ** rng.uniform(-6, 6))
        lam = float(10.0 ** rng.uniform(-6, 6))
        a = a_next(A, lam)
        assert abs(a * a - lam * (A + a)) <= 1e-12 * (1.0 + a * a) * (1.0 + lam * (A + a))
        assert a_next(A * 2, lam) >= a  # increasing in A
        assert a_next(A, lam * 2) >= a  # increasing in lam


def test_alpha_next_examples_and_range():
    assert alpha_next(1.0, 1.0) == pytest.approx((math.sqrt(5.0) - 1.0) / 2.0)
    assert alpha_next(1.0, 2.0) == pytest.approx(math.sqrt(3.0) - 1.0)
    assert alpha_next(1.0, 1e-12) <= 2e-6
    rng = np.random.default_rng(2)
    for _ in range(300):
        gamma = float(rng.uniform(1e-8, 1.0))
        lam = float(10.0 ** rng.uniform(-8, 8))
        alpha = alpha_next(gamma, lam)
        assert 0.0 < alpha < 1.0
        assert abs(alpha**2 - lam * (1 - alpha) * gamma) <= 1e-12 * (
            1.0 + lam * gamma
        )


def test_large_step_check_examples():
    w = params(2, 0.4, 0.6)
    assert large_step_check(0.5, 1.0, w) == "inside"
    assert large_step_check(0.5, 0.1, w) == "below"
    assert large_step_check(0.5, 2.0, w) == "above"
    # closed interval: endpoints are inside
    assert large_step_check(0.4, 1.0, w) == "inside"
    assert large_step_check(0.6, 1.0, w) == "inside"
    # p=1: displacement power is 0 by convention, also at zero displacement
    w1 = params(1, 0.3, 0.5)
    assert large_step_check(0.3, 0.0, w1) == "inside"
    assert large_step_check(0.2, 123.0, w1) == "below"


def test_window_constructors():
    w = tensor_window(2, ell=4.0, sigma_l=0.5, sigma_u=0.9)
    assert w.theta_low == pytest.approx(0.5 * 2 / 8)
    assert w.theta_high == pytest.approx(0.9 * 2 / 8)
    we = exact_window(3, ell=2.0)
    assert we.theta_low == pytest.approx(math.factorial(2) / 4.0)
    assert we.theta_high == pytest.approx(math.factorial(3) / (2.0 * 4))
    with pytest.raises(ValueError):
        exact_window(1, ell=2.0)


def test_accumulator_anchor():
    acc = AccumulatorState("caf1", A=0.0)
    x, v = np.array([1.0, 2.0]), np.array([-3.0, 5.0])
    coup = acc.coupling(0.7)
    assert np.array_equal(acc.anchor(x, v, coup), v)  # zero weight sum: anchor at v

    acc2 = AccumulatorState("caf2", gamma=1.0)
    coup2 = acc2.coupling(1.0)
    assert acc2.anchor(x, x, coup2) == pytest.approx(x)
    tv = acc2.anchor(x, v, coup2)
    assert tv == pytest.approx((1 - coup2) * x + coup2 * v)


def _tensor_solve(problem, p, ell, sigma_hat=0.05):
    def solve(tilde_v, lam):
        return solve_regularized(build_model(problem, tilde_v, p, ell), lam, sigma_hat)

    return solve


def test_bisect_p1_no_search():
    prob = QuadraticProblem(2, cond=10.0, seed=0)
    w = tensor_window(1, ell=prob.lipschitz(1), sigma_l=0.5, sigma_u=0.9)
    out = bisect_lambda(
        AccumulatorState("caf1"),
        np.ones(2),
        np.ones(2),
        _tensor_solve(prob, 1, prob.lipschitz(1)),
        w,
        grad_norm=1.0,
    )
    assert out.lam == w.theta_low
    assert out.probes == 1


def test_bisect_trivially_wide_window_single_probe():
    prob = QuadraticProblem(2, cond=10.0, seed=0)
    wide = params(2, 1e-12, 1e12, theta=0.5)
    out = bisect_lambda(
        AccumulatorState("caf1"),
        np.ones(2),
        np.ones(2),
        _tensor_solve(prob, 2, 1.0),
        wide,
        grad_norm=float(np.linalg.norm(prob.gradient(np.ones(2)))),
    )
    assert out.probes == 1
    assert wide.theta_low <= out.m <= wide.theta_high


def test_bisect_matches_brute_force_scan():
    prob = QuadraticProblem(2, cond=30.0, seed=2)
    ell = 1.0
    w = tensor_window(2, ell=ell, sigma_l=0.5, sigma_u=0.9)
    solve = _tensor_solve(prob, 2, ell)
    acc = AccumulatorState("caf1", A=0.8)
    x = np.array([1.5, -0.7])
    v = np.array([-2.0, 1.0])

    out = bisect_lambda(acc, x, v, solve, w, grad_norm=float(np.linalg.norm(prob.gradient(x))))
    assert w.theta_low <= out.m <= w.theta_high
    assert out.probes <= 64

    def probe_m(lam):
        coup = acc.coupling(lam)
        tv = acc.anchor(x, v, coup)
        sol = solve(tv, lam)
        return lam * sol.r

    grid, accepted = lambda_scan(probe_m, 1e-6, 1e6, 2000, w.theta_low, w.theta_high)
    assert accepted.any()
    lam_lo = grid[accepted].min()
    lam_hi = grid[accepted].max()
    ratio = grid[1] / grid[0]
    assert lam_lo / ratio <= out.lam <= lam_hi * ratio


def test_bisect_warm_start_inside_reuses_lambda():
    prob = QuadraticProblem(2, cond=5.0, seed=1)
    w = tensor_window(2, ell=1.0, sigma_l=0.1, sigma_u=0.95)
    solve = _tensor_solve(prob, 2, 1.0)
    acc = AccumulatorState("caf1", A=0.3)
    x, v = np.array([2.0, 1.0]), np.array([0.0, -1.0])
    gn = float(np.linalg.norm(prob.gradient(x)))
    first = bisect_lambda(acc, x, v, solve, w, grad_norm=gn)
    again = bisect_lambda(acc, x, v, solve, w, grad_norm=gn, warm_lambda=first.lam)
    assert again.probes == 1
    assert again.lam == first.lam


def test_bisect_bracket_failure():
    w = params(2, 0.5, 0.6)

    def degenerate_solve(tilde_v, lam):
        return SubproblemSolution(
            u=tilde_v, r=0.0, model_gradient_at_u=np.zeros(2), inexactness_ratio=0.0
        )

    with pytest.raises(BracketError, match="bracket"):
        bisect_lambda(
            AccumulatorState("caf1"),
            np.ones(2),
            np.ones(2),
            degenerate_solve,
            w,
            grad_norm=1.0,
            max_doublings=8,
        )


def test_feedback_params_validation():
    with pytest.raises(ValueError):
        FeedbackParams(p=0, theta=1.0, theta_low=1.0, theta_high=2.0)
    with pytest.raises(ValueError):
        FeedbackParams(p=2, theta=0.1, theta_low=0.5, theta_high=1.0)
    with pytest.raises(ValueError):
        AccumulatorState("caf3")
