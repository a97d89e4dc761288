import math

import numpy as np
import pytest

from accelflow.problems import (
    LogisticProblem,
    LogSumExpProblem,
    PowerNormProblem,
    QuadraticProblem,
    check_derivatives,
    evaluate,
    make_problem,
)

ALL_BUILTINS = [
    QuadraticProblem(4, cond=50.0, seed=0),
    LogSumExpProblem(4, seed=1),
    LogisticProblem(4, samples=20, mu=1e-2, seed=2),
    PowerNormProblem(4, exponent=4),
]


def test_evaluate_identity_quadratic():
    prob = QuadraticProblem(1, cond=1.0, rotate=False)
    ev = evaluate(prob, np.array([2.0]), order=2)
    assert ev.value == 2.0
    assert ev.gradient == pytest.approx([2.0])
    assert ev.hessian == pytest.approx(np.array([[1.0]]))


def test_evaluate_symmetric_logsumexp():
    prob = LogSumExpProblem(1, matrix=np.array([[1.0], [-1.0]]), offsets=np.zeros(2))
    ev = evaluate(prob, np.array([0.0]), order=1)
    assert ev.value == pytest.approx(math.log(2.0), abs=1e-15)
    assert abs(ev.gradient[0]) <= 1e-15
    assert prob.known_min_value == pytest.approx(math.log(2.0))


def test_evaluate_diagonal_quadratic_gradient():
    prob = QuadraticProblem(2, cond=4.0, rotate=False)
    ev = evaluate(prob, np.array([1.0, 1.0]), order=1)
    assert ev.gradient == pytest.approx([1.0, 4.0])


def test_evaluate_validates_dimension_and_order():
    prob = QuadraticProblem(3, cond=2.0)
    with pytest.raises(ValueError, match="shape"):
        evaluate(prob, np.ones(2))
    with pytest.raises(ValueError, match="order"):
        evaluate(prob, np.ones(3), order=4)

    class GradOnly(QuadraticProblem):
        max_order = 1

    with pytest.raises(ValueError, match="order"):
        evaluate(GradOnly(3, cond=2.0), np.ones(3), order=2)


def test_third_action_exposed_for_order_three():
    prob = LogSumExpProblem(3, seed=4)
    ev = evaluate(prob, np.ones(3), order=3)
    u, w = np.array([1.0, 0.0, -1.0]), np.array([0.5, 2.0, 0.0])
    out = ev.third_action(u, w)
    assert out.shape == (3,)
    # symmetry of the bilinear action
    assert out == pytest.approx(ev.third_action(w, u))


@pytest.mark.parametrize("prob", ALL_BUILTINS, ids=lambda p: p.name)
def test_finite_difference_consistency(prob):
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.standard_normal(prob.dim)
        report = check_derivatives(prob, x, step=1e-5)
        assert report[1] <= 1e-5
        assert report[2] <= 1e-4


def test_logsumexp_hessian_fd_dim5():
    prob = LogSumExpProblem(5, seed=9)
    rng = np.random.default_rng(3)
    report = check_derivatives(prob, rng.standard_normal(5), step=1e-5)
    assert report[2] <= 1e-5


def test_check_derivatives_flags_wrong_gradient():
    class Broken(QuadraticProblem):
        def gradient(self, x):
            return 1.5 * super().gradient(x)

    report = check_derivatives(Broken(3, cond=2.0), np.ones(3), step=1e-5)
    assert report[1] >= 1e-2


def test_check_derivatives_rejects_bad_step():
    with pytest.raises(ValueError, match="step"):
        check_derivatives(ALL_BUILTINS[0], np.ones(4), step=0.0)


@pytest.mark.parametrize("prob", ALL_BUILTINS, ids=lambda p: p.name)
def test_convexity_spot_check(prob):
    rng = np.random.default_rng(23)
    for _ in range(100):
        x = rng.standard_normal(prob.dim)
        y = rng.standard_normal(prob.dim)
        fx, fy = prob.value(x), prob.value(y)
        for t in (0.25, 0.5, 0.75):
            mid = prob.value(t * x + (1 - t) * y)
            bound = t * fx + (1 - t) * fy
            assert mid <= bound + 1e-12 * (1.0 + abs(bound))


@pytest.mark.parametrize("prob", ALL_BUILTINS, ids=lambda p: p.name)
def test_known_minimizer_is_stationary(prob):
    assert prob.known_minimizer is not None
    g = prob.gradient(prob.known_minimizer)
    assert np.linalg.norm(g) <= 1e-10
    assert prob.value(prob.known_minimizer) == pytest.approx(
        prob.known_min_value, abs=1e-14
    )


@pytest.mark.parametrize("prob", ALL_BUILTINS, ids=lambda p: p.name)
def test_hessian_symmetric(prob):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(prob.dim)
    h = prob.hessian(x)
    scale = 1.0 + float(np.max(np.abs(h)))
    assert float(np.max(np.abs(h - h.T))) <= 1e-12 * scale


@pytest.mark.parametrize("prob", ALL_BUILTINS, ids=lambda p: p.name)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_documented_lipschitz_not_violated(prob, p):
    """Sampled difference quotients must stay below the documented constant."""
    if isinstance(prob, PowerNormProblem) and p > prob.q - 1:
        with pytest.raises(ValueError):
            prob.lipschitz(p)
        return
    ell = prob.lipschitz(p)
    rng = np.random.default_rng(p)
    worst = 0.0
    for _ in range(40):
        x = rng.standard_normal(prob.dim)
        y = x + 0.1 * rng.standard_normal(prob.dim)
        dist = float(np.linalg.norm(y - x))
        if p == 1:
            diff = float(np.linalg.norm(prob.gradient(y) - prob.gradient(x)))
        elif p == 2:
            diff = float(np.linalg.norm(prob.hessian(y) - prob.hessian(x), 2))
        else:
            u = rng.standard_normal(prob.dim)
            w = rng.standard_normal(prob.dim)
            u /= np.linalg.norm(u)
            w /= np.linalg.norm(w)
            diff = float(
                np.linalg.norm(prob.third_action(y, u, w) - prob.third_action(x, u, w))
            )
        worst = max(worst, diff / dist)
    assert worst <= ell * (1.0 + 1e-9)


def test_powernorm_matched_order_constant_is_factorial():
    for p in (1, 2, 3):
        prob = PowerNormProblem(3, exponent=p + 1)
        assert prob.lipschitz(p) == math.factorial(p)


def test_make_problem_registry():
    prob = make_problem("logsumexp", seed=3, dim=6)
    assert prob.dim == 6
    with pytest.raises(ValueError, match="unknown problem"):
        make_problem("rosenbrock")


def test_problem_seeding_is_deterministic():
    a = make_problem("logistic", seed=12, dim=5)
    b = make_problem("logistic", seed=12, dim=5)
    assert np.array_equal(a.A, b.A)
    assert np.array_equal(a.known_minimizer, b.known_minimizer)
