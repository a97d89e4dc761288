import math

import numpy as np
import pytest

from accelflow.audit import audit_flow
from accelflow.flow import (
    FlowConfig,
    FlowState,
    a_lower_bound,
    default_v0,
    integrate,
    lyapunov_continuous,
    rhs,
)
from accelflow.harness import flow_row
from accelflow.problems import QuadraticProblem
from accelflow.stepsize import StationaryPointError

HALF_SQ = QuadraticProblem(1, cond=1.0, rotate=False)


def test_rhs_equilibrium_first_order():
    prob = QuadraticProblem(2, cond=3.0, seed=0)
    cfg = FlowConfig(p=1, theta=0.25)
    state = FlowState(t=0.0, x=prob.center.copy(), v=prob.center.copy(), s=0.0)
    x_dot, v_dot, s_dot = rhs(state, prob, cfg)
    assert np.all(x_dot == 0.0)
    assert np.all(v_dot == 0.0)
    assert s_dot == pytest.approx(math.sqrt(0.25))


def test_rhs_worked_numbers():
    cfg = FlowConfig(p=1, theta=0.25, c=1.0)
    state = FlowState(t=0.0, x=np.array([1.0]), v=np.array([1.0]), s=0.0)
    x_dot, v_dot, s_dot = rhs(state, HALF_SQ, cfg)
    assert x_dot == pytest.approx([-0.25])
    assert v_dot == pytest.approx([-0.25])
    assert s_dot == pytest.approx(0.5)


def test_rhs_stationary_raises_for_higher_order():
    cfg = FlowConfig(p=2, theta=0.25)
    state = FlowState(t=0.0, x=np.array([0.0]), v=np.array([1.0]), s=0.0)
    with pytest.raises(StationaryPointError):
        rhs(state, HALF_SQ, cfg)


def test_default_v0_examples():
    cfg = FlowConfig(p=1, theta=0.25, c=1.0)
    v0 = default_v0(np.array([2.0]), HALF_SQ, cfg)
    assert v0 == pytest.approx([2.5])

    prob = QuadraticProblem(2, cond=4.0, seed=1)
    cfg2 = FlowConfig(p=2, theta=0.25, c=2.0)
    x0 = np.array([1.0, 0.5])
    g = prob.gradient(x0)
    gn = float(np.linalg.norm(g))
    expect = x0 + 0.25**0.25 * gn ** (-0.25) * g  # (c/2) theta^(1/4) ||g||^(-1/4) g
    assert default_v0(x0, prob, cfg2) == pytest.approx(expect)

    # c -> 0 gives v0 -> x0
    tiny = FlowConfig(p=1, theta=0.25, c=1e-12)
    assert default_v0(np.array([2.0]), HALF_SQ, tiny) == pytest.approx([2.0], abs=1e-11)


def test_lyapunov_continuous_examples():
    x_star = np.zeros(2)
    assert lyapunov_continuous(4.0, 0.0, x_star, x_star) == 0.0
    assert lyapunov_continuous(4.0, 1.0, np.array([2.0, 0.0]), x_star) == pytest.approx(6.0)
    with pytest.raises(ValueError, match="minimizer"):
        lyapunov_continuous(4.0, 1.0, x_star, None)


def test_a_lower_bound_values():
    cfg = FlowConfig(p=1, theta=0.25, c=2.0)
    assert a_lower_bound(0.0, cfg, E0=1.0) == pytest.approx(1.0)  # (c/2)^2
    # p=1: the bound is the closed form ((c + sqrt(theta) t)/2)^2, E0-free
    for t in (0.5, 3.0, 10.0):
        assert a_lower_bound(t, cfg, E0=123.4) == pytest.approx(
            ((2.0 + 0.5 * t) / 2.0) ** 2
        )
    # p=2 plug-in, evaluated independently from the formula's pieces
    cfg2 = FlowConfig(p=2, theta=0.5, c=1.0)
    expo = 7.0 / 4.0
    inner = (0.5 ** (2.0 / 7.0) / (3.0 * 1.0)) ** expo
    assert a_lower_bound(1.0, cfg2, E0=1.0) == pytest.approx((0.5 + inner) ** 2)
    with pytest.raises(ValueError, match="E0"):
        a_lower_bound(1.0, cfg2, E0=0.0)


def test_integrate_p1_energy_and_residual():
    cfg = FlowConfig(p=1, theta=0.25, c=1.0, t_end=20.0, sample_stride=0.25)
    res = integrate(HALF_SQ, np.array([2.0]), config=cfg)
    assert res.status == "reached-t-end"
    e0 = res.samples[0].lyapunov
    energies = [s.lyapunov for s in res.samples]
    assert all(b <= a + 1e-9 * (1 + e0) for a, b in zip(energies, energies[1:]))
    assert all(s.algebraic_residual == 0.0 for s in res.samples)
    assert res.samples[-1].lyapunov <= e0
    # a(t) carried by the state matches the p=1 closed form
    for s in res.samples:
        closed = 0.25 * (math.sqrt(0.25) * s.t + 1.0) ** 2
        assert s.a == pytest.approx(closed, rel=1e-12)
        assert s.a == pytest.approx(0.25 * (s.s + 1.0) ** 2, rel=1e-15)


def test_integrate_p2_floor_stop_and_bounds():
    prob = QuadraticProblem(2, cond=10.0, rotate=False)
    cfg = FlowConfig(p=2, theta=0.5, c=1.0, t_end=50.0, sample_stride=0.25)
    res = integrate(prob, np.array([2.0, -1.5]), config=cfg)
    assert res.status == "gradient-floor"
    assert res.meta["t_stop"] < 50.0
    e0 = res.meta["E0"]
    for s in res.samples:
        assert s.algebraic_residual <= 1e-6
        assert s.a >= a_lower_bound(s.t, cfg, e0) * (1.0 - 1e-8)
    rows = [flow_row(s) for s in res.samples]
    assert all(c.passed for c in audit_flow(rows, res.meta))
    # the reported feedback-rate heuristic is present and finite
    assert math.isfinite(res.meta["max_lambda_rate"])


def test_integrate_dissipation_inequality():
    prob = QuadraticProblem(2, cond=5.0, seed=2)
    cfg = FlowConfig(p=1, theta=0.5, c=1.0, t_end=15.0, sample_stride=0.1)
    res = integrate(prob, np.array([1.0, 2.0]), config=cfg)
    e0 = res.samples[0].lyapunov
    dissipated, prev = 0.0, None
    for s in res.samples:
        if prev is not None:
            f = lambda smp: smp.a * cfg.theta * smp.grad_norm_sq  # p=1 exponents
            dissipated += 0.5 * (f(prev) + f(s)) * (s.t - prev.t)
        assert e0 - s.lyapunov >= (1.0 - 1e-3) * dissipated
        prev = s


def test_integrate_rejects_stationary_start():
    with pytest.raises(StationaryPointError):
        integrate(HALF_SQ, np.array([0.0]), config=FlowConfig(p=1))


def test_integrate_rejects_bad_shapes():
    with pytest.raises(ValueError, match="shape"):
        integrate(HALF_SQ, np.array([1.0, 2.0]), config=FlowConfig(p=1))


def test_flow_config_validation():
    with pytest.raises(ValueError, match="theta"):
        FlowConfig(p=1, theta=1.5).validate()
    with pytest.raises(ValueError, match="c must be positive"):
        FlowConfig(p=1, c=0.0).validate()
    with pytest.raises(ValueError, match="t_end"):
        FlowConfig(p=1, t_end=-1.0).validate()
    with pytest.raises(ValueError, match="p must be"):
        FlowConfig(p=5).validate()


def test_explicit_v0_is_respected():
    cfg = FlowConfig(p=1, theta=0.25, c=1.0, t_end=1.0)
    v0 = np.array([3.0])
    res = integrate(HALF_SQ, np.array([2.0]), v0=v0, config=cfg)
    assert res.meta["v0"] == [3.0]
    assert res.samples[0].v == pytest.approx(v0)
