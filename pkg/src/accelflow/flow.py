"""Continuous-time closed-loop damping system and its diagnostics.

The second-order dynamics are integrated in their first-order (x, v) form,
augmented with the running integral s(t) of sqrt(lambda) so the weight
a(t) = (s(t) + c)^2 / 4 is carried exactly by the state instead of being
re-accumulated.  The proximal coefficient is closed-loop: at every state it
solves lambda^p ||grad Phi(x)||^(p-1) = theta.

Integration uses an embedded-pair adaptive explicit method (DOP853) at the
configured tolerances.  For p >= 2 the coefficient blows up as the gradient
vanishes and the term lambda grad Phi(x) makes the system arbitrarily stiff
for explicit stepping, so integration halts at a configurable gradient-norm
floor (default 1e-8; the cost of reaching a floor f scales like f^(-1/2))
and reports the early stop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .problems import Problem, Vector
from .stepsize import StationaryPointError

__all__ = [
    "FlowConfig",
    "FlowState",
    "FlowSample",
    "FlowResult",
    "rhs",
    "default_v0",
    "integrate",
    "lyapunov_continuous",
    "a_lower_bound",
]


@dataclass
class FlowConfig:
    p: int = 1
    theta: float = 0.5
    c: float = 1.0
    t_end: float = 50.0
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    sample_stride: float = 0.25
    grad_floor: float = 1e-8

    def validate(self) -> None:
        if self.p not in (1, 2, 3):
            raise ValueError(f"p must be in {{1,2,3}}, got {self.p}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1) for the continuous system")
        if self.c <= 0.0:
            raise ValueError(
                "c must be positive (c = 0 makes the damping ratio singular at t = 0)"
            )
        if self.t_end <= 0.0 or self.sample_stride <= 0.0:
            raise ValueError("t_end and sample_stride must be positive")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class FlowState:
    t: float
    x: Vector
    v: Vector
    s: float  # integral of sqrt(lambda) up to t


@dataclass
class FlowSample:
    t: float
    x: Vector
    v: Vector
    s: float
    a: float
    a_dot: float
    lam: float
    f_gap: float
    grad_norm_sq: float
    lyapunov: float
    algebraic_residual: float


@dataclass
class FlowResult:
    samples: list[FlowSample]
    status: str  # "reached-t-end" or "gradient-floor"
    meta: dict = field(default_factory=dict)


def _feedback(p: int, theta: float, grad_norm: float) -> float:
    if p == 1:
        return theta
    return theta ** (1.0 / p) * grad_norm ** (-(p - 1.0) / p)


def rhs(state: FlowState, problem: Problem, config: FlowConfig) -> tuple[Vector, Vector, float]:
    """Time derivatives (x_dot, v_dot, s_dot) of the closed-loop system.

    With a = (s+c)^2/4 and a_dot = sqrt(lambda) (s+c)/2 the identity
    a_dot^2 / a = lambda holds exactly, so

        x_dot = -(a_dot/a)(x - v) - lambda grad Phi(x),
        v_dot = -a_dot grad Phi(x),
        s_dot = sqrt(lambda).
    """
    g = problem.gradient(state.x)
    gn = float(np.linalg.norm(g))
    if gn == 0.0 and config.p >= 2:
        raise StationaryPointError("closed-loop coefficient undefined: zero gradient")
    lam = _feedback(config.p, config.theta, gn)
    sc = state.s + config.c
    a = 0.25 * sc * sc
    a_dot = 0.5 * math.sqrt(lam) * sc
    x_dot = -(a_dot / a) * (state.x - state.v) - lam * g
    v_dot = -a_dot * g
    return x_dot, v_dot, math.sqrt(lam)


def default_v0(x0: Vector, problem: Problem, config: FlowConfig) -> Vector:
    """Momentum start consistent with a standing start (x_dot(0) = 0)."""
    g = problem.gradient(np.asarray(x0, dtype=float))
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        raise StationaryPointError("default momentum start needs a nonstationary x0")
    p = config.p
    coeff = 0.5 * config.c * config.theta ** (1.0 / (2 * p)) * gn ** (
        -(p - 1.0) / (2 * p)
    )
    return np.asarray(x0, dtype=float) + coeff * g


def lyapunov_continuous(a: float, f_gap: float, v: Vector, x_star: Optional[Vector]) -> float:
    """Energy a (Phi(x) - Phi*) + ||v - x*||^2 / 2."""
    if x_star is None:
        raise ValueError("Lyapunov energy needs a known minimizer")
    return a * f_gap + 0.5 * float(np.linalg.norm(v - x_star) ** 2)


def a_lower_bound(t: float, config: FlowConfig, E0: float) -> float:
    """Guaranteed growth floor for the weight a(t).

    For p = 1 this equals the closed form ((c + sqrt(theta) t) / 2)^2;
    for p >= 2 it depends on the initial energy E0 > 0.
    """
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    p = config.p
    expo = (3.0 * p + 1.0) / 4.0
    if p == 1:
        inner = math.sqrt(config.theta) / 2.0
    else:
        if E0 <= 0.0:
            raise ValueError("E0 must be positive for p >= 2")
        inner = (
            config.theta ** (2.0 / (3 * p + 1))
            / ((p + 1) * E0 ** ((p - 1.0) / (3 * p + 1)))
        ) ** expo
    return (0.5 * config.c + inner * t**expo) ** 2


def integrate(
    problem: Problem,
    x0: Vector,
    v0: Optional[Vector] = None,
    config: Optional[FlowConfig] = None,
) -> FlowResult:
    """Integrate the closed-loop system to t_end, sampling at the stride.

    Halts early (status "gradient-floor", reported, not an error) when the
    gradient norm falls below the configured floor with p >= 2.  Raises on
    integrator failure (step-size underflow) and on a stationary start.
    """
    config = config or FlowConfig()
    config.validate()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({problem.dim},)")
    g0 = problem.gradient(x0)
    if float(np.linalg.norm(g0)) == 0.0:
        raise StationaryPointError("flow integration requires a nonstationary x0")
    v0 = default_v0(x0, problem, config) if v0 is None else np.asarray(v0, dtype=float)

    d = problem.dim
    p, theta, c = config.p, config.theta, config.c

    def fun(t: float, y: np.ndarray) -> np.ndarray:
        x, v, s = y[:d], y[d : 2 * d], y[2 * d]
        g = problem.gradient(x)
        gn = max(float(np.linalg.norm(g)), 1e-250)
        lam = _feedback(p, theta, gn)
        sc = s + c
        a = 0.25 * sc * sc
        a_dot = 0.5 * math.sqrt(lam) * sc
        out = np.empty(2 * d + 1)
        out[:d] = -(a_dot / a) * (x - v) - lam * g
        out[d : 2 * d] = -a_dot * g
        out[2 * d] = math.sqrt(lam)
        return out

    events = []
    if p >= 2:

        def floor_event(t: float, y: np.ndarray) -> float:
            return float(np.linalg.norm(problem.gradient(y[:d]))) - config.grad_floor

        floor_event.terminal = True
        floor_event.direction = -1.0
        events.append(floor_event)

    y0 = np.concatenate([x0, v0, [0.0]])
    sol = solve_ivp(
        fun,
        (0.0, config.t_end),
        y0,
        method="DOP853",
        rtol=config.rel_tol,
        atol=config.abs_tol,
        dense_output=True,
        events=events or None,
    )
    if sol.status == -1:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    status = "gradient-floor" if sol.status == 1 else "reached-t-end"
    t_stop = float(sol.t[-1])

    times = list(np.arange(0.0, t_stop, config.sample_stride))
    if not times or times[-1] < t_stop:
        times.append(t_stop)

    x_star = problem.known_minimizer
    f_star = problem.known_min_value
    samples: list[FlowSample] = []
    for t in times:
        y = sol.sol(t)
        x, v, s = y[:d], y[d : 2 * d], float(y[2 * d])
        g = problem.gradient(x)
        gn = float(np.linalg.norm(g))
        lam = _feedback(p, theta, max(gn, 1e-250))
        a = 0.25 * (s + c) ** 2
        a_dot = 0.5 * math.sqrt(lam) * (s + c)
        f_gap = problem.value(x) - f_star if f_star is not None else math.nan
        energy = (
            lyapunov_continuous(a, f_gap, v, x_star) if x_star is not None else math.nan
        )
        residual = abs(lam**p * gn ** (p - 1) - theta) if p >= 2 else abs(lam - theta)
        samples.append(
            FlowSample(
                t=float(t),
                x=x.copy(),
                v=v.copy(),
                s=s,
                a=a,
                a_dot=a_dot,
                lam=lam,
                f_gap=f_gap,
                grad_norm_sq=gn * gn,
                lyapunov=energy,
                algebraic_residual=residual,
            )
        )

    lam_seq = np.array([smp.lam for smp in samples])
    t_seq = np.array([smp.t for smp in samples])
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.abs(np.diff(lam_seq)) / np.diff(t_seq)
    meta = {
        "p": p,
        "theta": theta,
        "c": c,
        "t_end": config.t_end,
        "t_stop": t_stop,
        "E0": samples[0].lyapunov,
        "grad_floor": config.grad_floor,
        "n_steps": int(sol.t.size),
        "max_lambda_rate": float(np.max(rates)) if rates.size else 0.0,
        "x0": x0.tolist(),
        "v0": v0.tolist(),
    }
    return FlowResult(samples=samples, status=status, meta=meta)
