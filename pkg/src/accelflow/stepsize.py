"""Feedback stepsize law, coupling recurrences, and the large-step search.

The proximal coefficient is tied to the current gradient norm through the
algebraic relation lambda^p ||grad||^(p-1) = theta.  In discrete time the
relation becomes the large-step window test on m = lambda ||x - v~||^(p-1),
and the coefficient is located by a scale-free bisection on log(lambda).
For p = 1 the displacement exponent is zero, the window test degenerates to
lambda itself, and no search is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

from .taylor import SubproblemSolution

Vector = np.ndarray

__all__ = [
    "FeedbackParams",
    "AccumulatorState",
    "BisectionOutcome",
    "StationaryPointError",
    "BracketError",
    "tensor_window",
    "exact_window",
    "lambda_feedback",
    "a_next",
    "alpha_next",
    "large_step_check",
    "bisect_lambda",
]


class StationaryPointError(RuntimeError):
    """Gradient vanished where the feedback law needs it positive."""


class BracketError(RuntimeError):
    """No bracketing interval for the large-step window was found."""


@dataclass(frozen=True)
class FeedbackParams:
    """Order, feedback level, and the acceptance window for the search."""

    p: int
    theta: float
    theta_low: float
    theta_high: float  # may be math.inf for the one-sided framework test

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.theta <= 0.0 or self.theta_low <= 0.0:
            raise ValueError("theta and theta_low must be positive")
        if not self.theta_low <= self.theta <= self.theta_high:
            raise ValueError("require theta_low <= theta <= theta_high")


def tensor_window(p: int, ell: float, sigma_l: float, sigma_u: float) -> FeedbackParams:
    """Window for the proximal (sigma-hat inexact) tensor step."""
    fac = math.factorial(p) / (2.0 * ell)
    return FeedbackParams(p=p, theta=sigma_l * fac, theta_low=sigma_l * fac, theta_high=sigma_u * fac)


def exact_window(p: int, ell: float) -> FeedbackParams:
    """Window for the bare (unregularized) tensor step, p >= 2."""
    if p < 2:
        raise ValueError("the exact-subproblem window requires p >= 2")
    low = math.factorial(p - 1) / (2.0 * ell)
    high = math.factorial(p) / (ell * (p + 1))
    return FeedbackParams(p=p, theta=low, theta_low=low, theta_high=high)


def lambda_feedback(params: FeedbackParams, grad_norm: float) -> float:
    """Solve lambda^p grad_norm^(p-1) = theta for lambda."""
    if params.p == 1:
        return params.theta
    if grad_norm <= 0.0:
        raise StationaryPointError(
            "feedback law undefined at a stationary point for p >= 2"
        )
    p = params.p
    return params.theta ** (1.0 / p) * grad_norm ** (-(p - 1.0) / p)


def a_next(A: float, lam: float) -> float:
    """Positive root of a^2 = lam (A + a)."""
    if A < 0.0 or lam <= 0.0:
        raise ValueError("require A >= 0 and lam > 0")
    return 0.5 * (lam + math.sqrt(lam * lam + 4.0 * lam * A))


def alpha_next(gamma: float, lam: float) -> float:
    """Root in (0, 1) of alpha^2 = lam (1 - alpha) gamma.

    Evaluated in the cancellation-free conjugate form 2 lg / (lg + sqrt(
    lg^2 + 4 lg)), which stays accurate for large lam * gamma.
    """
    if gamma <= 0.0 or lam <= 0.0:
        raise ValueError("require gamma > 0 and lam > 0")
    lg = lam * gamma
    return 2.0 * lg / (lg + math.sqrt(lg * lg + 4.0 * lg))


def large_step_check(
    lam: float, displacement_norm: float, params: FeedbackParams
) -> Literal["below", "inside", "above"]:
    """Classify m = lam ||x - v~||^(p-1) against the closed window.

    For p = 1 the displacement power is 0 by convention (also at zero
    displacement), so the test reduces to lam against the window.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if displacement_norm < 0.0:
        raise ValueError("displacement_norm must be nonnegative")
    m = large_step_value(lam, displacement_norm, params.p)
    if m < params.theta_low:
        return "below"
    if m > params.theta_high:
        return "above"
    return "inside"


def large_step_value(lam: float, displacement_norm: float, p: int) -> float:
    if p == 1:
        return lam
    return lam * displacement_norm ** (p - 1)


@dataclass
class AccumulatorState:
    """Outer-loop weight state: forward sum A or inverse weight gamma."""

    variant: Literal["caf1", "caf2"]
    A: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.variant not in ("caf1", "caf2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.A < 0.0:
            raise ValueError("A must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def value(self) -> float:
        return self.A if self.variant == "caf1" else self.gamma

    def coupling(self, lam: float) -> float:
        """The increment a (caf1) or mixing weight alpha (caf2) for lam."""
        if self.variant == "caf1":
            return a_next(self.A, lam)
        return alpha_next(self.gamma, lam)

    def anchor(self, x: Vector, v: Vector, coupling: float) -> Vector:
        """The extrapolated center v~ between the iterate and the momentum."""
        if self.variant == "caf1":
            t = coupling / (self.A + coupling)
        else:
            t = coupling
        return (1.0 - t) * x + t * v

    def advanced(self, coupling: float) -> "AccumulatorState":
        if self.variant == "caf1":
            return AccumulatorState("caf1", A=self.A + coupling, gamma=self.gamma)
        return AccumulatorState("caf2", A=self.A, gamma=(1.0 - coupling) * self.gamma)


@dataclass
class BisectionOutcome:
    lam: float
    coupling: float
    tilde_v: Vector
    solution: SubproblemSolution
    m: float
    probes: int


def bisect_lambda(
    acc: AccumulatorState,
    x: Vector,
    v: Vector,
    solve: Callable[[Vector, float], SubproblemSolution],
    params: FeedbackParams,
    grad_norm: float,
    warm_lambda: Optional[float] = None,
    max_doublings: int = 60,
    max_probes: int = 512,
) -> BisectionOutcome:
    """Find lam whose trial step lands m(lam) inside the window.

    ``solve(tilde_v, lam)`` produces the tensor-step solution at the
    extrapolated center; m(lam) = lam ||u - v~||^(p-1) is assumed monotone
    in lam (guarded: BracketError when no bracket emerges).  The bracket is
    grown by factor-2 expansion from a warm start, then shrunk by bisection
    on log(lam); window endpoints count as acceptance.
    """
    probes = 0

    def probe(lam: float):
        nonlocal probes
        probes += 1
        if probes > max_probes:
            raise BracketError(f"lambda search exceeded {max_probes} probes")
        coupling = acc.coupling(lam)
        tv = acc.anchor(x, v, coupling)
        sol = solve(tv, lam)
        m = large_step_value(lam, sol.r, params.p)
        return coupling, tv, sol, m

    def outcome(lam, trial):
        coupling, tv, sol, m = trial
        return BisectionOutcome(lam, coupling, tv, sol, m, probes)

    if params.p == 1:
        lam = params.theta_low
        return outcome(lam, probe(lam))

    if grad_norm <= 0.0:
        raise StationaryPointError("lambda search requires a nonstationary iterate")

    lam = warm_lambda if warm_lambda is not None else lambda_feedback(params, grad_norm)
    trial = probe(lam)
    cls = _classify(trial[3], params)
    if cls == "inside":
        return outcome(lam, trial)

    # grow a bracket [lam_lo, lam_hi] with m below at lam_lo and above at lam_hi
    if cls == "below":
        lam_lo, lam_hi, hi_trial = lam, lam, None
        for _ in range(max_doublings):
            lam_hi *= 2.0
            trial = probe(lam_hi)
            cls = _classify(trial[3], params)
            if cls == "inside":
                return outcome(lam_hi, trial)
            if cls == "above":
                hi_trial = trial
                break
            lam_lo = lam_hi
        if hi_trial is None:
            raise BracketError(
                f"no upper bracket after {max_doublings} doublings; "
                "m(lambda) may be non-monotone or the problem degenerate"
            )
    else:
        lam_hi, lam_lo, lo_trial = lam, lam, None
        for _ in range(max_doublings):
            lam_lo *= 0.5
            trial = probe(lam_lo)
            cls = _classify(trial[3], params)
            if cls == "inside":
                return outcome(lam_lo, trial)
            if cls == "below":
                lo_trial = trial
                break
            lam_hi = lam_lo
        if lo_trial is None:
            raise BracketError(
                f"no lower bracket after {max_doublings} halvings; "
                "m(lambda) may be non-monotone or the problem degenerate"
            )

    while True:
        lam = math.sqrt(lam_lo * lam_hi)
        if not lam_lo < lam < lam_hi:
            raise BracketError(
                "lambda bracket collapsed without entering the window"
            )
        trial = probe(lam)
        cls = _classify(trial[3], params)
        if cls == "inside":
            return outcome(lam, trial)
        if cls == "below":
            lam_lo = lam
        else:
            lam_hi = lam


def _classify(m: float, params: FeedbackParams) -> str:
    if m < params.theta_low:
        return "below"
    if m > params.theta_high:
        return "above"
    return "inside"
