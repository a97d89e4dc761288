"""Accelerated outer loops: two framework variants and their tensor steps.

Two accumulation schemes drive the same extragradient skeleton: "caf1"
carries the forward weight sum A_k (the large-step A-HPE bookkeeping of
Monteiro & Svaiter 2013, any order p), "caf2" carries the inverse weight
gamma_k with gamma_{k+1} = (1 - alpha_{k+1}) gamma_k.  Every accepted
iteration certifies three conditions: the epsilon-subgradient membership of
w (exact gradients here, eps = 0), the relative-error HPE inequality, and
the large-step window; the drivers enforce all three and record the margins.

Generic drivers take a pluggable step provider that performs the joint
(lambda, triple) search; the tensor provider backed by the Taylor-model
solvers is the one shipped, and instantiates the frameworks into optimal
p-th order methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from . import stepsize
from .problems import Problem, Vector
from .stepsize import (
    AccumulatorState,
    BisectionOutcome,
    FeedbackParams,
    bisect_lambda,
    exact_window,
    large_step_check,
    tensor_window,
)
from .taylor import build_model, solve_regularized, solve_unregularized

__all__ = [
    "Algorithm",
    "SolverConfig",
    "IterateRecord",
    "RunResult",
    "StepConditionError",
    "TensorStepProvider",
    "hpe_check",
    "lyapunov_discrete",
    "run",
    "replay_framework_check",
    "RECURRENCE_SLACK",
]

Algorithm = Literal["caf1", "caf2", "tensor1", "tensor2"]

RECURRENCE_SLACK = 1e-12
HPE_SLACK = 1e-14


class StepConditionError(RuntimeError):
    """An accepted step violated one of its certification conditions."""


@dataclass
class SolverConfig:
    """Scalar parameters for the discrete drivers.

    ``ell`` defaults to the problem's documented constant for the order.
    ``sigma`` (the HPE error level) defaults to sigma_hat + sigma_u for the
    regularized subproblem branch, 0.95 for the exact branch.  ``theta`` is
    the generic frameworks' feedback level; it defaults to the window's low
    edge, which is exactly the level the tensor windows realize.
    """

    p: int = 1
    ell: Optional[float] = None
    sigma_hat: float = 0.05
    sigma_l: float = 0.5
    sigma_u: float = 0.9
    subproblem: Literal["regularized", "exact"] = "regularized"
    sigma: Optional[float] = None
    theta: Optional[float] = None
    tol_grad: float = 1e-10
    max_iter: int = 200
    subproblem_tol: float = 1e-10
    max_doublings: int = 60
    max_probes: int = 512

    def validate(self) -> None:
        if self.p not in (1, 2, 3):
            raise ValueError(f"p must be in {{1,2,3}}, got {self.p}")
        if self.subproblem not in ("regularized", "exact"):
            raise ValueError(f"unknown subproblem mode {self.subproblem!r}")
        if self.subproblem == "regularized":
            if not 0.0 < self.sigma_hat < 1.0:
                raise ValueError("sigma_hat must lie in (0, 1)")
            if not 0.0 < self.sigma_l < self.sigma_u < 1.0:
                raise ValueError("require 0 < sigma_l < sigma_u < 1")
            pm1 = self.p - 1
            if self.sigma_l * (1.0 + self.sigma_hat) ** pm1 >= self.sigma_u * (
                1.0 - self.sigma_hat
            ) ** pm1:
                raise ValueError(
                    "require sigma_l (1+sigma_hat)^(p-1) < sigma_u (1-sigma_hat)^(p-1)"
                )
            if self.sigma_hat + self.sigma_u >= 1.0:
                raise ValueError("require sigma = sigma_hat + sigma_u < 1")
        else:
            if self.p < 2:
                raise ValueError(
                    "the exact-subproblem branch requires p >= 2; for p = 1 its "
                    "window degenerates and the HPE level reaches 1 on quadratics"
                )
        if self.hpe_sigma() is not None and not 0.0 < self.hpe_sigma() < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if self.tol_grad < 0.0 or self.max_iter < 0:
            raise ValueError("tol_grad and max_iter must be nonnegative")

    def hpe_sigma(self) -> float:
        if self.sigma is not None:
            return self.sigma
        if self.subproblem == "regularized":
            return self.sigma_hat + self.sigma_u
        return 0.95

    def resolve_ell(self, problem: Problem) -> float:
        return float(self.ell) if self.ell is not None else problem.lipschitz(self.p)

    def window(self, problem: Problem) -> FeedbackParams:
        ell = self.resolve_ell(problem)
        if self.subproblem == "regularized":
            return tensor_window(self.p, ell, self.sigma_l, self.sigma_u)
        return exact_window(self.p, ell)


def hpe_check(
    lam: float, w: Vector, x: Vector, tilde_v: Vector, eps: float, sigma: float
) -> tuple[float, float, bool]:
    """Relative-error extragradient test for one accepted triple.

    lhs = ||lam w + x - v~||^2 + 2 lam eps, rhs = sigma^2 ||x - v~||^2;
    passes when lhs <= rhs up to an absolute 1e-14 rounding allowance.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    diff = x - tilde_v
    lhs = float(np.linalg.norm(lam * w + diff) ** 2) + 2.0 * lam * eps
    rhs = sigma * sigma * float(np.linalg.norm(diff) ** 2)
    return lhs, rhs, lhs <= rhs + HPE_SLACK


def lyapunov_discrete(
    f_gap: float,
    v: Vector,
    x_star: Optional[Vector],
    accumulator: float,
    variant: Literal["caf1", "caf2"],
) -> float:
    """Energy A_k gap + ||v - x*||^2 / 2 (caf1) or gap / gamma_k + ... (caf2)."""
    if x_star is None:
        raise ValueError("Lyapunov energy needs a known minimizer")
    mixed = 0.5 * float(np.linalg.norm(v - x_star) ** 2)
    if variant == "caf1":
        return accumulator * f_gap + mixed
    return f_gap / accumulator + mixed


@dataclass
class IterateRecord:
    """Full diagnostic trace of one accepted iteration."""

    k: int
    lam: float
    accumulator: float
    coupling: float
    x: Vector
    v: Vector
    tilde_v_prev: Vector
    w: Vector
    eps: float
    f_gap: float
    grad_norm_sq: float
    hpe_lhs: float
    hpe_rhs: float
    large_step_value: float
    lyapunov: float
    disp_norm: float
    probes: int
    inexactness_ratio: float
    recurrence_residual: float


@dataclass
class RunResult:
    records: list[IterateRecord]
    termination: Literal["gradient-tol", "max-iter", "stationary-detected"]
    meta: dict = field(default_factory=dict)


class TensorStepProvider:
    """Joint (lambda, step) search backed by the Taylor-model solvers.

    Produces triples with w the exact gradient at the new iterate and
    eps = 0, warm-starting each lambda search from the last accepted value.
    """

    def __init__(self, problem: Problem, config: SolverConfig):
        self.problem = problem
        self.config = config
        self.ell = config.resolve_ell(problem)
        self.params = config.window(problem)
        self.last_lambda: Optional[float] = None

    def _solve(self, tilde_v: Vector, lam: float):
        model = build_model(self.problem, tilde_v, self.config.p, self.ell)
        if self.config.subproblem == "regularized":
            return solve_regularized(
                model, lam, self.config.sigma_hat, tol=self.config.subproblem_tol
            )
        return solve_unregularized(model, tol=self.config.subproblem_tol)

    def __call__(
        self, acc: AccumulatorState, x: Vector, v: Vector, grad_norm: float
    ) -> BisectionOutcome:
        outcome = bisect_lambda(
            acc,
            x,
            v,
            self._solve,
            self.params,
            grad_norm=grad_norm,
            warm_lambda=self.last_lambda,
            max_doublings=self.config.max_doublings,
            max_probes=self.config.max_probes,
        )
        self.last_lambda = outcome.lam
        return outcome


StepProvider = Callable[[AccumulatorState, Vector, Vector, float], BisectionOutcome]


def run(
    algorithm: Algorithm,
    problem: Problem,
    config: SolverConfig,
    x0: Optional[Vector] = None,
    v0: Optional[Vector] = None,
    provider: Optional[StepProvider] = None,
) -> RunResult:
    """Drive one algorithm to its stopping rule, recording every iteration.

    ``caf1``/``caf2`` run the generic frameworks (one-sided large-step test
    m >= theta) on the supplied provider, defaulting to the tensor provider;
    ``tensor1``/``tensor2`` are their tensor instantiations with the
    two-sided window.
    """
    if algorithm not in ("caf1", "caf2", "tensor1", "tensor2"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    config.validate()

    variant = "caf1" if algorithm in ("caf1", "tensor1") else "caf2"
    if provider is None:
        provider = TensorStepProvider(problem, config)

    window = config.window(problem)
    if algorithm in ("caf1", "caf2"):
        theta = config.theta if config.theta is not None else window.theta_low
        check_params = FeedbackParams(
            p=config.p, theta=theta, theta_low=theta, theta_high=math.inf
        )
    else:
        check_params = window
    sigma = config.hpe_sigma()

    x = np.asarray(
        x0 if x0 is not None else np.ones(problem.dim), dtype=float
    ).copy()
    v = np.asarray(v0 if v0 is not None else x, dtype=float).copy()
    acc = AccumulatorState(variant)
    x_star = problem.known_minimizer
    f_star = problem.known_min_value

    def gap(pt: Vector) -> float:
        return problem.value(pt) - f_star if f_star is not None else math.nan

    def energy(gap_val: float, v_pt: Vector, a: AccumulatorState) -> float:
        if x_star is None:
            return math.nan
        return lyapunov_discrete(gap_val, v_pt, x_star, a.value, variant)

    g = problem.gradient(x)
    gn = float(np.linalg.norm(g))
    meta = {
        "algorithm": algorithm,
        "variant": variant,
        "p": config.p,
        "ell": config.resolve_ell(problem),
        "sigma": sigma,
        "subproblem": config.subproblem,
        "sigma_hat": config.sigma_hat,
        "theta_low": check_params.theta_low,
        "theta_high": check_params.theta_high,
        "theta": check_params.theta,
        "theta_exceeds_unit_interval": check_params.theta > 1.0,
        "subproblem_tol": config.subproblem_tol,
        "x0": x.tolist(),
        "v0": v.tolist(),
        "gap0": gap(x),
        "grad0_norm_sq": gn * gn,
        "E0": energy(gap(x), v, acc),
        "v0_dist_sq": (
            float(np.linalg.norm(v - x_star) ** 2) if x_star is not None else math.nan
        ),
    }

    records: list[IterateRecord] = []
    termination = "max-iter"
    for k in range(1, config.max_iter + 1):
        if gn == 0.0:
            termination = "stationary-detected"
            break
        if gn <= config.tol_grad:
            termination = "gradient-tol"
            break

        out = provider(acc, x, v, gn)
        x_next = out.solution.u
        w = problem.gradient(x_next)
        eps = 0.0

        lhs, rhs, ok = hpe_check(out.lam, w, x_next, out.tilde_v, eps, sigma)
        if not ok:
            raise StepConditionError(
                f"HPE condition failed at k={k}: lhs={lhs:.6e} > rhs={rhs:.6e}"
            )
        if large_step_check(out.lam, out.solution.r, check_params) != "inside":
            raise StepConditionError(
                f"large-step value {out.m:.6e} left the window "
                f"[{check_params.theta_low:.6e}, {check_params.theta_high:.6e}] at k={k}"
            )
        if variant == "caf1":
            resid = abs(out.coupling**2 - out.lam * (acc.A + out.coupling))
            rel = resid / (1.0 + out.coupling**2)
            v_next = v - out.coupling * w
        else:
            resid = abs(
                out.coupling**2 - out.lam * (1.0 - out.coupling) * acc.gamma
            )
            rel = resid / (1.0 + out.coupling**2)
            v_next = v - (out.coupling / ((1.0 - out.coupling) * acc.gamma)) * w
        if rel > RECURRENCE_SLACK:
            raise StepConditionError(
                f"coupling recurrence residual {rel:.3e} exceeds {RECURRENCE_SLACK} at k={k}"
            )

        acc_next = acc.advanced(out.coupling)
        gap_next = gap(x_next)
        gn_next = float(np.linalg.norm(w))
        records.append(
            IterateRecord(
                k=k,
                lam=out.lam,
                accumulator=acc_next.value,
                coupling=out.coupling,
                x=x_next.copy(),
                v=v_next.copy(),
                tilde_v_prev=out.tilde_v.copy(),
                w=w.copy(),
                eps=eps,
                f_gap=gap_next,
                grad_norm_sq=gn_next * gn_next,
                hpe_lhs=lhs,
                hpe_rhs=rhs,
                large_step_value=out.m,
                lyapunov=energy(gap_next, v_next, acc_next),
                disp_norm=out.solution.r,
                probes=out.probes,
                inexactness_ratio=out.solution.inexactness_ratio,
                recurrence_residual=rel,
            )
        )
        x, v, acc, gn = x_next, v_next, acc_next, gn_next
    else:
        termination = "max-iter"
        if gn == 0.0:
            termination = "stationary-detected"
        elif gn <= config.tol_grad:
            termination = "gradient-tol"

    meta["final_grad_norm"] = gn
    meta["total_probes"] = sum(r.probes for r in records)
    return RunResult(records=records, termination=termination, meta=meta)


def replay_framework_check(
    result: RunResult, theta: float, sigma: float
) -> list[dict]:
    """Re-certify a finished trace against the generic framework conditions.

    Recomputes, per iteration and purely from the stored vectors, the HPE
    inequality at level sigma, the one-sided large-step test m >= theta, and
    the coupling recurrence for the run's variant.  Used to confirm that a
    tensor instantiation is a valid run of its parent framework.
    """
    variant = result.meta["variant"]
    p = result.meta["p"]
    verdicts = []
    prev_acc = 0.0 if variant == "caf1" else 1.0
    for rec in result.records:
        lhs, rhs, hpe_ok = hpe_check(
            rec.lam, rec.w, rec.x, rec.tilde_v_prev, rec.eps, sigma
        )
        m = stepsize.large_step_value(rec.lam, rec.disp_norm, p)
        step_ok = m >= theta * (1.0 - 1e-12)
        if variant == "caf1":
            coup = rec.accumulator - prev_acc
            resid = abs(coup**2 - rec.lam * (prev_acc + coup)) / (1.0 + coup**2)
        else:
            coup = 1.0 - rec.accumulator / prev_acc
            resid = abs(coup**2 - rec.lam * (1.0 - coup) * prev_acc) / (
                1.0 + coup**2
            )
        verdicts.append(
            {
                "k": rec.k,
                "hpe_ok": hpe_ok,
                "large_step_ok": bool(step_ok),
                "recurrence_ok": bool(resid <= 10.0 * RECURRENCE_SLACK),
                "valid": bool(hpe_ok and step_ok and resid <= 10.0 * RECURRENCE_SLACK),
            }
        )
        prev_acc = rec.accumulator
    return verdicts
