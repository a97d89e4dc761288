"""Regularized Taylor models and the two tensor subproblems.

The model at center v of order p in {1, 2, 3} is the p-th order Taylor
expansion of the objective plus the regularization ell ||u - v||^{p+1}/(p+1)!.
Two solves are provided:

* ``solve_regularized``: minimize  model(u) + ||u - v||^2 / (2 lambda) to a
  sigma-hat relative stationarity tolerance (the proximal tensor step used by
  the accelerated drivers; cf. Jiang, Wang & Zhang 2019).
* ``solve_unregularized``: minimize the bare model (the step used by the
  Bubeck et al. 2019 / Gasnikov et al. 2019 family).

Dimensions are small by design, so dense factorizations are used throughout:
p=2 solves go through the secular equation in the Hessian eigenbasis
(machine-precision, no iteration cap concerns), p=3 through damped Newton
with an eigenvalue floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .problems import Problem, Vector, Matrix

__all__ = [
    "TaylorModel",
    "SubproblemSolution",
    "SubproblemError",
    "build_model",
    "model_value",
    "model_gradient",
    "solve_unregularized",
    "solve_regularized",
]

DEFAULT_TOL = 1e-10


class SubproblemError(RuntimeError):
    """Inner solver exceeded its iteration cap."""


@dataclass(frozen=True)
class TaylorModel:
    """Cached derivatives at the center plus the regularization weight."""

    center: Vector
    order: int
    ell: float
    value0: float
    grad0: Vector
    hess0: Optional[Matrix] = None
    third: Optional[Callable[[Vector, Vector], Vector]] = None

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def build_model(problem: Problem, v: Vector, p: int, ell: float) -> TaylorModel:
    """Evaluate the oracle at v and freeze a TaylorModel of order p."""
    if p not in (1, 2, 3):
        raise ValueError(f"order p must be in {{1,2,3}}, got {p}")
    if ell <= 0.0:
        raise ValueError("ell must be positive")
    v = np.asarray(v, dtype=float)
    hess = problem.hessian(v) if p >= 2 else None
    third = (lambda u, w: problem.third_action(v, u, w)) if p == 3 else None
    return TaylorModel(
        center=v.copy(),
        order=p,
        ell=float(ell),
        value0=float(problem.value(v)),
        grad0=problem.gradient(v),
        hess0=hess,
        third=third,
    )


def model_value(m: TaylorModel, u: Vector) -> float:
    d = np.asarray(u, dtype=float) - m.center
    r = float(np.linalg.norm(d))
    val = m.value0 + float(m.grad0 @ d)
    if m.order >= 2:
        val += 0.5 * float(d @ m.hess0 @ d)
    if m.order >= 3:
        val += float(m.third(d, d) @ d) / 6.0
    val += m.ell * r ** (m.order + 1) / math.factorial(m.order + 1)
    return val


def model_gradient(m: TaylorModel, u: Vector) -> Vector:
    d = np.asarray(u, dtype=float) - m.center
    r = float(np.linalg.norm(d))
    g = m.grad0.copy()
    if m.order >= 2:
        g += m.hess0 @ d
    if m.order >= 3:
        g += 0.5 * m.third(d, d)
    if r > 0.0:
        g += (m.ell / math.factorial(m.order)) * r ** (m.order - 1) * d
    return g


def _model_hessian(m: TaylorModel, d: Vector, r: float) -> Matrix:
    """Hessian of the model at center + d (used by the Newton path)."""
    n = m.dim
    h = m.hess0.copy() if m.order >= 2 else np.zeros((n, n))
    if m.order == 1:
        h += m.ell * np.eye(n)
        return h
    if m.order >= 3:
        cols = [m.third(d, e) for e in np.eye(n)]
        t = np.column_stack(cols)
        h += 0.5 * (t + t.T)
    if r > 0.0:
        fac = m.ell / math.factorial(m.order)
        h += fac * (
            r ** (m.order - 1) * np.eye(n)
            + (m.order - 1) * r ** (m.order - 3) * np.outer(d, d)
        )
    return h


@dataclass
class SubproblemSolution:
    """Minimizer, displacement from the center, and residual diagnostics."""

    u: Vector
    r: float
    model_gradient_at_u: Vector
    inexactness_ratio: float
    iterations: int = 0


# ---------------------------------------------------------------------------
# p = 2: secular equation in the eigenbasis
# ---------------------------------------------------------------------------


def _secular_displacement(m: TaylorModel, shift: float) -> Vector:
    """Solve (H + (shift + ell r / 2) I) d = -g with r = ||d||.

    ``shift`` is 1/lambda for the proximal solve and 0 for the bare model.
    The scalar map r -> ||(H + (shift + ell r/2) I)^{-1} g|| is strictly
    decreasing, so the fixed point is unique; it is found by bracketed
    bisection in r, then the displacement is reassembled in the eigenbasis.
    """
    evals, evecs = np.linalg.eigh(m.hess0)
    ghat = evecs.T @ m.grad0

    def resolvent_norm(r: float) -> float:
        denom = evals + shift + 0.5 * m.ell * r
        return float(np.linalg.norm(ghat / denom))

    gnorm = float(np.linalg.norm(m.grad0))
    if gnorm == 0.0:
        return np.zeros(m.dim)

    lo, hi = 0.0, max(1.0, 2.0 * gnorm / max(shift + evals.min(), 0.5 * m.ell))
    # ensure the bracket: phi(r) = resolvent_norm(r) - r changes sign on (lo, hi]
    for _ in range(200):
        if resolvent_norm(hi) <= hi:
            break
        hi *= 2.0
    else:
        raise SubproblemError("secular bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if resolvent_norm(mid) > mid:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    denom = evals + shift + 0.5 * m.ell * r
    return evecs @ (-ghat / denom)


# ---------------------------------------------------------------------------
# p = 3 (and generic fallback): damped Newton with eigenvalue floor
# ---------------------------------------------------------------------------


def _newton_minimize(
    objective: Callable[[Vector], float],
    gradient: Callable[[Vector], Vector],
    hessian: Callable[[Vector], Matrix],
    x0: Vector,
    stop: Callable[[Vector, Vector], bool],
    max_iter: int,
) -> tuple[Vector, int]:
    """Damped Newton with an eigenvalue floor and backtracking.

    A step is accepted on Armijo decrease of the objective, or, once
    objective differences fall below float resolution, on strict decrease
    of the gradient norm (the endgame runs on residual contraction, which
    stays measurable long after the objective is flat).  Falls back to the
    gradient direction if the Newton direction yields neither.
    """
    x = x0.copy()
    for it in range(max_iter):
        g = gradient(x)
        if stop(x, g):
            return x, it
        h = hessian(x)
        evals, evecs = np.linalg.eigh(h)
        floor = max(1e-12, 1e-10 * float(np.max(np.abs(evals))))
        evals = np.maximum(evals, floor)
        newton = evecs @ ((evecs.T @ g) / evals)
        f0 = objective(x)
        gn0 = float(np.linalg.norm(g))
        moved = False
        for step in (newton, g):
            alpha, gstep = 1.0, float(g @ step)
            if gstep <= 0.0:
                continue
            while alpha > 1e-14:
                x_try = x - alpha * step
                if objective(x_try) <= f0 - 1e-4 * alpha * gstep or float(
                    np.linalg.norm(gradient(x_try))
                ) <= (1.0 - 1e-4 * alpha) * gn0:
                    x, moved = x_try, True
                    break
                alpha *= 0.5
            if moved:
                break
        if not moved:
            break  # numerically stalled; the stop test below decides
    g = gradient(x)
    if stop(x, g):
        return x, max_iter
    raise SubproblemError(f"inner Newton solver hit the {max_iter}-iteration cap")


# ---------------------------------------------------------------------------
# Public solves
# ---------------------------------------------------------------------------


def solve_unregularized(
    m: TaylorModel, tol: float = DEFAULT_TOL, max_iter: int = 200
) -> SubproblemSolution:
    """Global minimizer of the bare model to ||grad|| <= tol max(1, ||g0||)."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    gnorm0 = float(np.linalg.norm(m.grad0))
    target = tol * max(1.0, gnorm0)
    if gnorm0 == 0.0:
        return SubproblemSolution(m.center.copy(), 0.0, np.zeros(m.dim), 0.0)

    if m.order == 1:
        u = m.center - m.grad0 / m.ell
        iters = 0
    elif m.order == 2:
        u = m.center + _secular_displacement(m, shift=0.0)
        iters = 0
    else:
        u, iters = _newton_minimize(
            lambda x: model_value(m, x),
            lambda x: model_gradient(m, x),
            lambda x: _model_hessian(m, x - m.center, float(np.linalg.norm(x - m.center))),
            m.center.copy(),
            stop=lambda x, g: float(np.linalg.norm(g)) <= target,
            max_iter=max_iter,
        )
    g_at_u = model_gradient(m, u)
    if float(np.linalg.norm(g_at_u)) > target:
        raise SubproblemError("unregularized model solve missed its tolerance")
    return SubproblemSolution(
        u=u,
        r=float(np.linalg.norm(u - m.center)),
        model_gradient_at_u=g_at_u,
        inexactness_ratio=0.0,
        iterations=iters,
    )


def solve_regularized(
    m: TaylorModel,
    lam: float,
    sigma_hat: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
) -> SubproblemSolution:
    """Proximal tensor step: residual lambda grad_model(u) + u - v driven
    below sigma_hat ||u - v|| (below tol absolute at degenerate centers)."""
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    if not 0.0 < sigma_hat < 1.0:
        raise ValueError("sigma_hat must lie in (0, 1)")
    if tol <= 0.0:
        raise ValueError("tol must be positive")

    gnorm0 = float(np.linalg.norm(m.grad0))
    if gnorm0 == 0.0:
        return SubproblemSolution(m.center.copy(), 0.0, np.zeros(m.dim), 0.0)

    if m.order == 1:
        u = m.center - m.grad0 / (m.ell + 1.0 / lam)
        iters = 0
    elif m.order == 2:
        u = m.center + _secular_displacement(m, shift=1.0 / lam)
        iters = 0
    else:
        def residual_ok(x: Vector, g: Vector) -> bool:
            # g is the prox-objective gradient, so lam g = lam grad_model + d
            r = float(np.linalg.norm(x - m.center))
            res = lam * float(np.linalg.norm(g))
            return res <= tol or (r > 10.0 * tol and res <= sigma_hat * r)

        u, iters = _newton_minimize(
            lambda x: model_value(m, x)
            + float(np.linalg.norm(x - m.center) ** 2) / (2.0 * lam),
            lambda x: model_gradient(m, x) + (x - m.center) / lam,
            lambda x: _model_hessian(
                m, x - m.center, float(np.linalg.norm(x - m.center))
            )
            + np.eye(m.dim) / lam,
            m.center.copy(),
            stop=residual_ok,
            max_iter=max_iter,
        )

    d = u - m.center
    r = float(np.linalg.norm(d))
    g_at_u = model_gradient(m, u)
    res = float(np.linalg.norm(lam * g_at_u + d))
    ratio = res / r if r > 0.0 else 0.0
    if r > 10.0 * tol and ratio > sigma_hat:
        raise SubproblemError(
            f"proximal model solve missed the relative tolerance: "
            f"ratio {ratio:.3e} > sigma_hat {sigma_hat:.3e}"
        )
    if r <= 10.0 * tol and res > tol:
        raise SubproblemError("proximal model solve missed the absolute tolerance")
    return SubproblemSolution(
        u=u, r=r, model_gradient_at_u=g_at_u, inexactness_ratio=ratio, iterations=iters
    )
