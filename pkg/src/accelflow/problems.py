"""Convex test objectives with analytic derivatives up to third order.

Every problem exposes value/gradient/Hessian and (for third-order methods)
the bilinear action of the third derivative tensor.  Third derivatives are
never materialized as dense tensors; only the action ``(u, w) -> D3[u, w]``
is available, which is all the tensor-model machinery needs.

Each built-in documents, per derivative order p in {1, 2, 3}, a constant
``ell`` such that the p-th derivative is ell-Lipschitz on the stated test
domain.  The constants are analytic (no on-the-fly estimation) and are what
the acceleration drivers consume by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Vector = np.ndarray
Matrix = np.ndarray

__all__ = [
    "OracleEvaluation",
    "Problem",
    "QuadraticProblem",
    "LogSumExpProblem",
    "LogisticProblem",
    "PowerNormProblem",
    "evaluate",
    "check_derivatives",
    "make_problem",
    "PROBLEM_REGISTRY",
]


@dataclass
class OracleEvaluation:
    """Derivatives of the objective at one point, up to a requested order."""

    value: float
    gradient: Optional[Vector] = None
    hessian: Optional[Matrix] = None
    third_action: Optional[Callable[[Vector, Vector], Vector]] = None


class Problem:
    """Base class: a convex objective on R^d with analytic derivatives.

    Subclasses implement ``value``/``gradient`` and, if supported,
    ``hessian`` and ``third_action``.  ``max_order`` states the highest
    derivative order available.
    """

    name: str = "problem"
    dim: int
    max_order: int = 3
    known_minimizer: Optional[Vector] = None
    known_min_value: Optional[float] = None

    def value(self, x: Vector) -> float:
        raise NotImplementedError

    def gradient(self, x: Vector) -> Vector:
        raise NotImplementedError

    def hessian(self, x: Vector) -> Matrix:
        raise NotImplementedError(f"{self.name} has no analytic Hessian")

    def third_action(self, x: Vector, u: Vector, w: Vector) -> Vector:
        """Return the third-derivative tensor at x applied to (u, w)."""
        raise NotImplementedError(f"{self.name} has no third derivative")

    def lipschitz(self, p: int) -> float:
        """A documented Lipschitz constant of the p-th derivative."""
        raise NotImplementedError

    def _check_point(self, x: Vector) -> Vector:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(
                f"point has shape {x.shape}, expected ({self.dim},) for {self.name}"
            )
        return x


def evaluate(problem: Problem, x: Vector, order: int = 1) -> OracleEvaluation:
    """Evaluate the objective and its derivatives up to ``order`` (0..3)."""
    x = problem._check_point(x)
    if not 0 <= order <= 3:
        raise ValueError(f"order must be in 0..3, got {order}")
    if order > problem.max_order:
        raise ValueError(
            f"{problem.name} supports derivatives up to order {problem.max_order}, "
            f"requested {order}"
        )
    ev = OracleEvaluation(value=float(problem.value(x)))
    if order >= 1:
        ev.gradient = problem.gradient(x)
    if order >= 2:
        ev.hessian = problem.hessian(x)
    if order >= 3:
        ev.third_action = lambda u, w: problem.third_action(x, u, w)
    return ev


# ---------------------------------------------------------------------------
# Built-in problems
# ---------------------------------------------------------------------------


class QuadraticProblem(Problem):
    """SPD quadratic 0.5 (x-x*)' Q (x-x*) with a configurable spectrum.

    The spectrum is geometric from 1 to ``cond``; with ``rotate=True`` the
    eigenbasis is a seeded random rotation, otherwise Q is diagonal.

    Lipschitz constants: the gradient is lambda_max(Q)-Lipschitz; second and
    higher derivative tensors are constant, so any positive constant is valid
    for p >= 2 (1.0 is reported).
    """

    def __init__(
        self,
        dim: int,
        cond: float = 10.0,
        rotate: bool = True,
        center: Optional[Vector] = None,
        seed: int = 0,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if cond < 1.0:
            raise ValueError("cond must be >= 1")
        self.name = f"quadratic(d={dim},cond={cond:g})"
        self.dim = dim
        self.cond = float(cond)
        spectrum = np.geomspace(1.0, self.cond, dim)
        if rotate and dim > 1:
            rng = np.random.default_rng(seed)
            q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
            q = q * np.sign(np.diag(r))  # fix the sign convention
            self.Q = q @ np.diag(spectrum) @ q.T
            self.Q = 0.5 * (self.Q + self.Q.T)
        else:
            self.Q = np.diag(spectrum)
        self.center = (
            np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        )
        self.known_minimizer = self.center.copy()
        self.known_min_value = 0.0
        self._lmax = float(spectrum[-1])

    def value(self, x: Vector) -> float:
        d = x - self.center
        return 0.5 * float(d @ self.Q @ d)

    def gradient(self, x: Vector) -> Vector:
        return self.Q @ (x - self.center)

    def hessian(self, x: Vector) -> Matrix:
        return self.Q.copy()

    def third_action(self, x: Vector, u: Vector, w: Vector) -> Vector:
        return np.zeros(self.dim)

    def lipschitz(self, p: int) -> float:
        if p == 1:
            return self._lmax
        if p in (2, 3):
            return 1.0  # derivative tensor is constant; any ell > 0 is valid
        raise ValueError(f"p must be in {{1,2,3}}, got {p}")


class LogSumExpProblem(Problem):
    """log-sum-exp over affine forms, built centro-symmetric.

    Phi(x) = log sum_i exp(a_i' x + b_i) with rows arranged in (a, b), (-a, b)
    pairs, which puts the unique minimizer at the origin (the paired softmax
    weights cancel the gradient there).  Evaluation is max-shifted for
    overflow safety.

    Lipschitz constants on all of R^d, with s = ||A||_op:
    p=1: s^2 (softmax covariance has operator norm <= 1), p=2: 2 s^3
    (third cumulant of a unit-bounded variable), p=3: 4 s^4 (fourth cumulant;
    both via Banach's theorem for symmetric forms).
    """

    def __init__(
        self,
        dim: int,
        terms: Optional[int] = None,
        scale: float = 1.0,
        seed: int = 0,
        matrix: Optional[Matrix] = None,
        offsets: Optional[Vector] = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        if matrix is not None:
            # explicit affine forms; the origin is kept as the documented
            # minimizer only when it actually is one
            self.A = np.asarray(matrix, dtype=float)
            self.b = (
                np.zeros(self.A.shape[0])
                if offsets is None
                else np.asarray(offsets, dtype=float)
            )
        else:
            n_half = terms if terms is not None else dim + 5
            if n_half < dim:
                raise ValueError("terms must be >= dim for a unique minimizer")
            rng = np.random.default_rng(seed)
            g = rng.standard_normal((n_half, dim)) * (scale / math.sqrt(dim))
            h = rng.uniform(-1.0, 1.0, n_half)
            self.A = np.vstack([g, -g])
            self.b = np.concatenate([h, h])
        self.name = f"logsumexp(d={dim},m={self.A.shape[0]})"
        if float(np.linalg.norm(self.A.T @ self._softmax(np.zeros(dim)))) <= 1e-12:
            self.known_minimizer = np.zeros(dim)
            self.known_min_value = self._lse(self.b)
        self._anorm = float(np.linalg.norm(self.A, 2))

    @staticmethod
    def _lse(z: Vector) -> float:
        zmax = float(np.max(z))
        return zmax + math.log(float(np.sum(np.exp(z - zmax))))

    def _softmax(self, x: Vector) -> Vector:
        z = self.A @ x + self.b
        z = z - np.max(z)
        e = np.exp(z)
        return e / np.sum(e)

    def value(self, x: Vector) -> float:
        return self._lse(self.A @ x + self.b)

    def gradient(self, x: Vector) -> Vector:
        return self.A.T @ self._softmax(x)

    def hessian(self, x: Vector) -> Matrix:
        p = self._softmax(x)
        ap = self.A * p[:, None]
        h = self.A.T @ ap - np.outer(self.A.T @ p, self.A.T @ p)
        return 0.5 * (h + h.T)

    def third_action(self, x: Vector, u: Vector, w: Vector) -> Vector:
        # Third cumulant tensor of the softmax distribution, contracted twice
        # and pulled back through A.
        p = self._softmax(x)
        s = self.A @ u
        t = self.A @ w
        ps = float(p @ s)
        pt = float(p @ t)
        pst = float(p @ (s * t))
        core = p * (s * t - pt * s - ps * t) + (2.0 * ps * pt - pst) * p
        return self.A.T @ core

    def lipschitz(self, p: int) -> float:
        if p == 1:
            return self._anorm**2
        if p == 2:
            return 2.0 * self._anorm**3
        if p == 3:
            return 4.0 * self._anorm**4
        raise ValueError(f"p must be in {{1,2,3}}, got {p}")


class LogisticProblem(Problem):
    """Ridge-regularized logistic regression on a seeded synthetic design.

    Phi(x) = (1/n) sum_i log(1 + exp(-y_i a_i' x)) + (mu/2) ||x||^2.
    The minimizer has no closed form; it is computed once at construction by
    damped Newton to gradient norm <= 1e-13 (the ridge term makes the problem
    strongly convex, so this is cheap and reliable).

    Lipschitz constants use the scalar logistic-loss derivative bounds
    max psi'' = 1/4, max |psi'''| = 1/(6 sqrt 3), max |psi''''| = 1/8:
    p=1: mu + lambda_max(A'A)/(4n), p=2: (1/(6 sqrt 3) n) sum ||a_i||^3,
    p=3: (1/(8n)) sum ||a_i||^4.
    """

    def __init__(self, dim: int, samples: Optional[int] = None, mu: float = 1e-2, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        n = samples if samples is not None else 4 * dim
        self.name = f"logistic(d={dim},n={n})"
        self.dim = dim
        self.mu = float(mu)
        rng = np.random.default_rng(seed)
        self.A = rng.standard_normal((n, dim)) / math.sqrt(dim)
        w_true = rng.standard_normal(dim)
        margins = self.A @ w_true + 0.5 * rng.standard_normal(n)
        self.y = np.where(margins >= 0.0, 1.0, -1.0)
        self.n = n

        row_norms = np.linalg.norm(self.A, axis=1)
        self._ell = {
            1: self.mu + float(np.linalg.norm(self.A, 2)) ** 2 / (4.0 * n),
            2: float(np.sum(row_norms**3)) / (6.0 * math.sqrt(3.0) * n),
            3: float(np.sum(row_norms**4)) / (8.0 * n),
        }
        self.known_minimizer = self._solve_minimizer()
        self.known_min_value = self.value(self.known_minimizer)

    def _margins(self, x: Vector) -> Vector:
        return self.y * (self.A @ x)

    def value(self, x: Vector) -> float:
        t = self._margins(x)
        # log(1 + exp(-t)) evaluated stably on both tails
        loss = np.logaddexp(0.0, -t)
        return float(np.mean(loss)) + 0.5 * self.mu * float(x @ x)

    def gradient(self, x: Vector) -> Vector:
        t = self._margins(x)
        sig = 1.0 / (1.0 + np.exp(-t))
        coeff = (sig - 1.0) * self.y
        return self.A.T @ coeff / self.n + self.mu * x

    def hessian(self, x: Vector) -> Matrix:
        t = self._margins(x)
        sig = 1.0 / (1.0 + np.exp(-t))
        d2 = sig * (1.0 - sig)
        h = (self.A * d2[:, None]).T @ self.A / self.n
        return 0.5 * (h + h.T) + self.mu * np.eye(self.dim)

    def third_action(self, x: Vector, u: Vector, w: Vector) -> Vector:
        t = self._margins(x)
        sig = 1.0 / (1.0 + np.exp(-t))
        d3 = sig * (1.0 - sig) * (1.0 - 2.0 * sig)
        coeff = d3 * self.y * (self.A @ u) * (self.A @ w)
        return self.A.T @ coeff / self.n

    def lipschitz(self, p: int) -> float:
        if p not in self._ell:
            raise ValueError(f"p must be in {{1,2,3}}, got {p}")
        return self._ell[p]

    def _solve_minimizer(self) -> Vector:
        x = np.zeros(self.dim)
        for _ in range(100):
            g = self.gradient(x)
            if np.linalg.norm(g) <= 1e-13:
                break
            step = np.linalg.solve(self.hessian(x), g)
            f0, alpha = self.value(x), 1.0
            while self.value(x - alpha * step) > f0 and alpha > 1e-8:
                alpha *= 0.5
            x = x - alpha * step
        return x


class PowerNormProblem(Problem):
    """Power of the Euclidean norm: Phi(x) = ||x - x_c||^q / q, integer q >= 2.

    With q = p + 1 the p-th derivative is p!-Lipschitz globally (the sharp
    constant), which makes this the canonical order-matched test function.
    For p < q - 1 only a ball-restricted constant exists and the documented
    radius is ``radius``; for p > q - 1 no finite constant exists near the
    center and ``lipschitz`` raises.
    """

    def __init__(self, dim: int, exponent: int = 3, center: Optional[Vector] = None, radius: float = 10.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if exponent < 2:
            raise ValueError("exponent must be an integer >= 2")
        self.name = f"powernorm(d={dim},q={exponent})"
        self.dim = dim
        self.q = int(exponent)
        self.radius = float(radius)
        self.center = (
            np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        )
        self.known_minimizer = self.center.copy()
        self.known_min_value = 0.0

    def value(self, x: Vector) -> float:
        r = float(np.linalg.norm(x - self.center))
        return r**self.q / self.q

    def gradient(self, x: Vector) -> Vector:
        d = x - self.center
        r = float(np.linalg.norm(d))
        if r == 0.0:
            return np.zeros(self.dim)
        return r ** (self.q - 2) * d

    def hessian(self, x: Vector) -> Matrix:
        d = x - self.center
        r = float(np.linalg.norm(d))
        if r == 0.0:
            # q = 2 gives the identity; higher exponents vanish at the center
            return np.eye(self.dim) if self.q == 2 else np.zeros((self.dim, self.dim))
        return r ** (self.q - 2) * np.eye(self.dim) + (self.q - 2) * r ** (
            self.q - 4
        ) * np.outer(d, d)

    def third_action(self, x: Vector, u: Vector, w: Vector) -> Vector:
        d = x - self.center
        r = float(np.linalg.norm(d))
        if r == 0.0:
            return np.zeros(self.dim)
        du, dw, uw = float(d @ u), float(d @ w), float(u @ w)
        out = r ** (self.q - 4) * (du * w + dw * u + uw * d)
        if self.q != 4:
            out = out + (self.q - 4) * r ** (self.q - 6) * du * dw * d
        return (self.q - 2) * out

    def lipschitz(self, p: int) -> float:
        if p not in (1, 2, 3):
            raise ValueError(f"p must be in {{1,2,3}}, got {p}")
        if p == self.q - 1:
            return float(math.factorial(p))
        if p < self.q - 1:
            # sup of the (p+1)-th derivative norm on the documented ball
            c = math.factorial(self.q) / math.factorial(self.q - p - 1) / self.q
            return c * self.radius ** (self.q - p - 1)
        raise ValueError(
            f"||x||^{self.q} has no Lipschitz derivative of order {p} near the center"
        )


# ---------------------------------------------------------------------------
# Derivative verification
# ---------------------------------------------------------------------------


def check_derivatives(problem: Problem, x: Vector, step: float = 1e-5) -> dict:
    """Central-difference consistency report for all supported orders.

    Order-n derivatives are differenced to reproduce the order-(n+1)
    derivative; the report maps order -> max relative error.  Report-only:
    nothing is raised, callers decide what to tolerate.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    x = problem._check_point(x)
    rng = np.random.default_rng(12345)
    report: dict[int, float] = {}

    g = problem.gradient(x)
    scale = 1.0 + float(np.linalg.norm(g))
    fd_g = np.array(
        [
            (problem.value(x + step * e) - problem.value(x - step * e)) / (2 * step)
            for e in np.eye(problem.dim)
        ]
    )
    report[1] = float(np.max(np.abs(fd_g - g))) / scale

    if problem.max_order >= 2:
        h = problem.hessian(x)
        scale = 1.0 + float(np.linalg.norm(h))
        cols = [
            (problem.gradient(x + step * e) - problem.gradient(x - step * e))
            / (2 * step)
            for e in np.eye(problem.dim)
        ]
        fd_h = np.column_stack(cols)
        report[2] = float(np.max(np.abs(fd_h - h))) / scale

    if problem.max_order >= 3:
        # probe the tensor action along random direction pairs
        worst = 0.0
        for _ in range(4):
            u = rng.standard_normal(problem.dim)
            w = rng.standard_normal(problem.dim)
            analytic = problem.third_action(x, u, w)
            fd = (
                (problem.hessian(x + step * u) - problem.hessian(x - step * u))
                / (2 * step)
            ) @ w
            scale = 1.0 + float(np.linalg.norm(analytic))
            worst = max(worst, float(np.max(np.abs(fd - analytic))) / scale)
        report[3] = worst

    return report


# ---------------------------------------------------------------------------
# Registry for the harness
# ---------------------------------------------------------------------------

PROBLEM_REGISTRY = {
    "quadratic": QuadraticProblem,
    "logsumexp": LogSumExpProblem,
    "logistic": LogisticProblem,
    "powernorm": PowerNormProblem,
}


def make_problem(name: str, seed: int = 0, **params) -> Problem:
    """Construct a built-in problem by registry name."""
    try:
        cls = PROBLEM_REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; available: {sorted(PROBLEM_REGISTRY)}"
        ) from None
    if name == "powernorm":
        return cls(**params)  # fully deterministic, no seed parameter
    return cls(seed=seed, **params)
