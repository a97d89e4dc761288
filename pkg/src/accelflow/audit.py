"""Invariant audit of finished traces.

Re-derives, from the scalar trace columns plus the run metadata, every
inequality the theory guarantees along an accepted run, and reports one
verdict per check.  Works identically on in-memory rows and on rows parsed
back from a CSV artifact (float columns round-trip exactly through repr).

Slack conventions: the HPE comparison carries the same 1e-14 rounding
allowance the driver used; coupling recurrences are checked to 1e-12
relative to the natural scale 1 + coupling^2 + lam * weight (the extra
weight term absorbs reconstruction rounding, since the audit re-derives the
coupling from consecutive accumulator values); all energy/weight bounds use
additive slack 1e-9 (1 + |bound|), which absorbs float accumulation over
hundreds of iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["AuditCheck", "audit_discrete", "audit_flow", "render_checks"]

ENERGY_SLACK = 1e-9
RECURRENCE_TOL = 1e-12
HPE_SLACK = 1e-14


@dataclass
class AuditCheck:
    name: str
    passed: bool
    worst: float  # most adverse margin across the trace (<= 0 means clean)
    detail: str = ""


def _check(name: str, margins: list[float], detail: str = "") -> AuditCheck:
    worst = max(margins) if margins else 0.0
    return AuditCheck(name=name, passed=worst <= 0.0, worst=worst, detail=detail)


def audit_discrete(rows: list[dict], meta: dict) -> list[AuditCheck]:
    """Audit one discrete run; ``rows`` use the documented CSV columns."""
    variant = meta["variant"]
    p = int(meta["p"])
    sigma = float(meta["sigma"])
    theta = float(meta["theta"])
    theta_low = float(meta["theta_low"])
    theta_high = float(meta["theta_high"])
    e0 = float(meta["E0"])
    v0_dist_sq = float(meta["v0_dist_sq"])

    checks: list[AuditCheck] = []

    checks.append(
        _check(
            "hpe-inequality",
            [r["hpe_lhs"] - r["hpe_rhs"] - HPE_SLACK for r in rows],
            "||lam w + x - v~||^2 + 2 lam eps <= sigma^2 ||x - v~||^2",
        )
    )
    checks.append(
        _check(
            "large-step-window",
            [
                max(theta_low - r["large_step_value"], r["large_step_value"] - theta_high)
                for r in rows
            ],
            f"m_k in [{theta_low:.6g}, {theta_high:.6g}]",
        )
    )

    margins = []
    prev = 0.0 if variant == "caf1" else 1.0
    for r in rows:
        lam, acc = r["lambda"], r["accumulator"]
        if variant == "caf1":
            coup = acc - prev
            resid = abs(coup * coup - lam * (prev + coup))
            scale = 1.0 + coup * coup + lam * (prev + coup)
        else:
            coup = 1.0 - acc / prev
            resid = abs(coup * coup - lam * (1.0 - coup) * prev)
            scale = 1.0 + coup * coup + lam * (1.0 - coup) * prev
        margins.append(resid / scale - RECURRENCE_TOL)
        prev = acc
    checks.append(_check("coupling-recurrence", margins, "residual <= 1e-12 relative"))

    exp = (3.0 * p + 1.0) / 2.0
    if variant == "caf1":
        v0_dist = math.sqrt(v0_dist_sq)
        const = (
            theta
            * (1.0 - sigma * sigma) ** ((p - 1.0) / 2.0)
            / ((p + 1.0) ** exp * v0_dist ** (p - 1))
        )
        checks.append(
            _check(
                "weight-lower-bound",
                [
                    const * r["k"] ** exp
                    - r["accumulator"]
                    - ENERGY_SLACK * (1.0 + const * r["k"] ** exp)
                    for r in rows
                ],
                "A_k >= theta (1-sigma^2)^((p-1)/2) k^((3p+1)/2) / ((p+1)^((3p+1)/2) ||v0-x*||^(p-1))",
            )
        )
        checks.append(
            _check(
                "gap-weight-product",
                [
                    r["f_gap"] * r["accumulator"]
                    - 0.5 * v0_dist_sq
                    - ENERGY_SLACK * (1.0 + 0.5 * v0_dist_sq)
                    for r in rows
                ],
                "gap_k A_k <= ||v0 - x*||^2 / 2",
            )
        )
    else:
        const = (
            (p + 1.0) ** exp
            / theta
            * (2.0 * e0 / (1.0 - sigma * sigma)) ** ((p - 1.0) / 2.0)
        )
        checks.append(
            _check(
                "weight-upper-bound",
                [
                    r["accumulator"]
                    - const * r["k"] ** (-exp)
                    - ENERGY_SLACK * (1.0 + const * r["k"] ** (-exp))
                    for r in rows
                ],
                "gamma_k <= (p+1)^((3p+1)/2) (2 E0 / (1-sigma^2))^((p-1)/2) k^(-(3p+1)/2) / theta",
            )
        )
        margins, prev = [], 1.0
        for r in rows:
            lhs = math.sqrt(1.0 / r["accumulator"])
            rhs = math.sqrt(1.0 / prev) + 0.5 * math.sqrt(r["lambda"])
            margins.append(rhs - lhs - ENERGY_SLACK * (1.0 + lhs))
            prev = r["accumulator"]
        checks.append(
            _check(
                "inverse-weight-increment",
                margins,
                "sqrt(1/gamma_{k+1}) >= sqrt(1/gamma_k) + sqrt(lambda_{k+1})/2",
            )
        )

    margins, acc_sum, prev = [], 0.0, None
    for r in rows:
        if variant == "caf1":
            acc_sum += (
                (1.0 - sigma * sigma)
                / 2.0
                * (r["accumulator"] / r["lambda"])
                * r["disp_norm"] ** 2
            )
        else:
            acc_sum += (
                (1.0 - sigma * sigma)
                / 2.0
                * r["disp_norm"] ** 2
                / (r["lambda"] * r["accumulator"])
            )
        margins.append(acc_sum - (e0 - r["lyapunov"]) - ENERGY_SLACK * (1.0 + e0))
    checks.append(
        _check(
            "cumulative-dissipation",
            margins,
            "(1-sigma^2)/2 sum ||x_i - v~_{i-1}||^2 weight_i <= E_0 - E_k",
        )
    )

    margins, prev_e = [], e0
    for r in rows:
        margins.append(r["lyapunov"] - prev_e - ENERGY_SLACK * (1.0 + e0))
        prev_e = r["lyapunov"]
    checks.append(_check("energy-monotone", margins, "E_k nonincreasing per step"))

    return checks


def audit_flow(rows: list[dict], meta: dict) -> list[AuditCheck]:
    """Audit one flow trace; ``rows`` use the documented flow CSV columns."""
    from .flow import FlowConfig, a_lower_bound

    p = int(meta["p"])
    theta = float(meta["theta"])
    c = float(meta["c"])
    e0 = float(meta["E0"])
    config = FlowConfig(p=p, theta=theta, c=c)

    checks: list[AuditCheck] = []

    residual_tol = 1e-12 if p == 1 else 1e-6
    checks.append(
        _check(
            "algebraic-residual",
            [r["algebraic_residual"] - residual_tol for r in rows],
            f"|lambda^p ||grad||^(p-1) - theta| <= {residual_tol:g}",
        )
    )

    margins, prev_e = [], e0
    for r in rows:
        margins.append(r["lyapunov"] - prev_e - ENERGY_SLACK * (1.0 + e0))
        prev_e = r["lyapunov"]
    checks.append(_check("energy-monotone", margins, "E(t) nonincreasing per sample"))

    checks.append(
        _check(
            "weight-consistency",
            [
                abs(r["a"] - 0.25 * (r["s"] + c) ** 2) - 1e-12 * (1.0 + r["a"])
                for r in rows
            ],
            "a = (s + c)^2 / 4 definitionally",
        )
    )

    checks.append(
        _check(
            "weight-lower-bound",
            [
                a_lower_bound(r["t"], config, e0) * (1.0 - 1e-8) - r["a"]
                for r in rows
            ],
            "a(t) >= growth floor within 1e-8 relative",
        )
    )

    margins, dissipated = [], 0.0
    power = (p + 1.0) / (2.0 * p)
    prev = None
    for r in rows:
        if prev is not None:
            f_prev = prev["a"] * theta ** (1.0 / p) * prev["grad_norm_sq"] ** power
            f_cur = r["a"] * theta ** (1.0 / p) * r["grad_norm_sq"] ** power
            dissipated += 0.5 * (f_prev + f_cur) * (r["t"] - prev["t"])
        margins.append((1.0 - 1e-3) * dissipated - (e0 - r["lyapunov"]))
        prev = r
    checks.append(
        _check(
            "cumulative-dissipation",
            margins,
            "E(0) - E(t) >= (1 - 1e-3) integral of a theta^(1/p) ||grad||^((p+1)/p)",
        )
    )

    return checks


def render_checks(checks: list[AuditCheck]) -> str:
    lines = []
    for chk in checks:
        status = "PASS" if chk.passed else "FAIL"
        lines.append(f"[{status}] {chk.name} (worst margin {chk.worst:+.3e}) {chk.detail}")
    return "\n".join(lines)
