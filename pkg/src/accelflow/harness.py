"""Experiment harness: configs, runners, rate fits, and artifacts.

One experiment = one problem + one algorithm (or flow integration) + scalar
settings, resolved from a YAML config with CLI overrides.  Each run writes a
CSV trace with a fixed documented column set and a JSON summary (config
echo, initial data, termination, rate fits, invariant-audit verdicts,
versions).  Outputs are deterministic for a given config and seed; CSVs are
byte-identical across re-runs.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .audit import audit_discrete, audit_flow
from .drivers import IterateRecord, RunResult, SolverConfig, run
from .flow import FlowConfig, FlowResult, FlowSample, integrate
from .problems import make_problem

__all__ = [
    "RateFit",
    "fit_rate",
    "ExperimentConfig",
    "load_config",
    "apply_overrides",
    "run_experiment",
    "compare",
    "run_suite",
    "default_suite_configs",
    "load_artifact",
    "DISCRETE_COLUMNS",
    "FLOW_COLUMNS",
]

SCHEMA_VERSION = 1

DISCRETE_COLUMNS = [
    "k",
    "lambda",
    "accumulator",
    "f_gap",
    "grad_norm_sq",
    "hpe_lhs",
    "hpe_rhs",
    "large_step_value",
    "lyapunov",
    "probe_count",
    "eps",
    "disp_norm",
]

FLOW_COLUMNS = [
    "t",
    "a",
    "lambda",
    "f_gap",
    "grad_norm_sq",
    "lyapunov",
    "algebraic_residual",
    "a_dot",
    "s",
]


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "n_points": self.n_points,
        }


def fit_rate(
    series: Iterable[tuple[float, float]],
    window: Optional[tuple[float, float]] = None,
) -> RateFit:
    """Least-squares power-law fit: log(value) against log(index).

    ``series`` holds (index, value) pairs; ``window`` restricts to indices
    in [lo, hi].  Requires at least 10 points, all values positive.
    """
    pts = [(float(i), float(v)) for i, v in series]
    if window is not None:
        lo, hi = window
        pts = [(i, v) for i, v in pts if lo <= i <= hi]
    if len(pts) < 10:
        raise ValueError(f"rate fit needs >= 10 points, got {len(pts)}")
    if any(v <= 0.0 for _, v in pts):
        raise ValueError("rate fit requires positive values")
    if any(i <= 0.0 for i, _ in pts):
        raise ValueError("rate fit requires positive indices")
    logx = np.log(np.array([i for i, _ in pts]))
    logy = np.log(np.array([v for _, v in pts]))
    slope, intercept = np.polyfit(logx, logy, 1)
    pred = slope * logx + intercept
    ss_res = float(np.sum((logy - pred) ** 2))
    ss_tot = float(np.sum((logy - np.mean(logy)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    lo = window[0] if window is not None else min(i for i, _ in pts)
    hi = window[1] if window is not None else max(i for i, _ in pts)
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        window=(float(lo), float(hi)),
        n_points=len(pts),
    )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "name": None,
    "kind": "discrete",  # "discrete" or "flow"
    "seed": 0,
    "problem": {"name": "quadratic", "dim": 10, "cond": 1000.0},
    "algorithm": "tensor1",
    "solver": {},  # SolverConfig fields
    "flow": {},  # FlowConfig fields
    "x0": {"mode": "random", "scale": 1.0},
    "output": "out",
}

_SOLVER_FLOATS = {
    "ell",
    "sigma_hat",
    "sigma_l",
    "sigma_u",
    "sigma",
    "theta",
    "tol_grad",
    "subproblem_tol",
}
_FLOW_FLOATS = {"theta", "c", "t_end", "abs_tol", "rel_tol", "sample_stride", "grad_floor"}


def _deep_merge(base: dict, extra: dict, _top: bool = True) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        merged = isinstance(val, dict) and isinstance(out.get(key), dict)
        if merged and _top and key == "problem":
            # problem params are type-specific: switching the problem name
            # replaces the whole section instead of inheriting stale params
            if "name" in val and val["name"] != out[key].get("name"):
                merged = False
        if merged:
            out[key] = _deep_merge(out[key], val, _top=False)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _coerce_floats(section: dict, keys: set) -> dict:
    out = dict(section)
    for key in keys:
        if key in out and out[key] is not None:
            out[key] = float(out[key])
    return out


@dataclass
class ExperimentConfig:
    """Fully resolved settings for one experiment."""

    name: str
    kind: str
    seed: int
    problem: dict
    algorithm: str
    solver: SolverConfig
    flow: FlowConfig
    x0: dict
    output: str

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        cfg = _deep_merge(DEFAULT_CONFIG, raw or {})
        if cfg["kind"] not in ("discrete", "flow"):
            raise ValueError(f"kind must be discrete or flow, got {cfg['kind']!r}")
        solver_kwargs = _coerce_floats(cfg["solver"], _SOLVER_FLOATS)
        known = {f.name for f in fields(SolverConfig)}
        bad = set(solver_kwargs) - known
        if bad:
            raise ValueError(f"unknown solver keys: {sorted(bad)}")
        solver = SolverConfig(**solver_kwargs)
        flow_kwargs = _coerce_floats(cfg["flow"], _FLOW_FLOATS)
        known = {f.name for f in fields(FlowConfig)}
        bad = set(flow_kwargs) - known
        if bad:
            raise ValueError(f"unknown flow keys: {sorted(bad)}")
        flow = FlowConfig(**flow_kwargs)
        name = cfg["name"]
        if not name:
            pname = cfg["problem"].get("name", "problem")
            dim = cfg["problem"].get("dim", "")
            if cfg["kind"] == "flow":
                name = f"{pname}{dim}-p{flow.p}-flow"
            else:
                name = f"{pname}{dim}-p{solver.p}-{cfg['algorithm']}"
        return cls(
            name=str(name),
            kind=cfg["kind"],
            seed=int(cfg["seed"]),
            problem=dict(cfg["problem"]),
            algorithm=str(cfg["algorithm"]),
            solver=solver,
            flow=flow,
            x0=dict(cfg["x0"]),
            output=str(cfg["output"]),
        )

    def echo(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "seed": self.seed,
            "problem": self.problem,
            "algorithm": self.algorithm,
            "solver": asdict(self.solver),
            "flow": asdict(self.flow),
            "x0": self.x0,
            "output": self.output,
        }


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    raw = apply_overrides(raw, overrides)
    return ExperimentConfig.from_dict(raw)


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as YAML scalars."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, value = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = out
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValueError(f"override path {dotted!r} crosses a scalar")
        parsed = yaml.safe_load(value)
        if isinstance(parsed, str):
            # YAML 1.1 reads "1e-8" as a string; prefer the numeric meaning
            try:
                parsed = float(parsed)
            except ValueError:
                pass
        node[keys[-1]] = parsed
    return out


# ---------------------------------------------------------------------------
# Row conversion and artifact I/O
# ---------------------------------------------------------------------------


def discrete_row(rec: IterateRecord) -> dict:
    return {
        "k": rec.k,
        "lambda": rec.lam,
        "accumulator": rec.accumulator,
        "f_gap": rec.f_gap,
        "grad_norm_sq": rec.grad_norm_sq,
        "hpe_lhs": rec.hpe_lhs,
        "hpe_rhs": rec.hpe_rhs,
        "large_step_value": rec.large_step_value,
        "lyapunov": rec.lyapunov,
        "probe_count": rec.probes,
        "eps": rec.eps,
        "disp_norm": rec.disp_norm,
    }


def flow_row(sample: FlowSample) -> dict:
    return {
        "t": sample.t,
        "a": sample.a,
        "lambda": sample.lam,
        "f_gap": sample.f_gap,
        "grad_norm_sq": sample.grad_norm_sq,
        "lyapunov": sample.lyapunov,
        "algebraic_residual": sample.algebraic_residual,
        "a_dot": sample.a_dot,
        "s": sample.s,
    }


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    path.write_text(buf.getvalue())


def read_trace_csv(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append({k: float(v) for k, v in raw.items()})
    return rows


def load_artifact(summary_path: str | Path) -> tuple[dict, list[dict]]:
    """Load a JSON summary and the CSV trace it references."""
    summary_path = Path(summary_path)
    with open(summary_path) as fh:
        summary = json.load(fh)
    rows = read_trace_csv(summary_path.parent / summary["csv"])
    return summary, rows


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------


def _build_x0(problem, setting: dict, seed: int) -> np.ndarray:
    mode = setting.get("mode", "random")
    if mode == "explicit":
        return np.asarray(setting["values"], dtype=float)
    scale = float(setting.get("scale", 1.0))
    if mode == "ones":
        return np.full(problem.dim, scale)
    if mode == "random":
        rng = np.random.default_rng([seed, 101])
        return scale * rng.standard_normal(problem.dim)
    raise ValueError(f"unknown x0 mode {mode!r}")


def _positive_series(pairs: list[tuple[float, float]]) -> list[tuple[float, float]]:
    return [(i, v) for i, v in pairs if math.isfinite(v) and v > 0.0]


def _try_fit(pairs, window) -> Optional[dict]:
    try:
        return fit_rate(pairs, window).to_dict()
    except ValueError:
        return None


def _summarize_discrete(result: RunResult) -> tuple[dict, Optional[dict], Optional[dict]]:
    recs = result.records
    if not recs:
        return (
            {
                "iterations": 0,
                "termination": result.termination,
                "final_gap": result.meta["gap0"],
                "final_grad_norm_sq": result.meta["grad0_norm_sq"],
                "total_probes": 0,
            },
            None,
            None,
        )
    k_max = recs[-1].k
    k_min = max(1, int(0.2 * k_max))
    gap_pairs = _positive_series([(r.k, r.f_gap) for r in recs])
    fit_gap = _try_fit(gap_pairs, (k_min, k_max))
    inf_pairs, best = [], math.inf
    for r in recs:
        best = min(best, r.grad_norm_sq)
        inf_pairs.append((r.k, best))
    fit_grad = _try_fit(_positive_series(inf_pairs), (k_min, k_max))
    results = {
        "iterations": k_max,
        "termination": result.termination,
        "final_gap": recs[-1].f_gap,
        "final_grad_norm_sq": recs[-1].grad_norm_sq,
        "total_probes": result.meta["total_probes"],
    }
    return results, fit_gap, fit_grad


def _summarize_flow(result: FlowResult) -> tuple[dict, Optional[dict]]:
    samples = result.samples
    t_stop = result.meta["t_stop"]
    gap_pairs = _positive_series([(s.t, s.f_gap) for s in samples if s.t > 0.0])
    fit_gap = _try_fit(gap_pairs, (t_stop / 10.0, t_stop))
    results = {
        "n_samples": len(samples),
        "termination": result.status,
        "t_stop": t_stop,
        "final_gap": samples[-1].f_gap,
        "final_grad_norm_sq": samples[-1].grad_norm_sq,
        "integrator_steps": result.meta["n_steps"],
    }
    return results, fit_gap


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None) -> dict:
    """Run one experiment and write ``<name>.csv`` + ``<name>.json``.

    Returns the summary dict (also written to disk).  Solver errors are
    caught and recorded in the summary with the failure stage; the summary
    and an empty trace are still written.
    """
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()

    params = {k: v for k, v in config.problem.items() if k != "name"}
    problem = make_problem(config.problem["name"], seed=config.seed, **params)
    x0 = _build_x0(problem, config.x0, config.seed)

    echo = config.echo()
    echo["output"] = str(out)
    summary: dict = {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "kind": config.kind,
        "algorithm": config.algorithm if config.kind == "discrete" else "flow",
        "seed": config.seed,
        "config": echo,
        "problem": {
            "name": config.problem["name"],
            "dim": problem.dim,
            "params": params,
            "known_min_value": problem.known_min_value,
        },
        "csv": f"{config.name}.csv",
        "versions": _versions(),
    }

    rows: list[dict] = []
    columns = DISCRETE_COLUMNS if config.kind == "discrete" else FLOW_COLUMNS
    try:
        if config.kind == "discrete":
            result = run(config.algorithm, problem, config.solver, x0=x0, v0=x0)
            rows = [discrete_row(r) for r in result.records]
            res, fit_gap, fit_grad = _summarize_discrete(result)
            checks = audit_discrete(rows, result.meta) if result.records else []
            summary["meta"] = result.meta
            summary["results"] = res
            summary["rate_fits"] = {"f_gap": fit_gap, "grad_inf": fit_grad}
        else:
            result = integrate(problem, x0, v0=None, config=config.flow)
            rows = [flow_row(s) for s in result.samples]
            res, fit_gap = _summarize_flow(result)
            checks = audit_flow(rows, result.meta)
            summary["meta"] = result.meta
            summary["results"] = res
            summary["rate_fits"] = {"f_gap": fit_gap}
        summary["audit"] = {
            "passed": all(c.passed for c in checks),
            "checks": [asdict(c) for c in checks],
        }
        summary["error"] = None
    except Exception as exc:  # recorded, not raised: artifacts stay writable
        summary["results"] = {"termination": "error"}
        summary["rate_fits"] = {}
        summary["audit"] = {"passed": False, "checks": []}
        summary["error"] = {"stage": config.kind, "type": type(exc).__name__, "message": str(exc)}

    summary["runtime_seconds"] = time.perf_counter() - t_start
    _write_csv(out / f"{config.name}.csv", columns, rows)
    with open(out / f"{config.name}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return summary


def _versions() -> dict:
    import platform

    import scipy

    return {
        "accelflow": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


# ---------------------------------------------------------------------------
# Comparison and suites
# ---------------------------------------------------------------------------

COMPARE_COLUMNS = [
    "name",
    "kind",
    "algorithm",
    "problem",
    "p",
    "iterations",
    "final_gap",
    "final_grad_norm_sq",
    "f_gap_slope",
    "grad_inf_slope",
    "total_probes",
    "audit_passed",
]


def compare(summaries: list[dict]) -> list[dict]:
    """Aggregate run summaries into one aligned table (list of row dicts)."""
    if not summaries:
        raise ValueError("compare needs at least one summary")
    rows = []
    for s in summaries:
        try:
            fits = s["rate_fits"]
            fgap = fits.get("f_gap")
            ginf = fits.get("grad_inf")
            if s["kind"] == "discrete":
                p = s["config"]["solver"]["p"]
                iters = s["results"].get("iterations", 0)
            else:
                p = s["config"]["flow"]["p"]
                iters = s["results"].get("n_samples", 0)
            rows.append(
                {
                    "name": s["name"],
                    "kind": s["kind"],
                    "algorithm": s["algorithm"],
                    "problem": s["problem"]["name"],
                    "p": p,
                    "iterations": iters,
                    "final_gap": s["results"].get("final_gap", math.nan),
                    "final_grad_norm_sq": s["results"].get("final_grad_norm_sq", math.nan),
                    "f_gap_slope": fgap["slope"] if fgap else math.nan,
                    "grad_inf_slope": ginf["slope"] if ginf else math.nan,
                    "total_probes": s["results"].get("total_probes", 0),
                    "audit_passed": s["audit"]["passed"],
                }
            )
        except KeyError as exc:
            raise ValueError(f"summary schema mismatch: missing {exc}") from None
    return rows


def format_table(rows: list[dict]) -> str:
    cols = COMPARE_COLUMNS
    grid = [[_fmt_cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(g[i]) for g in grid)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for g in grid:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(g, widths)))
    return "\n".join(lines)


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.3e}" if (v != 0 and (abs(v) < 1e-3 or abs(v) >= 1e4)) else f"{v:.4g}"
    return str(v)


def write_compare_csv(path: Path, rows: list[dict]) -> None:
    _write_csv(path, COMPARE_COLUMNS, rows)


def default_suite_configs() -> list[ExperimentConfig]:
    """The shipped desk-scale suite: 3 problems x 4 algorithms x p in {1,2}."""
    problems = [
        {"name": "quadratic", "dim": 10, "cond": 1000.0},
        {"name": "logsumexp", "dim": 20},
        {"name": "logistic", "dim": 10},
    ]
    configs = []
    for prob in problems:
        for p in (1, 2):
            for algo in ("caf1", "caf2", "tensor1", "tensor2"):
                configs.append(
                    ExperimentConfig.from_dict(
                        {
                            "seed": 7,
                            "kind": "discrete",
                            "problem": prob,
                            "algorithm": algo,
                            "solver": {
                                "p": p,
                                "max_iter": 200 if p == 1 else 60,
                                "tol_grad": 1e-10,
                            },
                        }
                    )
                )
    return configs


def run_suite(
    configs: Optional[list[ExperimentConfig]] = None, out_dir: str = "out"
) -> tuple[list[dict], list[dict]]:
    """Run a batch of experiments and write the aggregate comparison table."""
    configs = configs if configs is not None else default_suite_configs()
    summaries = [run_experiment(cfg, out_dir) for cfg in configs]
    rows = compare(summaries)
    write_compare_csv(Path(out_dir) / "suite_summary.csv", rows)
    return summaries, rows


def suite_configs_from_dict(raw: dict) -> list[ExperimentConfig]:
    """Expand a suite config: either an explicit experiment list or a matrix."""
    if "experiments" in raw:
        base = {k: v for k, v in raw.items() if k != "experiments"}
        return [
            ExperimentConfig.from_dict(_deep_merge(base, exp))
            for exp in raw["experiments"]
        ]
    matrix = raw.get("matrix")
    if not matrix:
        return default_suite_configs()
    base = {k: v for k, v in raw.items() if k != "matrix"}
    configs = []
    for prob in matrix.get("problems", [DEFAULT_CONFIG["problem"]]):
        for p in matrix.get("orders", [1]):
            for algo in matrix.get("algorithms", ["tensor1"]):
                node = _deep_merge(
                    base, {"problem": prob, "algorithm": algo, "solver": {"p": p}}
                )
                configs.append(ExperimentConfig.from_dict(node))
    return configs
