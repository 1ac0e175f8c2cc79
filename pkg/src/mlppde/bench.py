"""Convergence studies: RMSE over seeds versus measured cost, rate fits, cost-model checks."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .mlp import MlpLevel, mlp_estimate, mlp_estimate_batch, predict_cost
from .model import CostLedger, ScaledHeat, SemilinearProblem, allen_cahn, parse_initial_value
from .oracles import feynman_kac, ode_picard_oracle, quadrature_fixed_point_1d
from .streams import StreamKey

ROW_HEADER = [
    "problem", "d", "T", "t", "n", "M", "seed", "estimate", "reference",
    "abs_error", "f_evals", "g_evals", "scalar_draws", "wall_ms",
]
SUMMARY_HEADER = ["n", "M", "rmse", "mean_cost_total", "slope_fit_running"]


@dataclass
class StudyConfig:
    problem: SemilinearProblem
    t: float
    x: Sequence[float]
    levels: list[MlpLevel] = field(default_factory=lambda: [MlpLevel(k, k) for k in range(1, 6)])
    seeds: int = 20
    reference: str = "quadrature"
    root_seed: int = 0
    output_path: str | None = None
    summary_path: str | None = None

    def __post_init__(self):
        if not self.levels:
            raise ValueError("study needs at least one level")
        if self.seeds < 2:
            raise ValueError(f"study needs at least 2 seeds, got {self.seeds}")
        self.x = tuple(float(c) for c in np.broadcast_to(np.asarray(self.x, dtype=float), (self.problem.dimension,)))

    @property
    def problem_id(self) -> str:
        return self.problem.name


@dataclass
class StudyRow:
    level: MlpLevel
    seed: int
    estimate: float
    reference: float
    ledger: CostLedger
    wall_time: float

    @property
    def abs_error(self) -> float:
        return abs(self.estimate - self.reference)


@dataclass
class LevelSummary:
    level: MlpLevel
    rmse: float
    mean_cost: float
    mean_wall_time: float
    slope_running: float = math.nan


@dataclass
class StudyResult:
    config: StudyConfig
    reference: float
    reference_note: str
    rows: list[StudyRow]
    summary: list[LevelSummary]


class StudyReferenceError(RuntimeError):
    """Reference value could not be computed."""


def resolve_reference(config: StudyConfig) -> tuple[float, str]:
    """Reference value for the study and a note describing where it came from."""
    spec = config.reference
    problem = config.problem
    x = np.asarray(config.x)
    try:
        if spec.startswith("value:"):
            return float(spec.split(":", 1)[1]), "given"
        if spec == "quadrature":
            sol = quadrature_fixed_point_1d(problem)
            idx = int(round(config.t / problem.horizon * (len(sol.times) - 1)))
            if not math.isclose(sol.times[idx], config.t, rel_tol=0, abs_tol=1e-12):
                raise StudyReferenceError(f"evaluation time {config.t} is not on the quadrature time grid")
            return sol.at(float(x[0]), idx), f"quadrature fixed point (residual {sol.residual:.1e})"
        if spec == "ode":
            g0 = float(problem.initial_value(x))
            if not problem.initial_value.name.startswith("constant"):
                raise StudyReferenceError("ode reference needs a constant initial value")
            return ode_picard_oracle(problem.nonlinearity, g0, config.t, 60), "ode Picard limit (60 iterates)"
        if spec == "feynman-kac":
            est = feynman_kac(problem, config.t, x, 10**6, StreamKey(config.root_seed, (-1,)))
            return est.mean, f"feynman-kac mean (std error {est.std_error:.2e})"
        if spec.startswith("self:"):
            k = int(spec.split("=")[-1])
            keys = [StreamKey(config.root_seed, (-2, s)) for s in range(config.seeds)]
            vals = mlp_estimate_batch(problem, config.t, x, MlpLevel(k, k), keys)
            return float(vals.mean()), f"self-referential: mean of {config.seeds} MLP runs at n=M={k}"
    except StudyReferenceError:
        raise
    except (ValueError, RuntimeError) as exc:
        raise StudyReferenceError(f"reference {spec!r} failed: {exc}") from exc
    raise StudyReferenceError(f"unknown reference {spec!r}")


def fit_rate(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares fit of log(rmse) = slope * log(cost) + intercept; returns (slope, intercept, r^2)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("rate fit needs at least 3 (cost, rmse) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("rate fit needs positive finite costs and errors")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def run_study(config: StudyConfig) -> StudyResult:
    """Run every (level, seed) cell and summarize RMSE against the reference.

    Seed ``s`` at level ``(n, M)`` uses stream key ``root/(n, M, s)``.
    """
    reference, note = resolve_reference(config)
    problem = config.problem
    x = np.asarray(config.x)
    rows: list[StudyRow] = []
    summary: list[LevelSummary] = []
    for level in config.levels:
        cells = []
        for s in range(config.seeds):
            ledger = CostLedger()
            start = time.perf_counter()
            value = mlp_estimate(problem, config.t, x, level, StreamKey(config.root_seed, (level.n, level.M, s)), ledger)
            cells.append(StudyRow(level, s, value, reference, ledger, time.perf_counter() - start))
        rows += cells
        errs = np.array([c.abs_error for c in cells])
        lvl = LevelSummary(
            level,
            rmse=float(np.sqrt(np.mean(errs**2))),
            mean_cost=float(np.mean([c.ledger.total for c in cells])),
            mean_wall_time=float(np.mean([c.wall_time for c in cells])),
        )
        summary.append(lvl)
        pts = [(p.mean_cost, p.rmse) for p in summary]
        if len(pts) >= 3 and all(c > 0 and r > 0 for c, r in pts):
            lvl.slope_running = fit_rate(pts)[0]
    result = StudyResult(config, reference, note, rows, summary)
    if config.output_path:
        write_rows_csv(result, config.output_path)
    if config.summary_path:
        write_summary_csv(result, config.summary_path)
    return result


def rmse_from_rows(rows: Sequence[StudyRow], level: MlpLevel) -> float:
    errs = np.array([r.abs_error for r in rows if r.level == level])
    return float(np.sqrt(np.mean(errs**2)))


# --- CSV -------------------------------------------------------------------


def _write_with_header(path: str, metadata: dict, header: list[str], records: Iterable[list]) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in metadata.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(records)


def study_metadata(result: StudyResult) -> dict:
    from . import build_id

    cfg = result.config
    return {
        "build": build_id(),
        "root_seed": cfg.root_seed,
        "problem": cfg.problem_id,
        "notes": "; ".join(cfg.problem.theorem_notes) or "none",
        "evaluation_point": f"t={cfg.t!r} x={list(cfg.x)!r}",
        "levels": " ".join(f"{lv.n}x{lv.M}" for lv in cfg.levels),
        "seeds": cfg.seeds,
        "reference": f"{cfg.reference} = {result.reference!r} ({result.reference_note})",
    }


def write_rows_csv(result: StudyResult, path: str, metadata: dict | None = None) -> None:
    cfg = result.config
    meta = study_metadata(result) | (metadata or {})
    recs = [
        [
            cfg.problem_id, cfg.problem.dimension, repr(cfg.problem.horizon), repr(cfg.t),
            r.level.n, r.level.M, r.seed, repr(r.estimate), repr(r.reference), repr(r.abs_error),
            r.ledger.f_evals, r.ledger.g_evals, r.ledger.scalar_draws, f"{1000 * r.wall_time:.3f}",
        ]
        for r in result.rows
    ]
    _write_with_header(path, meta, ROW_HEADER, recs)


def write_summary_csv(result: StudyResult, path: str, metadata: dict | None = None) -> None:
    meta = study_metadata(result) | (metadata or {})
    recs = [
        [s.level.n, s.level.M, repr(s.rmse), repr(s.mean_cost), "" if math.isnan(s.slope_running) else repr(s.slope_running)]
        for s in result.summary
    ]
    _write_with_header(path, meta, SUMMARY_HEADER, recs)


def read_summary_csv(path: str) -> list[tuple[float, float]]:
    """(mean_cost_total, rmse) pairs from a summary CSV."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(lines)))
    missing = {"rmse", "mean_cost_total"} - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"summary CSV {path} lacks column(s): {', '.join(sorted(missing))}")
    return [(float(r["mean_cost_total"]), float(r["rmse"])) for r in reader]


# --- cost model ------------------------------------------------------------


@dataclass
class CostCheck:
    level: MlpLevel
    d: int
    measured: CostLedger
    predicted: CostLedger

    @property
    def passed(self) -> bool:
        return self.measured.as_tuple() == self.predicted.as_tuple()

    def __str__(self) -> str:
        m = ",".join(map(str, self.measured.as_tuple()))
        p = ",".join(map(str, self.predicted.as_tuple()))
        return f"n={self.level.n} M={self.level.M} d={self.d} measured=({m}) predicted=({p}) {'PASS' if self.passed else 'FAIL'}"


@dataclass
class CostReport:
    checks: list[CostCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = [str(c) for c in self.checks]
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def default_cost_problem(d: int) -> SemilinearProblem:
    return SemilinearProblem(d, 1.0, ScaledHeat(), allen_cahn(clamp=True), parse_initial_value("half_exp_neg_normsq"))


def verify_cost_model(levels: Iterable[MlpLevel], d: int, problem: SemilinearProblem | None = None, root_seed: int = 0) -> CostReport:
    """Run one instrumented estimate per level and compare the ledger with :func:`predict_cost`."""
    problem = problem or default_cost_problem(d)
    checks = []
    for level in levels:
        ledger = CostLedger()
        mlp_estimate(problem, problem.horizon, np.zeros(d), level, StreamKey(root_seed), ledger)
        checks.append(CostCheck(level, d, ledger, predict_cost(level, d)))
    return CostReport(checks)
