"""Command-line front end: ``mlppde {solve,study,rate,verify-cost,oracle}``.

Options come from (lowest to highest precedence) built-in defaults, the
``MLPPDE_SEED`` environment variable (root seed only), a flat
``key = value`` config file given with ``--config``, and command-line
flags.  Config keys are the long flag names without the leading dashes.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import build_id
from .bench import (
    StudyConfig,
    fit_rate,
    read_summary_csv,
    run_study,
    verify_cost_model,
    write_rows_csv,
    write_summary_csv,
)
from .mlp import DEFAULT_DEPTH_GUARD, MlpLevel, mlp_estimate_parallel
from .model import GeometricBm, ScaledHeat, SemilinearProblem, parse_initial_value, parse_nonlinearity
from .oracles import cole_hopf_hjb, feynman_kac, hopf_hj, ode_picard_oracle, quadrature_fixed_point_1d
from .streams import StreamKey

SUBCOMMANDS = ("solve", "study", "rate", "verify-cost", "oracle")
ORACLES = ("feynman-kac", "cole-hopf", "hopf", "ode", "quadrature")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"key={key}: {message}")
        self.key = key


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_float(p) for p in str(text).split(",") if p.strip())


def _levels(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        n, _, M = part.partition("x")
        out.append((int(n), int(M or n)))
    if not out:
        raise ValueError("empty level list")
    return tuple(out)


# key -> (parser, help)
OPTIONS: dict[str, tuple[Callable[[str], Any], str]] = {
    "problem": (str, "diffusion: heat or gbm"),
    "d": (_int, "spatial dimension (>= 1)"),
    "T": (_float, "time horizon (> 0)"),
    "mu": (_float, "gbm drift"),
    "sigma": (_float, "gbm volatility (> 0)"),
    "f": (str, "nonlinearity: zero, linear:a, allen-cahn[:lo,hi], default-risk:delta,R,gh,gl,vh,vl"),
    "clamp": (_bool, "clamp the nonlinearity argument to its working interval"),
    "g": (str, "initial value: constant:c, sum, norm_sq, log_half_one_plus_normsq, min_coord, half_exp_neg_normsq, linear:a1,.."),
    "t": (_float, "evaluation time in [0, T] (default T)"),
    "x": (_floats, "evaluation point, comma separated or one value for every coordinate (default 0)"),
    "n": (_int, "Picard depth"),
    "M": (_int, "Monte Carlo base"),
    "levels": (_levels, "study levels: comma separated n (diagonal) or nxM"),
    "depth_guard": (_int, "largest admissible Picard depth"),
    "seeds": (_int, "number of independent seeds per study level (>= 2)"),
    "seed": (_int, "root seed (64-bit); falls back to MLPPDE_SEED"),
    "threads": (_int, "worker threads (default: logical processors)"),
    "output": (str, "rows CSV path (study)"),
    "summary": (str, "summary CSV path (study; default derived from --output)"),
    "reference": (str, "study reference: quadrature, ode, feynman-kac, value:<v>, self:n=M=<k>"),
    "input": (str, "summary CSV to fit (rate)"),
    "oracle": (str, "oracle name: " + ", ".join(ORACLES)),
    "samples": (_int, "Monte Carlo samples for oracles (>= 2)"),
    "lam": (_float, "Cole-Hopf lambda (> 0)"),
}

DEFAULTS: dict[str, Any] = {
    "problem": "heat",
    "d": 1,
    "T": 1.0,
    "mu": 0.0,
    "sigma": 0.2,
    "f": "zero",
    "clamp": False,
    "g": "constant:0",
    "t": None,
    "x": (0.0,),
    "n": 2,
    "M": 2,
    "levels": tuple((k, k) for k in range(1, 6)),
    "depth_guard": DEFAULT_DEPTH_GUARD,
    "seeds": 20,
    "seed": 0,
    "threads": None,
    "output": None,
    "summary": None,
    "reference": "quadrature",
    "input": None,
    "oracle": "feynman-kac",
    "samples": 100000,
    "lam": 1.0,
}


@dataclass
class CliConfig:
    subcommand: str
    problem: str
    d: int
    T: float
    mu: float
    sigma: float
    f: str
    clamp: bool
    g: str
    t: float
    x: tuple[float, ...]
    n: int
    M: int
    levels: tuple[tuple[int, int], ...]
    depth_guard: int
    seeds: int
    seed: int
    threads: int
    output: Optional[str]
    summary: Optional[str]
    reference: str
    input: Optional[str]
    oracle: str
    samples: int
    lam: float
    sources: dict[str, str] = field(default_factory=dict)

    def build_problem(self) -> SemilinearProblem:
        diffusion = ScaledHeat() if self.problem == "heat" else GeometricBm(self.mu, self.sigma)
        return SemilinearProblem(
            self.d, self.T, diffusion, parse_nonlinearity(self.f, self.clamp), parse_initial_value(self.g)
        )

    def point(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.x, dtype=float), (self.d,)).copy()

    def echo(self) -> dict[str, str]:
        out = {k: v for k, v in asdict(self).items() if k != "sources"}
        return {k: repr(v) if not isinstance(v, str) else v for k, v in out.items()}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("args", message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlppde", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="subcommand")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, allow_abbrev=False)
        sp.add_argument("--config", default=None, help="flat key = value config file")
        for key, (_, help_text) in OPTIONS.items():
            flags = [f"--{key}"]
            if key == "lam":
                flags.append("--lambda")
            if "_" in key:
                flags.append("--" + key.replace("_", "-"))
            sp.add_argument(*flags, dest=key, default=argparse.SUPPRESS, help=help_text)
    return parser


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key == "lambda":
            key = "lam"
        if not sep:
            raise ConfigError(key or "config", f"line {lineno} of {path} is not of the form key = value")
        if key not in OPTIONS:
            raise ConfigError(key, f"unknown key in {path} line {lineno}")
        values[key] = value.strip()
    return values


def _require(cond: bool, key: str, message: str):
    if not cond:
        raise ConfigError(key, message)


def parse_config(argv: list[str] | None = None, environ: dict | None = None) -> CliConfig:
    """Merge defaults, MLPPDE_SEED, config file and flags, then validate every field."""
    environ = os.environ if environ is None else environ
    args = vars(_build_parser().parse_args(argv))
    subcommand = args.pop("subcommand", None)
    _require(subcommand in SUBCOMMANDS, "subcommand", f"expected one of {', '.join(SUBCOMMANDS)}")
    config_path = args.pop("config", None)

    raw: dict[str, Any] = {}
    sources: dict[str, str] = {}
    if "MLPPDE_SEED" in environ:
        raw["seed"], sources["seed"] = environ["MLPPDE_SEED"], "env"
    if config_path:
        for k, v in read_config_file(config_path).items():
            raw[k], sources[k] = v, "file"
    for k, v in args.items():
        raw[k], sources[k] = v, "flag"

    values = dict(DEFAULTS)
    for key, text in raw.items():
        conv = OPTIONS[key][0]
        try:
            values[key] = conv(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"cannot parse {text!r} ({exc})") from None

    v = values
    _require(v["problem"] in ("heat", "gbm"), "problem", "must be heat or gbm")
    _require(v["d"] >= 1, "d", f"constraint d >= 1 violated (got {v['d']})")
    _require(v["T"] > 0, "T", f"constraint T > 0 violated (got {v['T']})")
    _require(v["sigma"] > 0, "sigma", f"constraint sigma > 0 violated (got {v['sigma']})")
    if v["t"] is None:
        v["t"] = v["T"]
    _require(0 <= v["t"] <= v["T"], "t", f"constraint 0 <= t <= T violated (got t={v['t']}, T={v['T']})")
    _require(len(v["x"]) in (1, v["d"]), "x", f"needs 1 or d={v['d']} coordinates (got {len(v['x'])})")
    _require(v["depth_guard"] >= 0, "depth_guard", "must be >= 0")
    _require(v["n"] >= 0, "n", f"constraint n >= 0 violated (got {v['n']})")
    _require(v["n"] <= v["depth_guard"], "n", f"n={v['n']} exceeds depth_guard={v['depth_guard']}")
    _require(v["M"] >= 1, "M", f"constraint M >= 1 violated (got {v['M']})")
    for n, M in v["levels"]:
        _require(0 <= n <= v["depth_guard"] and M >= 1, "levels", f"invalid level {n}x{M}")
    _require(v["seeds"] >= 2, "seeds", f"constraint seeds >= 2 violated (got {v['seeds']})")
    _require(0 <= v["seed"] < 2**64, "seed", "must be a 64-bit unsigned integer")
    if v["threads"] is None:
        v["threads"] = os.cpu_count() or 1
    _require(v["threads"] >= 1, "threads", f"constraint threads >= 1 violated (got {v['threads']})")
    _require(v["samples"] >= 2, "samples", f"constraint samples >= 2 violated (got {v['samples']})")
    _require(v["lam"] > 0, "lam", f"constraint lambda > 0 violated (got {v['lam']})")
    _require(v["oracle"] in ORACLES, "oracle", f"must be one of {', '.join(ORACLES)}")
    try:
        parse_nonlinearity(v["f"], v["clamp"])
    except ValueError as exc:
        raise ConfigError("f", str(exc)) from None
    try:
        parse_initial_value(v["g"])
    except ValueError as exc:
        raise ConfigError("g", str(exc)) from None
    if subcommand == "rate":
        _require(v["input"] is not None, "input", "rate needs --input <summary.csv>")
    if subcommand == "study":
        _require(v["output"] is not None, "output", "study needs --output <rows.csv>")
        if v["summary"] is None:
            root, ext = os.path.splitext(v["output"])
            v["summary"] = f"{root}_summary{ext or '.csv'}"
    return CliConfig(subcommand=subcommand, sources=sources, **v)


# --- subcommands -----------------------------------------------------------


def _note(problem: SemilinearProblem) -> None:
    for note in problem.theorem_notes:
        print(f"note: {note}", file=sys.stderr)


def _solve(cfg: CliConfig) -> int:
    problem = cfg.build_problem()
    _note(problem)
    level = MlpLevel(cfg.n, cfg.M, cfg.depth_guard)
    rec = mlp_estimate_parallel(problem, cfg.t, cfg.point(), level, StreamKey(cfg.seed), cfg.threads)
    print(f"estimate = {rec.value!r}")
    print(f"f_evals = {rec.ledger.f_evals}")
    print(f"g_evals = {rec.ledger.g_evals}")
    print(f"scalar_draws = {rec.ledger.scalar_draws}")
    print(f"wall_time_s = {rec.wall_time:.6f}")
    print(f"root_seed = {cfg.seed}")
    print(f"threads = {rec.threads}")
    print(f"problem = {problem.name}")
    return 0


def _study(cfg: CliConfig) -> int:
    problem = cfg.build_problem()
    _note(problem)
    study = StudyConfig(
        problem=problem,
        t=cfg.t,
        x=cfg.point(),
        levels=[MlpLevel(n, M, cfg.depth_guard) for n, M in cfg.levels],
        seeds=cfg.seeds,
        reference=cfg.reference,
        root_seed=cfg.seed,
    )
    result = run_study(study)
    meta = {"config": " ".join(f"{k}={v}" for k, v in cfg.echo().items())}
    write_rows_csv(result, cfg.output, meta)
    write_summary_csv(result, cfg.summary, meta)
    print(f"reference = {result.reference!r} ({result.reference_note})")
    print("n,M,rmse,mean_cost_total,slope_fit_running")
    for s in result.summary:
        slope = "" if math.isnan(s.slope_running) else f"{s.slope_running:.4f}"
        print(f"{s.level.n},{s.level.M},{s.rmse:.6e},{s.mean_cost:.1f},{slope}")
    print(f"rows written to {cfg.output}; summary written to {cfg.summary}")
    return 0


def _rate(cfg: CliConfig) -> int:
    slope, intercept, r2 = fit_rate(read_summary_csv(cfg.input))
    print(f"slope = {slope!r}")
    print(f"intercept = {intercept!r}")
    print(f"r_squared = {r2!r}")
    return 0


def _verify_cost(cfg: CliConfig) -> int:
    levels = [MlpLevel(cfg.n, cfg.M, cfg.depth_guard)]
    if cfg.sources.get("levels") in ("flag", "file"):
        levels = [MlpLevel(n, M, cfg.depth_guard) for n, M in cfg.levels]
    report = verify_cost_model(levels, cfg.d, root_seed=cfg.seed)
    print(report)
    return 0 if report.passed else 1


def _oracle(cfg: CliConfig) -> int:
    problem = cfg.build_problem()
    x = cfg.point()
    key = StreamKey(cfg.seed)
    if cfg.oracle == "feynman-kac":
        est = feynman_kac(problem, cfg.t, x, cfg.samples, key)
        print(f"value = {est.mean!r}\nstd_error = {est.std_error!r}\nsamples = {est.samples}")
    elif cfg.oracle == "cole-hopf":
        est = cole_hopf_hjb(problem.initial_value, cfg.lam, cfg.T - cfg.t, x, cfg.samples, key)
        print(f"value = {est.mean!r}\nstd_error = {est.std_error!r}\nsamples = {est.samples}")
    elif cfg.oracle == "hopf":
        # quadratic Hamiltonian H(p) = |p|^2 / 2, which is its own conjugate
        value = hopf_hj(problem.initial_value, lambda q: 0.5 * float(q @ q), cfg.t, x)
        print(f"value = {value!r}")
    elif cfg.oracle == "ode":
        g0 = float(problem.initial_value(x))
        print(f"value = {ode_picard_oracle(problem.nonlinearity, g0, cfg.t, cfg.n)!r}")
    else:
        sol = quadrature_fixed_point_1d(problem)
        idx = int(round(cfg.t / cfg.T * (len(sol.times) - 1)))
        print(f"value = {sol.at(float(x[0]), idx)!r}\ntime = {float(sol.times[idx])!r}\niterations = {sol.iterations}")
    return 0


_DISPATCH = {"solve": _solve, "study": _study, "rate": _rate, "verify-cost": _verify_cost, "oracle": _oracle}


def run(cfg: CliConfig) -> int:
    return _DISPATCH[cfg.subcommand](cfg)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"mlppde: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    print(f"# build: {build_id()}", file=sys.stderr)
    try:
        return run(cfg)
    except (ValueError, RuntimeError, OverflowError, OSError) as exc:
        print(f"mlppde: error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
