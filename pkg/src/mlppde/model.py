"""Problem definitions: diffusions, nonlinearities, initial values, cost ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class CostLedger:
    """Counts of f-evaluations, g-evaluations and scalar random draws.

    One d-dimensional Gaussian vector counts as d draws, one uniform as 1,
    and one evaluation of g counts once regardless of d.
    """

    f_evals: int = 0
    g_evals: int = 0
    scalar_draws: int = 0

    def merge(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(
            self.f_evals + other.f_evals,
            self.g_evals + other.g_evals,
            self.scalar_draws + other.scalar_draws,
        )

    __add__ = merge

    def absorb(self, other: "CostLedger") -> None:
        self.f_evals += other.f_evals
        self.g_evals += other.g_evals
        self.scalar_draws += other.scalar_draws

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.f_evals, self.g_evals, self.scalar_draws)

    @property
    def total(self) -> int:
        return self.f_evals + self.g_evals + self.scalar_draws


# --- diffusions ------------------------------------------------------------


@dataclass(frozen=True)
class ScaledHeat:
    """X_{s,t,x} = x + sqrt(2) (W_t - W_s): the generator is the Laplacian."""

    name = "heat"
    covered_by_theorem = True

    def transition(self, duration, x, z):
        duration = np.asarray(duration, dtype=float)
        return x + np.sqrt(2.0 * duration)[..., None] * z


@dataclass(frozen=True)
class GeometricBm:
    """Componentwise geometric Brownian motion with drift ``mu`` and volatility ``sigma``."""

    mu: float = 0.0
    sigma: float = 0.2
    name = "gbm"
    # the complexity theorem is stated for the heat semigroup only
    covered_by_theorem = False

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")

    def transition(self, duration, x, z):
        duration = np.asarray(duration, dtype=float)[..., None]
        drift = (self.mu - 0.5 * self.sigma**2) * duration
        return x * np.exp(drift + self.sigma * np.sqrt(duration) * z)


DiffusionModel = ScaledHeat | GeometricBm


def sample_transition(model: DiffusionModel, s: float, t: float, x, draw) -> np.ndarray:
    """Exact-law sample of the diffusion at time ``t`` started from ``x`` at time ``s``.

    ``draw`` is a standard normal vector of the same length as ``x``.
    """
    if s > t:
        raise ValueError(f"start time {s} exceeds end time {t}")
    if s < 0:
        raise ValueError(f"start time must be non-negative, got {s}")
    x = np.asarray(x, dtype=float)
    draw = np.asarray(draw, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("transition start point has non-finite coordinates")
    if draw.shape != x.shape:
        raise ValueError(f"draw shape {draw.shape} does not match point shape {x.shape}")
    if s == t:
        return x.copy()
    return model.transition(t - s, x, draw)


# --- nonlinearities --------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar nonlinearity ``f`` acting on the solution value, vectorized.

    ``lipschitz`` is valid on ``interval`` (the whole line when ``None``).
    With ``clamp`` set, arguments are projected onto ``interval`` before
    ``func`` is applied, which makes ``f`` globally Lipschitz.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lipschitz: float
    interval: Optional[tuple[float, float]] = None
    clamp: bool = False
    u_dependent: bool = True
    params: tuple = ()

    def __post_init__(self):
        if not (self.lipschitz >= 0 and math.isfinite(self.lipschitz)):
            raise ValueError(f"Lipschitz constant must be finite and >= 0, got {self.lipschitz}")
        if self.clamp and self.interval is None:
            raise ValueError("clamping requires a working interval")

    @property
    def globally_lipschitz(self) -> bool:
        return self.interval is None or self.clamp

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.clamp:
            u = np.clip(u, *self.interval)
        return self.func(u)

    def with_clamp(self, clamp: bool = True) -> "Nonlinearity":
        return Nonlinearity(self.name, self.func, self.lipschitz, self.interval, clamp, self.u_dependent, self.params)


def zero() -> Nonlinearity:
    return Nonlinearity("zero", lambda u: np.zeros_like(u), 0.0, u_dependent=False)


def linear(a: float) -> Nonlinearity:
    a = float(a)
    return Nonlinearity(f"linear:{a!r}", lambda u: a * u, abs(a), params=(a,))


def allen_cahn(interval: tuple[float, float] = (-2.0, 2.0), clamp: bool = False) -> Nonlinearity:
    """f(u) = u - u**3; Lipschitz only on bounded sets, hence the working interval."""
    lo, hi = map(float, interval)
    if not lo < hi:
        raise ValueError(f"working interval must satisfy lo < hi, got {interval}")
    # sup of |1 - 3u^2| on [lo, hi] is attained at an endpoint or at u = 0
    candidates = [abs(1.0 - 3.0 * lo * lo), abs(1.0 - 3.0 * hi * hi)]
    if lo <= 0.0 <= hi:
        candidates.append(1.0)
    lip = max(candidates)
    return Nonlinearity("allen-cahn", lambda u: u - u**3, lip, (lo, hi), clamp, params=(lo, hi))


def default_risk(delta: float, R: float, gamma_h: float, gamma_l: float, v_h: float, v_l: float) -> Nonlinearity:
    """Recursive valuation with default risk: f(u) = -(1 - delta) Q(u) u - R u.

    Q is the default intensity: ``gamma_h`` below ``v_h``, ``gamma_l`` above
    ``v_l``, linear in between.
    """
    if not v_h < v_l:
        raise ValueError(f"default-risk thresholds need v_h < v_l, got {v_h}, {v_l}")
    if not gamma_h >= gamma_l >= 0:
        raise ValueError(f"default-risk intensities need gamma_h >= gamma_l >= 0, got {gamma_h}, {gamma_l}")
    if not 0 <= delta <= 1:
        raise ValueError(f"recovery rate delta must lie in [0, 1], got {delta}")
    slope = (gamma_h - gamma_l) / (v_h - v_l)

    def intensity(u):
        return np.clip(gamma_h + slope * (u - v_h), gamma_l, gamma_h)

    def func(u):
        return -(1.0 - delta) * intensity(u) * u - R * u

    # derivative of Q(u) u is Q + Q' u on the ramp, Q elsewhere
    lip = (1.0 - delta) * (gamma_h + abs(slope) * max(abs(v_h), abs(v_l))) + abs(R)
    return Nonlinearity("default-risk", func, lip, params=(delta, R, gamma_h, gamma_l, v_h, v_l))


def parse_nonlinearity(spec: str, clamp: bool = False) -> Nonlinearity:
    """Build a nonlinearity from ``name[:p1,p2,...]``."""
    name, _, arg = spec.partition(":")
    params = [float(p) for p in arg.split(",")] if arg else []
    if name == "zero" and not params:
        return zero()
    if name == "linear" and len(params) == 1:
        return linear(params[0])
    if name == "allen-cahn" and len(params) in (0, 2):
        return allen_cahn(tuple(params) if params else (-2.0, 2.0), clamp)
    if name == "default-risk" and len(params) == 6:
        return default_risk(*params)
    raise ValueError(
        f"unknown nonlinearity {spec!r}; expected zero, linear:a, allen-cahn[:lo,hi] "
        "or default-risk:delta,R,gamma_h,gamma_l,v_h,v_l"
    )


# --- initial values --------------------------------------------------------


@dataclass(frozen=True)
class InitialValue:
    """Vectorized g: maps ``(..., d)`` arrays to ``(...)`` arrays."""

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    bounded: bool = False

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def constant(c: float) -> InitialValue:
    c = float(c)
    return InitialValue(f"constant:{c!r}", lambda x: np.full(x.shape[:-1], c), bounded=True)


def linear_form(a) -> InitialValue:
    a = np.asarray(a, dtype=float)
    return InitialValue("linear:" + ",".join(repr(float(v)) for v in a), lambda x: x @ a)


def parse_initial_value(spec: str) -> InitialValue:
    name, _, arg = spec.partition(":")
    if name == "constant":
        try:
            return constant(float(arg))
        except ValueError:
            raise ValueError(f"constant initial value needs a number, got {spec!r}") from None
    if name == "linear" and arg:
        return linear_form([float(v) for v in arg.split(",")])
    if name in _NAMED_G and not arg:
        return _NAMED_G[name]
    raise ValueError(f"unknown initial value {spec!r}; expected one of constant:<c>, linear:<a1,...>, {', '.join(_NAMED_G)}")


_NAMED_G = {
    "sum": InitialValue("sum", lambda x: x.sum(axis=-1)),
    "norm_sq": InitialValue("norm_sq", lambda x: np.einsum("...i,...i->...", x, x)),
    "log_half_one_plus_normsq": InitialValue(
        "log_half_one_plus_normsq", lambda x: np.log(0.5 * (1.0 + np.einsum("...i,...i->...", x, x)))
    ),
    "min_coord": InitialValue("min_coord", lambda x: x.min(axis=-1)),
    "half_exp_neg_normsq": InitialValue(
        "half_exp_neg_normsq", lambda x: 0.5 * np.exp(-np.einsum("...i,...i->...", x, x)), bounded=True
    ),
}


# --- problem ---------------------------------------------------------------


@dataclass(frozen=True)
class SemilinearProblem:
    """du/dt = (generator of the diffusion) u + f(u), u(0, .) = g on [0, T] x R^d."""

    dimension: int
    horizon: float
    diffusion: DiffusionModel
    nonlinearity: Nonlinearity
    initial_value: InitialValue
    name: str = ""

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension d must be an integer >= 1, got {self.dimension}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon T must be positive and finite, got {self.horizon}")
        if not self.name:
            object.__setattr__(
                self,
                "name",
                f"{self.diffusion.name}/{self.nonlinearity.name}/{self.initial_value.name}",
            )

    @property
    def theorem_notes(self) -> list[str]:
        """Ways in which this instance leaves the setting of the complexity theorem."""
        notes = []
        if not self.diffusion.covered_by_theorem:
            notes.append("extension: diffusion is not the scaled heat semigroup")
        if not self.nonlinearity.globally_lipschitz:
            notes.append("extension: nonlinearity is only locally Lipschitz (empirical run)")
        return notes


def evaluate_f(problem: SemilinearProblem, u, ledger: CostLedger):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("nonlinearity evaluated at a non-finite value")
    ledger.f_evals += u.size
    out = problem.nonlinearity(u)
    return float(out) if out.ndim == 0 else out


def evaluate_g(problem: SemilinearProblem, x, ledger: CostLedger):
    """g at one point (shape ``(d,)``) or a stack of points (``(..., d)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (problem.dimension,):
        raise ValueError(f"point has trailing dimension {x.shape[-1:]}, expected {problem.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial value evaluated at a non-finite point")
    ledger.g_evals += x.size // problem.dimension
    out = problem.initial_value(x)
    return float(out) if np.ndim(out) == 0 else out
