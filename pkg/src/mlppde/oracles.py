"""Reference solvers used to check the MLP estimator.

Linear Feynman-Kac Monte Carlo, the Cole-Hopf formula for the quadratic
HJB equation, the Hopf formula for first-order Hamilton-Jacobi equations,
a deterministic Picard iteration for the x-independent ODE, and a 1-d
quadrature discretization of the mild fixed-point equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Chebyshev
from scipy import optimize
from scipy.interpolate import CubicSpline

from . import streams
from .model import CostLedger, InitialValue, ScaledHeat, SemilinearProblem, evaluate_g
from .streams import StreamKey

_CHUNK = 1 << 20


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    samples: int


def _mc_summary(values: np.ndarray) -> McEstimate:
    # shifted moments: constant samples give the constant and a zero error exactly
    first = values[0]
    dev = values - first
    mean = first + dev.mean()
    se = dev.std(ddof=1) / math.sqrt(values.size)
    return McEstimate(float(mean), float(se), int(values.size))


def feynman_kac(
    problem: SemilinearProblem,
    t: float,
    x,
    samples: int,
    key: StreamKey,
    ledger: CostLedger | None = None,
    source: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    substeps: int | None = None,
) -> McEstimate:
    """Monte Carlo for u(t, x) = E[g(X_t) + int_0^t source(t - r, X_r) dr].

    The problem's nonlinearity must not depend on u.  ``source(s, y)`` is
    vectorized over rows of ``y``; its time integral uses the midpoint rule
    on ``substeps`` equal sub-intervals (default 1, or 4 with a source).
    Sample ``i`` uses key ``key/i``: slot ``j + 1`` holds the Gaussian
    increment of the ``j``-th path segment.
    """
    if problem.nonlinearity.u_dependent:
        raise ValueError("feynman_kac needs a u-independent problem; use mlp_estimate for nonlinear f")
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples}")
    if not 0 <= t <= problem.horizon:
        raise ValueError(f"evaluation time must lie in [0, T={problem.horizon}]")
    ledger = ledger if ledger is not None else CostLedger()
    d = problem.dimension
    x = np.asarray(x, dtype=float).reshape(d)
    K = substeps or (4 if source is not None else 1)
    h = t / K
    if source is None:
        durations = [t]
    else:
        # path times: midpoints (j + 1/2) h, then t
        durations = [0.5 * h] + [h] * (K - 1) + [0.5 * h]
    rows = max(1, _CHUNK // d)
    values = np.empty(samples)
    for r0 in range(0, samples, rows):
        r1 = min(samples, r0 + rows)
        keys = streams.child_states(key, range(r0, r1))
        X = np.broadcast_to(x, (r1 - r0, d))
        integral = np.zeros(r1 - r0)
        for j, dur in enumerate(durations):
            z = streams.gaussians(keys, j + 1, d, ledger)
            X = problem.diffusion.transition(np.full(r1 - r0, dur), X, z)
            if source is not None and j < K:
                r = (j + 0.5) * h
                integral += h * np.asarray(source(np.full(r1 - r0, t - r), X), dtype=float)
                ledger.f_evals += r1 - r0
        values[r0:r1] = evaluate_g(problem, X, ledger) + integral
    return _mc_summary(values)


def cole_hopf_hjb(
    g: InitialValue,
    lam: float,
    tau: float,
    x,
    samples: int,
    key: StreamKey,
    ledger: CostLedger | None = None,
) -> McEstimate:
    """u = -(1/lam) ln E[exp(-lam g(x + sqrt(2) W_tau))] by Monte Carlo.

    The exponent is shifted by the smallest sampled g, so exp never
    overflows; the standard error of the log is propagated by the delta
    method.  g must be bounded below for the expectation to exist.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if tau < 0:
        raise ValueError(f"time-to-go must be non-negative, got {tau}")
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples}")
    ledger = ledger if ledger is not None else CostLedger()
    x = np.asarray(x, dtype=float).ravel()
    d = x.size
    heat = ScaledHeat()
    rows = max(1, _CHUNK // d)
    gvals = np.empty(samples)
    for r0 in range(0, samples, rows):
        r1 = min(samples, r0 + rows)
        keys = streams.child_states(key, range(r0, r1))
        z = streams.gaussians(keys, 1, d, ledger)
        gvals[r0:r1] = g(heat.transition(np.full(r1 - r0, tau), x, z))
    ledger.g_evals += samples
    if not np.all(np.isfinite(gvals)):
        raise OracleError("g produced non-finite values; rescale g or reduce lambda")
    gmin = gvals.min()
    y = np.exp(-lam * (gvals - gmin))
    est = _mc_summary(y)
    if not est.mean > 0:
        raise OracleError("exponential moment underflowed; rescale g or reduce lambda")
    return McEstimate(
        float(gmin - math.log(est.mean) / lam),
        est.std_error / (lam * est.mean),
        samples,
    )


class HopfConvergenceError(OracleError):
    def __init__(self, message: str, best_value: float, best_point: np.ndarray):
        super().__init__(f"{message} (best value {best_value!r})")
        self.best_value = best_value
        self.best_point = best_point


def hopf_hj(
    g: Callable[[np.ndarray], float],
    h_star: Callable[[np.ndarray], float],
    t: float,
    x,
    *,
    grad_g: Callable | None = None,
    grad_h_star: Callable | None = None,
    starts: int = 16,
    spread: float = 1.0,
    gtol: float = 1e-8,
    max_iter: int = 1000,
    accept_gtol: float = 1e-6,
    key: StreamKey | None = None,
) -> float:
    """inf_y g(y) + t H*((x - y)/t) by multi-start BFGS.

    Starts are ``x`` itself plus a Gaussian cloud of radius ``spread``
    around it.  A start counts as converged when the final gradient norm
    is below ``accept_gtol``; if none does, HopfConvergenceError carries
    the best value seen.
    """
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    x = np.asarray(x, dtype=float).ravel()
    d = x.size

    def objective(y):
        return float(g(y)) + t * float(h_star((x - y) / t))

    jac = None
    if grad_g is not None and grad_h_star is not None:

        def jac(y):
            return np.asarray(grad_g(y), dtype=float) - np.asarray(grad_h_star((x - y) / t), dtype=float)

    key = key if key is not None else StreamKey(0, (0,))
    cloud = streams.gaussians(streams.child_states(key, range(starts - 1)), 1, d) * spread
    candidates = [x] + [x + c for c in cloud]
    best_val, best_pt, converged = math.inf, x, False
    for y0 in candidates:
        res = optimize.minimize(objective, y0, jac=jac, method="BFGS", options={"gtol": gtol, "maxiter": max_iter})
        grad = res.jac if jac is None else jac(res.x)
        ok = np.isfinite(res.fun) and np.linalg.norm(grad) <= accept_gtol
        if ok and (not converged or res.fun < best_val):
            best_val, best_pt, converged = float(res.fun), res.x, True
        elif not converged and res.fun < best_val:
            best_val, best_pt = float(res.fun), res.x
    if not converged:
        raise HopfConvergenceError("no start reached the gradient tolerance", best_val, best_pt)
    return best_val


def ode_picard_oracle(
    f: Callable[[np.ndarray], np.ndarray],
    g0: float,
    t: float,
    n: int,
    tol: float = 1e-12,
    max_degree: int = 512,
) -> float:
    """n-th Picard iterate of v' = f(v), v(0) = g0, evaluated at ``t``.

    v_0 = 0 and v_k(s) = g0 + int_0^s f(v_{k-1}(r)) dr.  Each iterate is
    stored as a Chebyshev interpolant on [0, t] whose degree is doubled
    until the trailing coefficients drop below ``tol``; the integral is
    exact on that polynomial.
    """
    if n < 0:
        raise ValueError(f"depth must be non-negative, got {n}")
    if n == 0:
        return 0.0
    if t == 0:
        return float(g0)
    domain = [0.0, t]
    v = Chebyshev([0.0], domain=domain)
    for _ in range(n):
        prev = v
        deg = 8
        while True:
            integrand = Chebyshev.interpolate(lambda s: np.asarray(f(prev(s)), dtype=float), deg, domain=domain)
            scale = max(1.0, np.abs(integrand.coef).max())
            if np.abs(integrand.coef[-2:]).max() <= tol * scale or deg >= max_degree:
                break
            deg *= 2
        v = integrand.integ(lbnd=0.0) + g0
    return float(v(t))


@dataclass
class QuadratureSolution:
    times: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    iterations: int
    residual: float

    def at(self, x: float, time_index: int = -1) -> float:
        """Cubic-spline interpolation of u(times[time_index], .) at ``x``."""
        return float(CubicSpline(self.grid, self.values[time_index])(x))


def _hermite_operator(grid: np.ndarray, tau: float, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Matrix taking grid values of v to E[v(x_p + sqrt(2) W_tau)] at the grid points."""
    P = grid.size
    if tau == 0:
        return np.eye(P)
    pts = grid[:, None] + 2.0 * math.sqrt(tau) * nodes[None, :]
    pts = np.clip(pts, grid[0], grid[-1])
    basis = CubicSpline(grid, np.eye(P))(pts.ravel()).reshape(P, nodes.size, P)
    return np.einsum("q,pqj->pj", weights, basis)


def quadrature_fixed_point_1d(
    problem: SemilinearProblem,
    time_steps: int = 150,
    space_points: int = 161,
    space_radius: float = 8.0,
    picard_iters: int = 60,
    nodes: int = 64,
    tol: float = 1e-9,
) -> QuadratureSolution:
    """Picard iteration for u(t, x) = E[g(x + sqrt2 W_t)] + int_0^t E[f(u(s, x + sqrt2 W_{t-s}))] ds in d = 1.

    Spatial expectations use Gauss-Hermite quadrature with cubic-spline
    interpolation between grid points (constant extension beyond the
    grid); the time integral uses the trapezoid rule on a uniform grid of
    [0, T].  Iteration starts from u = 0 and stops once successive
    iterates differ by less than ``tol`` in sup norm.
    """
    if problem.dimension != 1:
        raise ValueError("quadrature oracle is one-dimensional")
    if not isinstance(problem.diffusion, ScaledHeat):
        raise ValueError("quadrature oracle needs the scaled heat diffusion")
    if space_points % 2 == 0:
        raise ValueError("space_points must be odd so that x = 0 is a grid point")
    T = problem.horizon
    N = time_steps
    h = T / N
    times = np.linspace(0.0, T, N + 1)
    grid = np.linspace(-space_radius, space_radius, space_points)
    xi, w = np.polynomial.hermite.hermgauss(nodes)
    w = w / math.sqrt(math.pi)
    ops = np.stack([_hermite_operator(grid, k * h, xi, w) for k in range(N + 1)])
    # free term with g evaluated at the quadrature points, not interpolated
    G = np.empty((N + 1, space_points))
    for i, s in enumerate(times):
        pts = grid[:, None] + 2.0 * math.sqrt(s) * xi[None, :]
        G[i] = problem.initial_value(pts[..., None]) @ w
    f = problem.nonlinearity
    u = np.zeros((N + 1, space_points))
    residual = math.inf
    for it in range(1, picard_iters + 1):
        F = f(u)
        S = np.zeros_like(u)
        for k in range(N + 1):
            S[k:] += F[: N + 1 - k] @ ops[k].T
        # trapezoid weights 1/2 on the j = 0 and j = i endpoints
        S -= 0.5 * np.einsum("ipj,j->ip", ops, F[0])
        S -= 0.5 * F
        S[0] = 0.0
        new = G + h * S
        residual = float(np.abs(new - u).max())
        u = new
        if residual < tol:
            return QuadratureSolution(times, grid, u, it, residual)
    raise OracleError(f"quadrature Picard iteration did not converge: residual {residual:.3e} after {picard_iters} iterations")
