"""Full-history-recursive multilevel Picard (MLP) estimator.

The estimator of depth ``n`` with Monte Carlo base ``M`` at ``(t, x)`` and
index ``theta`` is

    U_n(t, x) = sum_{k=1}^{n-1} t / M^(n-k) * sum_{m=1}^{M^(n-k)}
                    [ f(U_k^{(theta,k,m)}(tR, X)) - f(U_{k-1}^{(theta,-k,m)}(tR, X)) ]
              + 1{n>0} / M^n * sum_{m=1}^{M^n} [ g(X^{(theta,0,-m)}_{0,t,x}) + t f(0) ]

with ``R = R^{(theta,k,m)}`` uniform on [0, 1] and ``X = X^{(theta,k,m)}_{tR,t,x}``
shared by both nested estimators of a level summand.

Stream layout: terminal summand ``m`` draws its Gaussian vector from key
``theta/0/-m``; level summand ``(k, m)`` uses key ``theta/k/m`` with the
uniform in slot 0 and the Gaussian vector in slot 1, and its nested
estimators are rooted at ``theta/k/m`` and ``theta/-k/m``.

Evaluation is vectorized over independent summands (and over independent
estimates in :func:`mlp_estimate_batch`).  Every summand value depends
only on its own key, so batching and chunking never change a result, and
per-estimate reductions always see the complete summand vector in index
order.  Peak memory is bounded by ``chunk_size`` array elements per
recursion depth rather than by the total sample count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import streams
from .model import CostLedger, SemilinearProblem, evaluate_f, evaluate_g
from .streams import StreamKey

DEFAULT_DEPTH_GUARD = 10
DEFAULT_CHUNK = 1 << 18
_U64_MAX = (1 << 64) - 1


class NonFiniteEstimate(FloatingPointError):
    """An intermediate estimate left the finite range (f left its working interval)."""


@dataclass(frozen=True)
class MlpLevel:
    n: int
    M: int
    depth_guard: int = field(default=DEFAULT_DEPTH_GUARD, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"Picard depth n must be a non-negative integer, got {self.n}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"Monte Carlo base M must be a positive integer, got {self.M}")
        if self.n > self.depth_guard:
            raise ValueError(f"Picard depth n={self.n} exceeds depth guard {self.depth_guard}")
        if self.M**self.n > _U64_MAX:
            raise OverflowError(f"M^n = {self.M}^{self.n} does not fit in 64 bits")


@dataclass
class EstimateRecord:
    value: float
    level: MlpLevel
    ledger: CostLedger
    wall_time: float
    root_seed: int
    problem_id: str
    evaluation_point: tuple[float, tuple[float, ...]]
    key_path: tuple[int, ...] = ()
    threads: int = 1
    notes: list[str] = field(default_factory=list)


# --- recursion -------------------------------------------------------------


def _mean_rows(values: np.ndarray) -> np.ndarray:
    """Row means computed as ``v0 + mean(v - v0)``.

    Rows of identical entries return that entry bit-exactly, which the
    plain ``sum / K`` does not guarantee.
    """
    first = values[:, :1]
    return first[:, 0] + np.sum(values - first, axis=1) / values.shape[1]


@dataclass
class _Context:
    problem: SemilinearProblem
    M: int
    chunk: int
    hoist_f0: bool


def _terminal_block(ctx: _Context, t, x, states, n, m_lo, m_hi, ledger) -> np.ndarray:
    """Terminal summands ``m_lo..m_hi-1`` (1-based) for every batch row, shape ``(B, m_hi - m_lo)``."""
    problem = ctx.problem
    B, d = x.shape
    K = m_hi - m_lo
    comps = -np.arange(m_lo, m_hi, dtype=np.int64)
    base = streams.derive_states(states, 0)
    out = np.empty((B, K))
    if ctx.hoist_f0:
        f0 = evaluate_f(problem, 0.0, ledger)
    rows = max(1, ctx.chunk // d)
    flat = B * K
    for r0 in range(0, flat, rows):
        r1 = min(flat, r0 + rows)
        bi, mi = np.divmod(np.arange(r0, r1), K)
        keys = streams.derive_states(base[bi], comps[mi])
        z = streams.gaussians(keys, 1, d, ledger)
        tt = t[bi]
        gx = evaluate_g(problem, problem.diffusion.transition(tt, x[bi], z), ledger)
        if not ctx.hoist_f0:
            f0 = evaluate_f(problem, np.zeros(r1 - r0), ledger)
        out.reshape(-1)[r0:r1] = gx + tt * f0
    return out


def _level_block(ctx: _Context, t, x, states, k, m_lo, m_hi, ledger) -> np.ndarray:
    """Level-``k`` summand differences for ``m_lo..m_hi-1``, shape ``(B, m_hi - m_lo)``."""
    problem = ctx.problem
    B, d = x.shape
    K = m_hi - m_lo
    comps = np.arange(m_lo, m_hi, dtype=np.int64)
    pos = streams.derive_states(states, k)
    neg = streams.derive_states(states, -k)
    out = np.empty((B, K))
    # a nested level-k estimate touches about M^k Gaussian vectors of length d
    rows = max(1, ctx.chunk // (d * ctx.M**k))
    flat = B * K
    for r0 in range(0, flat, rows):
        r1 = min(flat, r0 + rows)
        bi, mi = np.divmod(np.arange(r0, r1), K)
        hi_keys = streams.derive_states(pos[bi], comps[mi])
        lo_keys = streams.derive_states(neg[bi], comps[mi])
        R = streams.uniforms(hi_keys, 0, ledger)
        z = streams.gaussians(hi_keys, 1, d, ledger)
        tt = t[bi]
        s = tt * R
        X = problem.diffusion.transition(tt - s, x[bi], z)
        u_hi = _estimate(ctx, s, X, hi_keys, k, ledger)
        u_lo = _estimate(ctx, s, X, lo_keys, k - 1, ledger)
        diff = evaluate_f(problem, u_hi, ledger) - evaluate_f(problem, u_lo, ledger)
        out.reshape(-1)[r0:r1] = diff
    return out


def _combine(t, n, M, terminal, levels) -> np.ndarray:
    acc = np.zeros(terminal.shape[0])
    for k in range(1, n):
        acc = acc + t * _mean_rows(levels[k])
    return acc + _mean_rows(terminal)


def _estimate(ctx: _Context, t, x, states, n, ledger) -> np.ndarray:
    B = x.shape[0]
    if n == 0:
        return np.zeros(B)
    M = ctx.M
    levels = {k: _level_block(ctx, t, x, states, k, 1, M ** (n - k) + 1, ledger) for k in range(1, n)}
    terminal = _terminal_block(ctx, t, x, states, n, 1, M**n + 1, ledger)
    value = _combine(t, n, M, terminal, levels)
    if not np.all(np.isfinite(value)):
        raise NonFiniteEstimate(
            f"non-finite level-{n} estimate; the nonlinearity likely left its working interval"
        )
    return value


# --- public API ------------------------------------------------------------


def _check_inputs(problem: SemilinearProblem, t, x, level: MlpLevel):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t < 0) or np.any(t > problem.horizon):
        raise ValueError(f"evaluation time must lie in [0, T={problem.horizon}]")
    if x.shape[-1] != problem.dimension:
        raise ValueError(f"point has dimension {x.shape[-1]}, expected {problem.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point has non-finite coordinates")
    if level.n > level.depth_guard:
        raise ValueError(f"Picard depth n={level.n} exceeds depth guard {level.depth_guard}")
    return t, x


def mlp_estimate(
    problem: SemilinearProblem,
    t: float,
    x,
    level: MlpLevel,
    key: StreamKey,
    ledger: CostLedger | None = None,
    *,
    hoist_f0: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> float:
    """One realization of the MLP estimator U_{n,M}^{key}(t, x)."""
    t, x = _check_inputs(problem, t, x, level)
    if t.ndim != 0 or x.ndim != 1:
        raise ValueError("mlp_estimate takes a scalar time and a single point; see mlp_estimate_batch")
    ledger = ledger if ledger is not None else CostLedger()
    ctx = _Context(problem, level.M, chunk_size, hoist_f0)
    return float(_estimate(ctx, t[None], x[None, :], key.as_array(), level.n, ledger)[0])


def mlp_estimate_batch(
    problem: SemilinearProblem,
    t,
    x,
    level: MlpLevel,
    keys,
    ledger: CostLedger | None = None,
    *,
    hoist_f0: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Independent estimates, one per key; element ``i`` equals ``mlp_estimate(..., keys[i])``.

    ``t`` and ``x`` broadcast against the keys (``x`` has trailing axis d).
    """
    states = streams.states_of(keys)
    B = states.shape[0]
    t, x = _check_inputs(problem, t, x, level)
    t = np.broadcast_to(t, (B,)).astype(float)
    x = np.broadcast_to(x, (B, problem.dimension)).astype(float)
    ledger = ledger if ledger is not None else CostLedger()
    ctx = _Context(problem, level.M, chunk_size, hoist_f0)
    return _estimate(ctx, t, x, states, level.n, ledger)


def _partition(total: int, parts: int) -> list[tuple[int, int]]:
    bounds = np.linspace(1, total + 1, min(parts, total) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def mlp_estimate_parallel(
    problem: SemilinearProblem,
    t: float,
    x,
    level: MlpLevel,
    key: StreamKey,
    threads: int | None = None,
    *,
    hoist_f0: bool = False,
    chunk_size: int = DEFAULT_CHUNK,
) -> EstimateRecord:
    """Same value and ledger as :func:`mlp_estimate`, outer summands split across threads.

    Each worker fills a contiguous index block of one summand family with
    a private ledger; blocks are reassembled in index order before the
    reduction, so the result does not depend on ``threads``.
    """
    threads = threads or os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads}")
    t_arr, x_arr = _check_inputs(problem, t, x, level)
    if t_arr.ndim != 0 or x_arr.ndim != 1:
        raise ValueError("mlp_estimate_parallel takes a scalar time and a single point")
    ctx = _Context(problem, level.M, chunk_size, hoist_f0)
    n, M = level.n, level.M
    tt, xx, states = t_arr[None], x_arr[None, :], key.as_array()

    tasks = []
    if n > 0:
        tasks += [(0, a, b) for a, b in _partition(M**n, threads)]
        for k in range(1, n):
            tasks += [(k, a, b) for a, b in _partition(M ** (n - k), threads)]

    def work(task):
        family, a, b = task
        led = CostLedger()
        if family == 0:
            block = _terminal_block(ctx, tt, xx, states, n, a, b, led)
        else:
            block = _level_block(ctx, tt, xx, states, family, a, b, led)
        return block, led

    start = time.perf_counter()
    if threads == 1:
        results = [work(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    ledger = CostLedger()
    for _, led in results:
        ledger = ledger.merge(led)
    if n == 0:
        value = 0.0
    else:
        blocks: dict[int, list[np.ndarray]] = {}
        for (family, _, _), (block, _) in zip(tasks, results):
            blocks.setdefault(family, []).append(block)
        terminal = np.concatenate(blocks[0], axis=1)
        levels = {k: np.concatenate(blocks[k], axis=1) for k in range(1, n)}
        v = _combine(tt, n, M, terminal, levels)
        if not np.all(np.isfinite(v)):
            raise NonFiniteEstimate(f"non-finite level-{n} estimate")
        value = float(v[0])
    wall = time.perf_counter() - start
    return EstimateRecord(
        value=value,
        level=level,
        ledger=ledger,
        wall_time=wall,
        root_seed=key.root_seed,
        problem_id=problem.name,
        evaluation_point=(float(t_arr), tuple(float(c) for c in x_arr)),
        key_path=key.path,
        threads=threads,
        notes=problem.theorem_notes,
    )


@lru_cache(maxsize=None)
def _cost(n: int, M: int, d: int) -> tuple[int, int, int]:
    if n == 0:
        return (0, 0, 0)
    f = g = M**n
    draws = M**n * d
    for k in range(1, n):
        hi, lo = _cost(k, M, d), _cost(k - 1, M, d)
        w = M ** (n - k)
        f += w * (2 + hi[0] + lo[0])
        g += w * (hi[1] + lo[1])
        draws += w * (d + 1 + hi[2] + lo[2])
    return (f, g, draws)


def predict_cost(level: MlpLevel, d: int) -> CostLedger:
    """Analytic cost of one realization of U_{n,M} in dimension ``d``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    counts = _cost(level.n, level.M, d)
    if max(counts) > _U64_MAX:
        raise OverflowError(f"predicted cost {counts} overflows 64-bit counters")
    return CostLedger(*counts)


def theorem_schedule(epsilon: float) -> MlpLevel:
    """Diagonal schedule n = M = ceil(log(1/epsilon)) + 1.

    Heuristic: the complexity result only asserts that some such schedule exists.
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    n = math.ceil(math.log(1.0 / epsilon)) + 1
    return MlpLevel(n, n)
