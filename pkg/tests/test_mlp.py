import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_problem
from mlppde.mlp import (
    MlpLevel,
    NonFiniteEstimate,
    mlp_estimate,
    mlp_estimate_batch,
    mlp_estimate_parallel,
    predict_cost,
    theorem_schedule,
)
from mlppde.model import (
    CostLedger,
    GeometricBm,
    Nonlinearity,
    ScaledHeat,
    SemilinearProblem,
    constant,
    linear,
    parse_initial_value,
    zero,
)
from mlppde.oracles import ode_picard_oracle
from mlppde.streams import StreamKey, child_states


def test_depth_zero_is_zero(allen_cahn_1d):
    led = CostLedger()
    assert mlp_estimate(allen_cahn_1d, 0.3, [0.4], MlpLevel(0, 7), StreamKey(1), led) == 0.0
    assert led.as_tuple() == (0, 0, 0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 3, 10]),
    st.floats(-1e3, 1e3, allow_subnormal=False), st.floats(0, 2), st.integers(0, 2**64 - 1),
)
def test_degenerate_problem_returns_constant(n, M, d, c, t, seed):
    prob = constant_problem(d, c, T=2.0)
    x = np.linspace(-1, 1, d)
    assert mlp_estimate(prob, t, x, MlpLevel(n, M), StreamKey(seed)) == c


def test_time_zero_returns_initial_value(rng):
    prob = SemilinearProblem(5, 1.0, ScaledHeat(), linear(2.0), parse_initial_value("log_half_one_plus_normsq"))
    for _ in range(20):
        x = rng.normal(size=5) * 3
        got = mlp_estimate(prob, 0.0, x, MlpLevel(3, 3), StreamKey(int(rng.integers(2**63))))
        assert got == prob.initial_value(x)


def test_martingale_terminal_term():
    """f = 0, g(x) = x: E[x + sqrt2 W_1] = x, over 100 seeds at M = 1e4."""
    prob = SemilinearProblem(1, 1.0, ScaledHeat(), zero(), parse_initial_value("sum"))
    vals = np.array([mlp_estimate(prob, 1.0, [2.0], MlpLevel(1, 10**4), StreamKey(99, (s,))) for s in range(100)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 2.0) < 4 * se


@pytest.mark.parametrize(
    "a, t, n, M",
    [(1.0, 1.0, 3, 2), (-0.5, 0.8, 2, 3), (1.5, 0.6, 4, 2)],
)
def test_mean_matches_picard_iterate_for_linear_f(a, t, n, M):
    prob = SemilinearProblem(1, 1.0, ScaledHeat(), linear(a), constant(1.0))
    keys = child_states(StreamKey(2718), range(40000))
    vals = mlp_estimate_batch(prob, t, [0.0], MlpLevel(n, M), keys)
    expected = ode_picard_oracle(lambda u: a * u, 1.0, t, n)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - expected) < 4 * se


def test_closed_form_picard_iterate_value():
    # u' = u, u(0) = 1: third iterate is 1 + t + t^2/2
    assert ode_picard_oracle(lambda u: u, 1.0, 1.0, 3) == pytest.approx(2.5, abs=1e-13)


def test_batch_matches_single_estimates(allen_cahn_1d):
    keys = [StreamKey(5, (i,)) for i in range(6)]
    xs = np.linspace(-1, 1, 6)[:, None]
    batch = mlp_estimate_batch(allen_cahn_1d, 0.25, xs, MlpLevel(3, 3), keys)
    single = [mlp_estimate(allen_cahn_1d, 0.25, xs[i], MlpLevel(3, 3), keys[i]) for i in range(6)]
    assert batch.tolist() == single


def test_chunking_does_not_change_results(allen_cahn_1d):
    key = StreamKey(31)
    led_a, led_b = CostLedger(), CostLedger()
    a = mlp_estimate(allen_cahn_1d, 0.3, [0.0], MlpLevel(4, 3), key, led_a)
    b = mlp_estimate(allen_cahn_1d, 0.3, [0.0], MlpLevel(4, 3), key, led_b, chunk_size=7)
    assert a == b and led_a == led_b


def test_gbm_estimates_run_and_count():
    prob = SemilinearProblem(3, 1.0, GeometricBm(0.02, 0.3), linear(-0.05), parse_initial_value("min_coord"))
    led = CostLedger()
    v = mlp_estimate(prob, 1.0, np.full(3, 100.0), MlpLevel(3, 3), StreamKey(4), led)
    assert math.isfinite(v) and 0 < v < 100
    assert led == predict_cost(MlpLevel(3, 3), 3)


def test_hoisting_f0_keeps_value_and_saves_evaluations(allen_cahn_1d):
    led_a, led_b = CostLedger(), CostLedger()
    a = mlp_estimate(allen_cahn_1d, 0.3, [0.0], MlpLevel(3, 2), StreamKey(8), led_a)
    b = mlp_estimate(allen_cahn_1d, 0.3, [0.0], MlpLevel(3, 2), StreamKey(8), led_b, hoist_f0=True)
    assert a == b
    assert led_b.f_evals < led_a.f_evals
    assert led_a == predict_cost(MlpLevel(3, 2), 1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_errors(allen_cahn_1d):
    with pytest.raises(ValueError):
        MlpLevel(11, 2)
    MlpLevel(11, 2, depth_guard=12)
    with pytest.raises(ValueError):
        mlp_estimate(allen_cahn_1d, 0.5, [0.0], MlpLevel(2, 2), StreamKey(0))
    with pytest.raises(ValueError):
        mlp_estimate(allen_cahn_1d, 0.1, [np.inf], MlpLevel(2, 2), StreamKey(0))
    explode = Nonlinearity("exp", np.exp, 1.0, interval=(-1.0, 1.0))
    prob = SemilinearProblem(1, 1.0, ScaledHeat(), explode, constant(1000.0))
    with pytest.raises((NonFiniteEstimate, ValueError)):
        mlp_estimate(prob, 1.0, [0.0], MlpLevel(3, 2), StreamKey(0))


def test_predict_cost_examples():
    assert predict_cost(MlpLevel(0, 4), 9).as_tuple() == (0, 0, 0)
    assert predict_cost(MlpLevel(1, 5), 3).as_tuple() == (5, 5, 15)
    assert predict_cost(MlpLevel(2, 2), 1).as_tuple() == (12, 8, 12)


def _brute_force_cost(n, M, d):
    """Count by walking the recursion summand by summand."""
    if n == 0:
        return np.zeros(3, dtype=object)
    total = np.zeros(3, dtype=object)
    for _ in range(M**n):
        total += np.array([1, 1, d], dtype=object)
    for k in range(1, n):
        for _ in range(M ** (n - k)):
            total += np.array([2, 0, d + 1], dtype=object)
            total += _brute_force_cost(k, M, d) + _brute_force_cost(k - 1, M, d)
    return total


@pytest.mark.parametrize("n, M, d", [(1, 3, 2), (2, 2, 1), (3, 2, 5), (3, 3, 1), (4, 2, 3)])
def test_predict_cost_matches_brute_force_count(n, M, d):
    assert predict_cost(MlpLevel(n, M), d).as_tuple() == tuple(_brute_force_cost(n, M, d))


@pytest.mark.parametrize("n, M", [(1, 1), (2, 3), (3, 2), (4, 3)])
@pytest.mark.parametrize("d", [1, 10])
def test_measured_ledger_equals_prediction(n, M, d):
    prob = SemilinearProblem(d, 1.0, ScaledHeat(), linear(0.5), parse_initial_value("half_exp_neg_normsq"))
    led = CostLedger()
    mlp_estimate(prob, 0.7, np.zeros(d), MlpLevel(n, M), StreamKey(3), led)
    assert led == predict_cost(MlpLevel(n, M), d)


def test_predict_cost_monotone_and_affine_in_d():
    for M in range(2, 6):
        totals = [predict_cost(MlpLevel(n, M), 3).total for n in range(0, 6)]
        assert all(a < b for a, b in zip(totals, totals[1:]))
    for n in range(2, 6):
        totals = [predict_cost(MlpLevel(n, M), 3).total for M in range(1, 6)]
        assert all(a < b for a, b in zip(totals, totals[1:]))
    for n, M in [(2, 2), (3, 3), (4, 2)]:
        draws = [predict_cost(MlpLevel(n, M), d).scalar_draws for d in (1, 2, 3, 50)]
        slope = draws[1] - draws[0]
        assert draws[2] - draws[1] == slope
        assert draws[3] - draws[0] == 49 * slope


def test_predict_cost_overflow():
    with pytest.raises(OverflowError):
        predict_cost(MlpLevel(10, 2**7), 10**6)


def test_theorem_schedule():
    assert theorem_schedule(1.0) == MlpLevel(1, 1)
    assert theorem_schedule(0.1) == MlpLevel(4, 4)
    assert theorem_schedule(0.01) == MlpLevel(6, 6)
    with pytest.raises(ValueError):
        theorem_schedule(0.0)


def test_parallel_matches_serial(allen_cahn_1d):
    key = StreamKey(77, (1, 2))
    led = CostLedger()
    serial = mlp_estimate(allen_cahn_1d, 0.3, [0.1], MlpLevel(4, 4), key, led)
    for threads in (1, 3, 8):
        rec = mlp_estimate_parallel(allen_cahn_1d, 0.3, [0.1], MlpLevel(4, 4), key, threads)
        assert rec.value == serial
        assert rec.ledger == led
        assert rec.threads == threads
        assert rec.key_path == (1, 2)


def test_parallel_different_keys_differ(allen_cahn_1d):
    a = mlp_estimate_parallel(allen_cahn_1d, 0.3, [0.0], MlpLevel(3, 3), StreamKey(1), 8)
    b = mlp_estimate_parallel(allen_cahn_1d, 0.3, [0.0], MlpLevel(3, 3), StreamKey(2), 8)
    assert a.value != b.value


def test_parallel_record_metadata():
    prob = SemilinearProblem(2, 1.0, GeometricBm(0.0, 0.2), linear(0.1), constant(1.0))
    rec = mlp_estimate_parallel(prob, 0.5, [1.0, 1.0], MlpLevel(2, 2), StreamKey(12), 2)
    assert rec.root_seed == 12
    assert rec.evaluation_point == (0.5, (1.0, 1.0))
    assert any("extension" in note for note in rec.notes)


@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="speedup check needs at least 4 cores")
def test_parallel_speedup():
    prob = SemilinearProblem(100, 1.0, ScaledHeat(), linear(0.5), parse_initial_value("half_exp_neg_normsq"))
    one = mlp_estimate_parallel(prob, 1.0, np.zeros(100), MlpLevel(5, 5), StreamKey(0), 1)
    many = mlp_estimate_parallel(prob, 1.0, np.zeros(100), MlpLevel(5, 5), StreamKey(0), 8)
    assert many.value == one.value
    assert many.wall_time < one.wall_time
