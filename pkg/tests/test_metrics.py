import math

import numpy as np
import pandas as pd
import pytest

from src.simulation.metrics import (
    TRACE_COLUMNS, MetricsTracker, TraceRecord, aggregate_frames, bits_to_reach, consensus_error, loglog_slope,
    records_to_frame, residual_at_bits, residual_update,
)
from src.simulation.problems import make_pl_quadratic
from src.utils.error_handler import InputError


def test_consensus_error_examples():
    assert consensus_error([1.0, -1.0]) == pytest.approx(1.0)
    assert consensus_error([[1.0, 0.0], [-1.0, 0.0]]) == pytest.approx(1.0)
    assert consensus_error([[2.0, 3.0]] * 4) == 0.0
    with pytest.raises(InputError):
        consensus_error([])


def test_residual_is_a_running_minimum():
    assert residual_update(math.inf, 0.5, 0.25) == 0.75
    assert residual_update(0.5, 1.0, 1.0) == 0.5


def test_loglog_slope_recovers_power_law():
    series = [(k, 3.0 / k) for k in range(1, 101)]
    assert loglog_slope(series) == pytest.approx(-1.0)
    assert loglog_slope(series, window=(10, 100)) == pytest.approx(-1.0)
    square = [(k, k ** -2.0) for k in range(1, 30)]
    assert loglog_slope(square) == pytest.approx(-2.0)


def test_loglog_slope_guards():
    with pytest.raises(InputError):
        loglog_slope([(k, 1.0 / k) for k in range(1, 6)])
    with pytest.raises(InputError):
        loglog_slope([(k, 0.0) for k in range(1, 20)])
    with pytest.raises(InputError):
        loglog_slope([(k, 1.0 / k) for k in range(1, 100)], window=(95, 99))


def test_tracker_at_the_optimum():
    problem = make_pl_quadratic(3, 4, seed=2)
    tracker = MetricsTracker(problem)
    xs = np.repeat(problem.x_star[None, :], 3, axis=0)
    record = tracker.record(0, xs, 0)
    assert record.consensus_err == pytest.approx(0.0, abs=1e-20)
    assert record.grad_norm_sq == pytest.approx(0.0, abs=1e-16)
    assert record.opt_gap == pytest.approx(0.0, abs=1e-12)
    assert record.wall_ms is None


def test_tracker_residual_never_increases():
    problem = make_pl_quadratic(3, 4, seed=2)
    tracker = MetricsTracker(problem, timing=True)
    rng = np.random.default_rng(0)
    residuals = [tracker.record(k, rng.standard_normal((3, 4)), 10 * k).residual for k in range(10)]
    assert all(b <= a for a, b in zip(residuals, residuals[1:]))
    assert tracker.record(10, np.zeros((3, 4)), 100).wall_ms >= 0


def _frame(residuals, bits):
    records = [TraceRecord(step, 0.0, r, None, r, b) for step, (r, b) in enumerate(zip(residuals, bits))]
    return records_to_frame(records)


def test_records_to_frame_columns():
    frame = _frame([1.0, 0.5], [0, 41])
    assert list(frame.columns) == TRACE_COLUMNS
    assert frame['bits_cum'].dtype == 'int64'
    assert frame['opt_gap'].isna().all()


def test_bits_lookups():
    frame = _frame([1.0, 0.5, 0.2, 0.1], [0, 100, 200, 300])
    assert residual_at_bits(frame, 250) == 0.2
    assert residual_at_bits(frame, -1) is None
    assert bits_to_reach(frame, 0.3) == 200
    assert bits_to_reach(frame, 0.01) is None


def test_aggregate_mean_std_and_alive_seeds():
    a = _frame([1.0, 0.5, 0.25], [0, 10, 20])
    b = _frame([3.0, 1.5], [0, 10])
    summary = aggregate_frames([a, b])
    assert list(summary['step']) == [0, 1, 2]
    assert list(summary['seeds']) == [2, 2, 1]
    assert summary.loc[0, 'residual_mean'] == pytest.approx(2.0)
    assert summary.loc[0, 'residual_std'] == pytest.approx(np.std([1.0, 3.0], ddof=1))
    assert summary.loc[2, 'residual_std'] == 0.0
    assert pd.isna(summary.loc[0, 'opt_gap_mean'])
