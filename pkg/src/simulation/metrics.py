"""
Reported quantities: consensus error, gradient norm at the network mean,
optimality gap, the running-minimum residual and bit bookkeeping.
"""

import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from src.utils.error_handler import InputError

TRACE_COLUMNS = ['step', 'consensus_err', 'grad_norm_sq', 'opt_gap', 'residual', 'bits_cum', 'wall_ms']
METRIC_COLUMNS = ['consensus_err', 'grad_norm_sq', 'opt_gap', 'residual', 'bits_cum', 'wall_ms']


@dataclass
class TraceRecord:
    step: int
    consensus_err: float
    grad_norm_sq: float
    opt_gap: Optional[float]
    residual: float
    bits_cum: int
    wall_ms: Optional[float] = None

    def as_row(self) -> Dict[str, object]:
        return {column: getattr(self, column) for column in TRACE_COLUMNS}


def consensus_error(xs: Sequence) -> float:
    """(1/n) sum_i ||x_i - mean||^2; a 1-D input is read as n scalar agents"""
    points = np.asarray(xs, dtype=float)
    if points.size == 0:
        raise InputError("consensus error of an empty set")
    if points.ndim == 1:
        points = points[:, None]
    centered = points - points.mean(axis=0)
    return float(np.mean(np.sum(centered ** 2, axis=1)))


def residual_update(prev_residual: float, consensus_err: float, grad_norm_sq: float) -> float:
    return min(prev_residual, consensus_err + grad_norm_sq)


def loglog_slope(series: Union[Sequence[Tuple[float, float]], np.ndarray],
                 window: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of log(value) against log(k) for k inside the window"""
    pairs = np.asarray(series, dtype=float)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InputError(f"expected (k, value) pairs, got shape {pairs.shape}")
    if window is not None:
        lo, hi = window
        pairs = pairs[(pairs[:, 0] >= lo) & (pairs[:, 0] <= hi)]

    steps, values = pairs[:, 0], pairs[:, 1]
    if np.any(~np.isfinite(values)) or np.any(values <= 0) or np.any(steps <= 0):
        raise InputError("log-log slope needs positive steps and values inside the window")
    if len(values) < 10:
        raise InputError(f"log-log slope needs ≥ 10 points in the window, got {len(values)}")
    return float(stats.linregress(np.log(steps), np.log(values)).slope)


class MetricsTracker:
    """Builds TraceRecords from network snapshots, carrying the running residual"""

    def __init__(self, problem, timing: bool = False):
        self.problem = problem
        self.timing = timing
        self.residual = math.inf
        self._start = time.perf_counter()

    def record(self, step: int, xs: np.ndarray, bits_cum: int) -> TraceRecord:
        x_bar = xs.mean(axis=0)
        ce = consensus_error(xs)
        grad = self.problem.gradient(x_bar)
        gn = float(grad @ grad)
        f_star = self.problem.f_star
        gap = self.problem.value(x_bar) - f_star if f_star is not None else None
        self.residual = residual_update(self.residual, ce, gn)
        wall = (time.perf_counter() - self._start) * 1000.0 if self.timing else None
        return TraceRecord(step, ce, gn, gap, self.residual, int(bits_cum), wall)


def records_to_frame(records: List[TraceRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([record.as_row() for record in records], columns=TRACE_COLUMNS)
    return frame.astype({'step': 'int64', 'bits_cum': 'int64', 'opt_gap': 'float64', 'wall_ms': 'float64'})


def residual_at_bits(frame: pd.DataFrame, budget: float) -> Optional[float]:
    """Residual of the last recorded step whose cumulative bits fit the budget"""
    within = frame[frame['bits_cum'] <= budget]
    return None if within.empty else float(within['residual'].iloc[-1])


def bits_to_reach(frame: pd.DataFrame, level: float) -> Optional[int]:
    hit = frame[frame['residual'] <= level]
    return None if hit.empty else int(hit['bits_cum'].iloc[0])


def aggregate_frames(frames: List[pd.DataFrame]) -> pd.DataFrame:
    """Mean/std per step across seeds; `seeds` counts the traces still alive at that step"""
    stacked = pd.concat(frames, ignore_index=True)
    grouped = stacked.groupby('step', sort=True)
    summary = grouped[METRIC_COLUMNS].agg(['mean', 'std'])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    summary['seeds'] = grouped.size()
    # single-seed std is 0, not NaN
    for metric in METRIC_COLUMNS:
        column = f"{metric}_std"
        present = summary[f"{metric}_mean"].notna()
        summary.loc[present, column] = summary.loc[present, column].fillna(0.0)
    return summary.reset_index()
