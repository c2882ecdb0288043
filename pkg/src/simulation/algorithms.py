"""
RCP-SGD and its baselines.

All state lives in dense (n, d) arrays. Every step is two-phase: the
compressed estimates x_hat are formed from the step-k snapshot for all agents
before any agent updates. Each agent draws from its own stream keyed by
(seed, agent, step, purpose), so agent order never changes results.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src.simulation.compress import IDENTITY, CompressorSpec, bit_cost, compress_rows, message_bits
from src.simulation.metrics import MetricsTracker, TraceRecord, records_to_frame
from src.simulation.problems import Problem
from src.simulation.randomness import RandomStreams
from src.simulation.theory import COND_ALPHA_R, COND_BETA0_INTERVAL, ProblemConstants, beta0_interval
from src.simulation.topology import Graph, mixing_matrix
from src.utils.error_handler import DivergenceError, InputError, ParameterError

logger = logging.getLogger(__name__)

REGIMES = ('theorem1', 'theorem1_speedup', 'theorem2', 'theorem3', 'table1', 'custom')
ALGORITHMS = ('rcp_sgd', 'dsgd', 'choco_sgd')
COST_MODES = ('broadcast', 'per_edge')

H_FLOOR = 1e-300
DIVERGENCE_LIMIT = 1e12

TABLE1_ETA0 = 0.08
TABLE1_ETA_DECAY = 0.01
TABLE1_H0 = 0.95
TABLE1_ALPHA_X = 0.8
THEOREM_ALPHA_X = 0.5
THEOREM1_H0 = 0.5
THEOREM2_H0 = 0.45

Batch = Union[None, str, int]


@dataclass
class Schedule:
    """Closed-form evaluators for eta_k, gamma_k, omega_k and h_k"""
    regime: str
    params: Dict[str, float]
    substitutions: List[str] = field(default_factory=list)

    @property
    def alpha_x(self) -> float:
        return self.params['alpha_x']

    @property
    def h0(self) -> float:
        return self.params['h0']

    def omega(self, k: int) -> float:
        if self.regime == 'theorem3':
            return self.params['beta0'] * (k + self.params['t1'])
        return self.params['omega']

    def gamma(self, k: int) -> float:
        if self.regime in ('table1', 'custom'):
            return self.params['gamma']
        return self.params['beta1'] * self.omega(k)

    def eta(self, k: int) -> float:
        if self.regime in ('table1', 'custom'):
            return self.params['eta0'] / max(k, 1) ** self.params['eta_decay']
        return self.params['beta2'] / self.omega(k)

    def h(self, k: int) -> float:
        return max(self.h0 ** k, H_FLOOR)

    def describe(self) -> Dict[str, object]:
        summary = {f"schedule.{key}": value for key, value in self.params.items()}
        summary['schedule.regime'] = self.regime
        if self.substitutions:
            summary['schedule.substituted'] = ';'.join(self.substitutions)
        return summary


def _require(params: Dict[str, float], regime: str, *names: str) -> None:
    missing = [name for name in names if params.get(name) is None]
    if missing:
        raise ParameterError(f"regime '{regime}' needs {', '.join(missing)}", condition=missing[0])


def _check(holds: bool, condition: str, detail: str) -> None:
    if not holds:
        raise ParameterError(f"{condition} violated: {detail}", condition=condition)


def make_schedule(regime: str, params: Dict[str, float],
                  problem_constants: Optional[ProblemConstants] = None) -> Schedule:
    """
    Validate regime parameters and build a Schedule.

    Args:
        regime: one of REGIMES
        params: beta0/beta1/beta2/theta/t1/h0/alpha_x/omega/gamma/eta0/eta_decay/c_tilde/nu
            as the regime needs, plus T and n for the horizon-dependent regimes
        problem_constants: supplies nu (theorem3) and r (alpha_x range)

    Returns:
        Schedule with every default it filled in listed in `substitutions`
    """
    if regime not in REGIMES:
        raise ParameterError(f"unknown schedule regime '{regime}'", condition="schedule.regime")
    p = {key: float(value) for key, value in params.items() if value is not None}
    substitutions = []

    def default(name: str, value: float) -> None:
        if name not in p:
            p[name] = value
            substitutions.append(f"{name}={value:g}")

    if regime in ('theorem1', 'theorem1_speedup', 'theorem2'):
        _require(p, regime, 'beta1', 'beta2')
        _check(p['beta1'] > 0 and p['beta2'] > 0, "β₁,β₂>0", f"β₁={p['beta1']}, β₂={p['beta2']}")
        if regime == 'theorem1':
            _require(p, regime, 'omega')
            default('h0', THEOREM1_H0)
            _check(0 < p['h0'] < 1, "h₀∈(0,1)", f"h₀={p['h0']}")
        elif regime == 'theorem1_speedup':
            _require(p, regime, 'T', 'n')
            _check(p['T'] > 0 and p['n'] >= 1, "T>0", f"T={p['T']}, n={p['n']}")
            p['omega'] = p['beta2'] * math.sqrt(p['T']) / math.sqrt(p['n'])
            default('h0', THEOREM1_H0)
            _check(0 < p['h0'] < 1, "h₀∈(0,1)", f"h₀={p['h0']}")
        else:
            _require(p, regime, 'theta', 'T')
            _check(0 < p['theta'] < 1, "θ∈(0,1)", f"θ={p['theta']}")
            _check(0 < p['beta2'] < 1, "β₂∈(0,1)", f"β₂={p['beta2']}")
            _check(p['T'] >= 0, "T≥0", f"T={p['T']}")
            p['omega'] = p['beta2'] * (p['T'] + 1) ** p['theta']
            default('h0', THEOREM2_H0)
            _check(0 < p['h0'] < 0.5, "h₀∈(0,1/2)", f"h₀={p['h0']}")
        _check(p['omega'] > 0, "ω>0", f"ω={p['omega']}")
        default('alpha_x', THEOREM_ALPHA_X)

    elif regime == 'theorem3':
        _require(p, regime, 'beta0', 'beta1', 'beta2', 't1')
        _check(min(p['beta1'], p['beta2'], p['t1']) > 0, "β₁,β₂,t₁>0", f"{p}")
        if 'nu' not in p and problem_constants is not None and problem_constants.nu is not None:
            p['nu'] = problem_constants.nu
        _require(p, regime, 'nu')
        default('c_tilde', 0.5)
        low, high = beta0_interval(p['nu'], p['beta2'], p['c_tilde'])
        _check(low <= p['beta0'] < high, COND_BETA0_INTERVAL, f"β₀={p['beta0']} outside [{low:.6g}, {high:.6g})")
        default('h0', 0.5 / p['t1'])
        _check(0 < p['h0'] < 1 / p['t1'], "h₀∈(0,1/t₁)", f"h₀={p['h0']}, t₁={p['t1']}")
        default('alpha_x', THEOREM_ALPHA_X)

    else:
        _require(p, regime, 'gamma', 'omega')
        _check(p['gamma'] > 0 and p['omega'] > 0, "γ,ω>0", f"γ={p['gamma']}, ω={p['omega']}")
        default('eta0', TABLE1_ETA0)
        default('eta_decay', TABLE1_ETA_DECAY if regime == 'table1' else 0.0)
        _check(p['eta0'] > 0 and p['eta_decay'] >= 0, "η>0", f"η₀={p['eta0']}, decay={p['eta_decay']}")
        default('h0', TABLE1_H0)
        _check(0 < p['h0'] <= 1, "h₀∈(0,1]", f"h₀={p['h0']}")
        default('alpha_x', TABLE1_ALPHA_X)

    r = problem_constants.r if problem_constants is not None else 1.0
    _check(0 < p['alpha_x'] < 1 / r, COND_ALPHA_R, f"α_x={p['alpha_x']}, r={r}")

    for note in substitutions:
        logger.warning(f"⚠️ Schedule {regime}: defaulted {note}")
    return Schedule(regime, p, substitutions)


@dataclass
class AgentState:
    x: np.ndarray
    v: np.ndarray
    x_c: np.ndarray


@dataclass
class NetworkState:
    """Stacked per-agent state; row i of x, v, x_c belongs to agent i"""
    x: np.ndarray
    v: np.ndarray
    x_c: np.ndarray
    k: int = 0
    bits: int = 0
    replicas: Optional[np.ndarray] = None
    last_gradients: Optional[np.ndarray] = None
    last_wire: Optional[np.ndarray] = None
    last_suppressed: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x0: np.ndarray, replica_check: bool = False) -> 'NetworkState':
        x0 = np.array(x0, dtype=float)
        if x0.ndim != 2:
            raise InputError(f"initial state must be (n, d), got shape {x0.shape}")
        n, d = x0.shape
        replicas = np.zeros((n, n, d)) if replica_check else None
        return cls(x=x0, v=np.zeros_like(x0), x_c=np.zeros_like(x0), replicas=replicas)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def agent(self, i: int) -> AgentState:
        return AgentState(self.x[i].copy(), self.v[i].copy(), self.x_c[i].copy())

    def mean_x(self) -> np.ndarray:
        return self.x.mean(axis=0)

    def copy(self) -> 'NetworkState':
        return NetworkState(
            x=self.x.copy(), v=self.v.copy(), x_c=self.x_c.copy(), k=self.k, bits=self.bits,
            replicas=None if self.replicas is None else self.replicas.copy(),
        )


def _sample_gradients(net: NetworkState, problem: Problem, streams: RandomStreams, batch: Batch,
                      points: Optional[np.ndarray] = None) -> np.ndarray:
    points = net.x if points is None else points
    grads = np.empty_like(points)
    for i in range(net.n):
        rng = streams.stream('minibatch', i, net.k)
        grads[i] = problem.local_gradient(i, points[i], batch=batch, rng=rng).value
    return grads


def _charge(bits: int, graph: Graph, agent: int, cost_mode: str) -> int:
    if cost_mode == 'per_edge':
        return bits * graph.degree(agent)
    return bits


def _guard(net: NetworkState, step: int) -> None:
    for name in ('x', 'v', 'x_c'):
        block = getattr(net, name)
        if not np.all(np.isfinite(block)):
            raise DivergenceError(step, f"non-finite {name}")
        if np.max(np.abs(block), initial=0.0) > DIVERGENCE_LIMIT:
            raise DivergenceError(step, f"|{name}| exceeded {DIVERGENCE_LIMIT:g}")


def _decode(compressor: CompressorSpec, target: np.ndarray, reference: np.ndarray, h: float,
            payload: np.ndarray, suppressed: bool) -> np.ndarray:
    """x_hat = x_c + h * C((x - x_c)/h); the identity compressor delivers x itself"""
    if suppressed:
        return reference.copy()
    if compressor.kind == IDENTITY:
        return target.copy()
    return reference + h * payload


def _compress_differences(net: NetworkState, graph: Graph, compressor: CompressorSpec, streams: RandomStreams,
                          h: float, cost_mode: str):
    """Phase one: every agent's compressed estimate and the bits it pays"""
    x_hat = np.empty_like(net.x)
    payloads = np.zeros_like(net.x)
    suppressed = np.zeros(net.n, dtype=bool)
    bits = 0
    for i in range(net.n):
        diff = net.x[i] - net.x_c[i]
        if np.any(diff):
            scaled = diff / h
            if not np.all(np.isfinite(scaled)):
                raise DivergenceError(net.k, f"agent {i}: (x - x_c)/h overflowed at h={h:.3g}")
        else:
            scaled = np.zeros_like(diff)
        rows, mask = compress_rows(compressor, scaled[None, :], streams.stream('compress', i, net.k))
        payloads[i], suppressed[i] = rows[0], mask[0]
        x_hat[i] = _decode(compressor, net.x[i], net.x_c[i], h, payloads[i], suppressed[i])
        bits += _charge(message_bits(compressor, net.d, bool(suppressed[i])), graph, i, cost_mode)
    return x_hat, payloads, suppressed, bits


def _update_replicas(replicas: np.ndarray, net: NetworkState, graph: Graph, compressor: CompressorSpec,
                     h: float, alpha_x: float, payloads: np.ndarray, suppressed: np.ndarray,
                     x_c_new: np.ndarray) -> np.ndarray:
    """Neighbours rebuild x_hat_j from their own copy of x_c_j and what j broadcast"""
    updated = replicas.copy()
    for i in range(net.n):
        for j in graph.neighbors(i):
            copy = replicas[i, j]
            received = _decode(compressor, net.x[j], copy, h, payloads[j], bool(suppressed[j]))
            updated[i, j] = (1 - alpha_x) * copy + alpha_x * received
            if not np.array_equal(updated[i, j], x_c_new[j]):
                raise DivergenceError(net.k + 1, f"agent {i}'s copy of x_c[{j}] drifted from the original")
    return updated


def rcp_step(net: NetworkState, graph: Graph, problem: Problem, sched: Schedule, compressor: CompressorSpec,
             streams: RandomStreams, batch: Batch = None, cost_mode: str = 'broadcast') -> NetworkState:
    """One synchronous RCP-SGD round; returns the successor state"""
    k = net.k
    h = sched.h(k)
    eta, gamma, omega = sched.eta(k), sched.gamma(k), sched.omega(k)
    a = sched.alpha_x
    lap = graph.laplacian

    x_hat, payloads, suppressed, bits = _compress_differences(net, graph, compressor, streams, h, cost_mode)
    grads = _sample_gradients(net, problem, streams, batch)

    lx_hat = lap @ x_hat
    x_new = net.x - eta * (gamma * lx_hat + omega * net.v + grads)
    v_new = net.v + eta * omega * lx_hat
    x_c_new = (1 - a) * net.x_c + a * x_hat

    replicas = net.replicas
    if replicas is not None:
        replicas = _update_replicas(replicas, net, graph, compressor, h, a, payloads, suppressed, x_c_new)

    succ = NetworkState(x=x_new, v=v_new, x_c=x_c_new, k=k + 1, bits=net.bits + bits, replicas=replicas,
                        last_gradients=grads, last_wire=h * payloads, last_suppressed=suppressed)
    _guard(succ, k + 1)
    return succ


def primal_dual_step(net: NetworkState, graph: Graph, problem: Problem, sched: Schedule, streams: RandomStreams,
                     batch: Batch = None, cost_mode: str = 'broadcast') -> NetworkState:
    """Uncompressed reference: the RCP-SGD update with x_hat = x, charged full-precision bits"""
    k = net.k
    eta, gamma, omega = sched.eta(k), sched.gamma(k), sched.omega(k)
    a = sched.alpha_x
    grads = _sample_gradients(net, problem, streams, batch)

    lx = graph.laplacian @ net.x
    full = bit_cost(CompressorSpec(IDENTITY), net.d)
    bits = sum(_charge(full, graph, i, cost_mode) for i in range(net.n))
    succ = NetworkState(
        x=net.x - eta * (gamma * lx + omega * net.v + grads),
        v=net.v + eta * omega * lx,
        x_c=(1 - a) * net.x_c + a * net.x,
        k=k + 1, bits=net.bits + bits, last_gradients=grads,
    )
    _guard(succ, k + 1)
    return succ


def dsgd_step(net: NetworkState, graph: Graph, problem: Problem, eta: float, streams: RandomStreams,
              batch: Batch = None, cost_mode: str = 'broadcast',
              mixing: Optional[np.ndarray] = None) -> NetworkState:
    """x <- W x - eta g, each agent sending its full-precision x"""
    w = mixing_matrix(graph) if mixing is None else mixing
    grads = _sample_gradients(net, problem, streams, batch)
    full = bit_cost(CompressorSpec(IDENTITY), net.d)
    bits = sum(_charge(full, graph, i, cost_mode) for i in range(net.n))
    succ = NetworkState(x=w @ net.x - eta * grads, v=net.v.copy(), x_c=net.x_c.copy(), k=net.k + 1,
                        bits=net.bits + bits, last_gradients=grads)
    _guard(succ, net.k + 1)
    return succ


def choco_step(net: NetworkState, graph: Graph, problem: Problem, eta: float, gamma_consensus: float,
               compressor: CompressorSpec, streams: RandomStreams, batch: Batch = None,
               cost_mode: str = 'broadcast', mixing: Optional[np.ndarray] = None) -> NetworkState:
    """Compressed gossip on public estimates x_hat (kept in x_c), one local SGD step per round"""
    w = mixing_matrix(graph) if mixing is None else mixing
    grads = _sample_gradients(net, problem, streams, batch)
    x_half = net.x - eta * grads

    x_hat = net.x_c.copy()
    suppressed = np.zeros(net.n, dtype=bool)
    bits = 0
    for i in range(net.n):
        rows, mask = compress_rows(compressor, (x_half[i] - x_hat[i])[None, :],
                                   streams.stream('compress', i, net.k))
        x_hat[i] = x_hat[i] + rows[0]
        suppressed[i] = mask[0]
        bits += _charge(message_bits(compressor, net.d, bool(mask[0])), graph, i, cost_mode)

    x_new = x_half + gamma_consensus * ((w - np.eye(net.n)) @ x_hat)
    succ = NetworkState(x=x_new, v=net.v.copy(), x_c=x_hat, k=net.k + 1, bits=net.bits + bits,
                        last_gradients=grads, last_suppressed=suppressed)
    _guard(succ, net.k + 1)
    return succ


@dataclass
class RunSetup:
    algorithm: str
    graph: Graph
    problem: Problem
    T: int
    schedule: Optional[Schedule] = None
    compressor: CompressorSpec = field(default_factory=CompressorSpec)
    batch: Batch = None
    eta: float = 0.1
    gamma_consensus: float = 0.2
    metrics_every: int = 10
    init_scale: float = 1.0
    replica_check: bool = False
    cost_mode: str = 'broadcast'
    timing: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm '{self.algorithm}'", condition="algorithm")
        if self.T < 0:
            raise ParameterError(f"T must be ≥ 0, got {self.T}", condition="T≥0")
        if self.metrics_every < 1:
            raise ParameterError("metrics_every must be ≥ 1", condition="metrics_every≥1")
        if self.cost_mode not in COST_MODES:
            raise ParameterError(f"unknown cost mode '{self.cost_mode}'", condition="cost_mode")
        if self.problem.n_agents != self.graph.n:
            raise ParameterError(f"problem has {self.problem.n_agents} agents, graph has {self.graph.n}",
                                 condition="n")
        if self.algorithm == 'rcp_sgd' and self.schedule is None:
            raise ParameterError("rcp_sgd needs a schedule", condition="schedule.regime")


@dataclass
class Trace:
    seed: int
    records: List[TraceRecord]
    diverged: bool = False
    divergence_step: Optional[int] = None
    message: str = ''

    def to_frame(self) -> pd.DataFrame:
        return records_to_frame(self.records)


def advance(net: NetworkState, setup: RunSetup, streams: RandomStreams,
            mixing: Optional[np.ndarray] = None) -> NetworkState:
    if setup.algorithm == 'rcp_sgd':
        return rcp_step(net, setup.graph, setup.problem, setup.schedule, setup.compressor, streams,
                        setup.batch, setup.cost_mode)
    if setup.algorithm == 'dsgd':
        return dsgd_step(net, setup.graph, setup.problem, setup.eta, streams, setup.batch, setup.cost_mode, mixing)
    return choco_step(net, setup.graph, setup.problem, setup.eta, setup.gamma_consensus, setup.compressor,
                      streams, setup.batch, setup.cost_mode, mixing)


def initial_state(setup: RunSetup, streams: RandomStreams) -> NetworkState:
    n, d = setup.graph.n, setup.problem.dim
    x0 = np.stack([setup.init_scale * streams.stream('init', i, 0).standard_normal(d) for i in range(n)])
    return NetworkState.initial(x0, replica_check=setup.replica_check and setup.algorithm == 'rcp_sgd')


def run(setup: RunSetup, seed: int) -> Trace:
    """Execute T steps from a seeded initial point; divergence truncates the trace instead of raising"""
    streams = RandomStreams(seed)
    net = initial_state(setup, streams)
    mixing = mixing_matrix(setup.graph) if setup.algorithm != 'rcp_sgd' else None

    tracker = MetricsTracker(setup.problem, timing=setup.timing)
    records = [tracker.record(0, net.x, net.bits)]
    trace = Trace(seed=seed, records=records)

    try:
        for _ in range(setup.T):
            net = advance(net, setup, streams, mixing)
            if net.k % setup.metrics_every == 0 or net.k == setup.T:
                records.append(tracker.record(net.k, net.x, net.bits))
    except DivergenceError as e:
        trace.diverged = True
        trace.divergence_step = e.step
        trace.message = str(e)
        logger.error(f"💥 Seed {seed} diverged at step {e.step}: {e}")
        return trace

    logger.debug(f"Seed {seed}: {setup.T} steps, {net.bits} bits, residual {records[-1].residual:.3e}")
    return trace
