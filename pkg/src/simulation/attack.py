"""
Gradient-inversion (DLG-style) attack on the logistic model.

Given the model point x, the label u and an observed single-sample gradient,
the attacker searches for the feature vector z whose logistic gradient
-u * sigmoid(-u x.z) * z matches the observation.

Two threat surfaces: `attack_campaign` attacks gradients observed directly
(optionally through a compressor), `wire_attack` attacks what one agent's
messages reveal during a live DSGD or RCP-SGD run.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import expit

from src.simulation.algorithms import RunSetup, advance, initial_state
from src.simulation.compress import CompressorSpec, compress_rows, message_bits
from src.simulation.problems import LogisticNonconvexProblem
from src.simulation.randomness import RandomStreams
from src.simulation.topology import mixing_matrix
from src.utils.error_handler import AttackFailure, DivergenceError, InputError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_ITERS = 5000
DEFAULT_STEP = 1.0
INIT_SCALE = 0.1
MAX_HALVINGS = 60
# std for the variance-0.005 reading of the observation noise
DEFAULT_NOISE_STD = 0.07071
ATTACK_COLUMNS = ['iteration', 'E', 'matched_loss']
WIRE_ALGORITHMS = ('rcp_sgd', 'dsgd')
WIRE_COLUMNS = ['step', 'algorithm', 'agent', 'sample', 'suppressed', 'leak_error', 'E', 'matched_loss',
                'iterations', 'failed']


@dataclass
class AttackResult:
    z_hat: np.ndarray
    error_curve: List[float]
    matched_loss: float
    loss_curve: List[float] = field(default_factory=list)
    iterations: int = 0
    failed: bool = False
    message: str = ''

    @property
    def final_error(self) -> Optional[float]:
        return self.error_curve[-1] if self.error_curve else None

    def to_frame(self) -> pd.DataFrame:
        rows = {
            'iteration': np.arange(1, len(self.loss_curve) + 1),
            'E': self.error_curve if self.error_curve else [np.nan] * len(self.loss_curve),
            'matched_loss': self.loss_curve,
        }
        return pd.DataFrame(rows, columns=ATTACK_COLUMNS)


@dataclass
class Observation:
    value: np.ndarray
    suppressed: bool = False
    bits: Optional[int] = None


def _matching(x: np.ndarray, z: np.ndarray, u: float, target: np.ndarray):
    """Loss ||g(z) - target||^2 and its gradient in z"""
    s = expit(-u * (x @ z))
    residual = -u * s * z - target
    loss = float(residual @ residual)
    grad = 2 * (-u * s * residual + s * (1 - s) * x * (z @ residual))
    return loss, grad


def dlg_attack(x: np.ndarray, observed: np.ndarray, label: float, iters: int = DEFAULT_ITERS,
               step: float = DEFAULT_STEP, rng: Optional[np.random.Generator] = None,
               z_true: Optional[np.ndarray] = None, lam: float = 0.0, alpha: float = 1.0) -> AttackResult:
    """
    Gradient descent on z_hat with backtracking halving whenever a step raises the matching loss.

    Exact recovery holds while |x.z| is small (the campaign draws x from a
    radius-0.3 ball). Along the ray of z, t * sigmoid(-u t) is not monotone, so
    for large margins a second z with the same gradient exists and the attack
    can settle on it with zero matched loss.

    Args:
        x: model point the gradient was taken at
        observed: observed gradient (regularizer included when lam > 0)
        label: u in {-1, +1}
        z_true: when given, E = ||z_hat - z||^2 is tracked per iteration

    Returns:
        AttackResult holding the best iterate seen
    """
    x = np.asarray(x, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if observed.shape != x.shape or x.ndim != 1:
        raise InputError(f"observation shape {observed.shape} does not match model point {x.shape}")
    if label not in (-1, 1):
        raise InputError(f"label must be ±1, got {label}")
    if iters < 1 or step <= 0:
        raise ParameterError("attack needs iters ≥ 1 and step > 0", condition="iters≥1")
    rng = rng if rng is not None else np.random.default_rng(0)

    ax2 = alpha * x ** 2
    target = observed - 2 * lam * alpha * x / (1 + ax2) ** 2

    z = INIT_SCALE * rng.standard_normal(x.size)
    loss, grad = _matching(x, z, label, target)
    best_z, best_loss = z.copy(), loss
    errors: List[float] = []
    losses: List[float] = []

    for it in range(iters):
        trial_step = step
        for _ in range(MAX_HALVINGS):
            candidate = z - trial_step * grad
            cand_loss, cand_grad = _matching(x, candidate, label, target)
            if math.isfinite(cand_loss) and cand_loss <= loss:
                break
            trial_step /= 2
        else:
            candidate, cand_loss, cand_grad = z, loss, grad

        if not (np.all(np.isfinite(candidate)) and math.isfinite(cand_loss)):
            logger.warning(f"⚠️ Attack iterate became non-finite at iteration {it + 1}")
            return AttackResult(best_z, errors, best_loss, losses, it, failed=True,
                                message=f"non-finite iterate at iteration {it + 1}")

        z, loss, grad = candidate, cand_loss, cand_grad
        if loss <= best_loss:
            best_z, best_loss = z.copy(), loss
        losses.append(best_loss)
        if z_true is not None:
            diff = best_z - z_true
            errors.append(float(diff @ diff))
        if best_loss == 0.0:
            break

    return AttackResult(best_z, errors, best_loss, losses, len(losses))


def observe_gradient(problem: LogisticNonconvexProblem, agent: int, x: np.ndarray, noise_std: float,
                     compressor: Optional[CompressorSpec] = None, rng: Optional[np.random.Generator] = None,
                     sample_index: int = 0) -> Observation:
    """Single-sample gradient plus Gaussian noise; through the compressor when one is supplied"""
    if noise_std < 0:
        raise ParameterError(f"noise_std must be ≥ 0, got {noise_std}", condition="noise_std≥0")
    shard = problem.shards[agent]
    if not 0 <= sample_index < shard.size:
        raise ParameterError(f"sample {sample_index} outside agent {agent}'s {shard.size} samples",
                             condition="sample_index")
    if (noise_std > 0 or compressor is not None) and rng is None:
        raise ParameterError("noisy or compressed observation needs a random stream", condition="rng")

    x = np.asarray(x, dtype=float)
    value = (problem.loss_gradient(shard.features[sample_index:sample_index + 1],
                                   shard.labels[sample_index:sample_index + 1], x)
             + problem.regularizer_gradient(x))
    if noise_std > 0:
        value = value + noise_std * rng.standard_normal(value.size)
    if compressor is None:
        return Observation(value)

    rows, mask = compress_rows(compressor, value[None, :], rng)
    suppressed = bool(mask[0])
    return Observation(rows[0], suppressed, message_bits(compressor, value.size, suppressed))


def _ball_point(dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return radius * rng.random() ** (1.0 / dim) * direction


def attack_campaign(problem: LogisticNonconvexProblem, instances: int, seed: int, agent: int = 1,
                    noise_std: float = DEFAULT_NOISE_STD, compressor: Optional[CompressorSpec] = None,
                    iters: int = DEFAULT_ITERS, step: float = DEFAULT_STEP,
                    x_radius: float = 0.3) -> Dict[str, pd.DataFrame]:
    """
    Attack `instances` random (x, sample) pairs of one agent, uncompressed and through the compressor.

    Returns:
        {'summary': one row per instance and mode, 'curves': per-iteration E and matched loss}
    """
    if agent >= problem.n_agents:
        raise ParameterError(f"agent {agent} not in a {problem.n_agents}-agent problem", condition="attack.agent")
    streams = RandomStreams(seed)
    shard = problem.shards[agent]
    modes = [('uncompressed', None)]
    if compressor is not None:
        modes.append((compressor.label, compressor))

    summary, curves = [], []
    for instance in range(instances):
        rng = streams.stream('attack', agent, instance)
        sample = int(rng.integers(shard.size))
        x = _ball_point(problem.dim, x_radius, rng)
        z_true, label = shard.features[sample], float(shard.labels[sample])

        for mode, spec in modes:
            observation = observe_gradient(problem, agent, x, noise_std, spec, rng, sample)
            row = {'instance': instance, 'mode': mode, 'sample': sample, 'suppressed': observation.suppressed}
            if observation.suppressed:
                # nothing on the wire: the attacker keeps its initial guess
                z0 = INIT_SCALE * rng.standard_normal(problem.dim)
                row.update({'final_E': float(np.sum((z0 - z_true) ** 2)), 'matched_loss': np.nan,
                            'iterations': 0, 'failed': False})
                summary.append(row)
                continue
            result = dlg_attack(x, observation.value, label, iters, step, rng, z_true, problem.lam, problem.alpha)
            row.update({'final_E': result.final_error, 'matched_loss': result.matched_loss,
                        'iterations': result.iterations, 'failed': result.failed})
            summary.append(row)
            frame = result.to_frame()
            frame.insert(0, 'mode', mode)
            frame.insert(0, 'instance', instance)
            curves.append(frame)

    summary_frame = pd.DataFrame(summary)
    attempted = summary_frame[summary_frame['iterations'] > 0]
    if not attempted.empty and attempted['failed'].all():
        raise AttackFailure(f"every attack instance produced a non-finite iterate ({len(attempted)} runs)")
    curve_frame = pd.concat(curves, ignore_index=True) if curves else pd.DataFrame(
        columns=['instance', 'mode'] + ATTACK_COLUMNS)
    logger.info(f"📊 Attack campaign: {instances} instances, "
                + ', '.join(f"{mode} median E={summary_frame[summary_frame['mode'] == mode]['final_E'].median():.3g}"
                            for mode, _ in modes))
    return {'summary': summary_frame, 'curves': curve_frame}


@dataclass
class _Leak:
    """What an eavesdropper extracted about one victim step"""
    step: int
    point: np.ndarray
    estimate: np.ndarray
    truth: np.ndarray
    sample: int
    suppressed: bool


def _victim_sample(setup: RunSetup, streams: RandomStreams, agent: int, point: np.ndarray, step: int) -> int:
    # replays the victim's minibatch draw for this step
    drawn = setup.problem.local_gradient(agent, point, batch=1, rng=streams.stream('minibatch', agent, step))
    return int(drawn.batch_indices[0])


def _run_leaks(setup: RunSetup, seed: int, agent: int):
    """
    Yield one _Leak per step from the messages a global eavesdropper sees.

    DSGD broadcasts x in full precision, so g_k = ((W x_k)_i - x_{i,k+1}) / eta.
    RCP-SGD only puts h_k C((x - x_c)/h_k) on the wire. The eavesdropper keeps
    every x_c, rebuilds x_hat_k = x_c + wire, replays the public dual recursion
    and solves the primal update for g_k at the estimate x_hat_k, one step late.
    """
    streams = RandomStreams(seed)
    net = initial_state(setup, streams)
    mixing = mixing_matrix(setup.graph) if setup.algorithm == 'dsgd' else None
    lap = setup.graph.laplacian
    v_hat = np.zeros_like(net.x)
    pending = None

    for k in range(setup.T):
        try:
            succ = advance(net, setup, streams, mixing)
        except DivergenceError as e:
            logger.error(f"💥 Victim run diverged at step {e.step}; attack stops there")
            return
        victim = net.agent(agent)
        sample = _victim_sample(setup, streams, agent, victim.x, k)

        if setup.algorithm == 'dsgd':
            estimate = ((mixing @ net.x)[agent] - succ.x[agent]) / setup.eta
            yield _Leak(k, victim.x, estimate, succ.last_gradients[agent], sample, False)
        else:
            sched = setup.schedule
            x_hat = net.x_c + succ.last_wire
            suppressed = bool(succ.last_suppressed[agent])
            if pending is not None:
                prev_k, prev_hat, prev_v, truth, prev_sample, prev_suppressed = pending
                eta, gamma, omega = sched.eta(prev_k), sched.gamma(prev_k), sched.omega(prev_k)
                estimate = ((prev_hat[agent] - x_hat[agent]) / eta - gamma * (lap @ prev_hat)[agent]
                            - omega * prev_v[agent])
                yield _Leak(prev_k, prev_hat[agent], estimate, truth, prev_sample,
                            prev_suppressed or suppressed)
                v_hat = prev_v + eta * omega * (lap @ prev_hat)
            pending = (k, x_hat, v_hat, succ.last_gradients[agent], sample, suppressed)
        net = succ


def wire_attack(setup: RunSetup, seed: int, agent: int = 1, noise_std: float = DEFAULT_NOISE_STD,
                iters: int = DEFAULT_ITERS, step: float = DEFAULT_STEP, every: int = 1) -> pd.DataFrame:
    """
    Attack one agent's single-sample gradients as they leak from a live run, every `every` steps.

    Returns:
        One row per attacked step with E, the matched loss and leak_error = ||g_est - g||^2
    """
    problem = setup.problem
    if not isinstance(problem, LogisticNonconvexProblem):
        raise ParameterError("the wire attack targets the logistic problem", condition="problem.kind")
    if setup.algorithm not in WIRE_ALGORITHMS:
        raise ParameterError(f"wire attack supports {WIRE_ALGORITHMS}, got '{setup.algorithm}'",
                             condition="algorithm")
    if setup.batch != 1:
        raise ParameterError(f"wire attack needs single-sample minibatches, got batch={setup.batch}",
                             condition="problem.batch")
    if not 0 <= agent < problem.n_agents:
        raise ParameterError(f"agent {agent} not in a {problem.n_agents}-agent problem", condition="attack.agent")
    if every < 1:
        raise ParameterError(f"every must be ≥ 1, got {every}", condition="attack.every")

    streams = RandomStreams(seed)
    shard = problem.shards[agent]
    logger.info(f"🚀 Wire attack on agent {agent} of a {setup.algorithm} run ({setup.T} steps, every {every})")

    rows = []
    for leak in _run_leaks(setup, seed, agent):
        if leak.step % every:
            continue
        rng = streams.stream('attack', agent, leak.step)
        z_true, label = shard.features[leak.sample], float(shard.labels[leak.sample])
        row = {'step': leak.step, 'algorithm': setup.algorithm, 'agent': agent, 'sample': leak.sample,
               'suppressed': leak.suppressed,
               'leak_error': float(np.sum((leak.estimate - leak.truth) ** 2))}
        if leak.suppressed:
            z0 = INIT_SCALE * rng.standard_normal(problem.dim)
            row.update({'E': float(np.sum((z0 - z_true) ** 2)), 'matched_loss': np.nan,
                        'iterations': 0, 'failed': False})
            rows.append(row)
            continue
        observed = leak.estimate + (noise_std * rng.standard_normal(problem.dim) if noise_std > 0 else 0.0)
        result = dlg_attack(leak.point, observed, label, iters, step, rng, z_true, problem.lam, problem.alpha)
        row.update({'E': result.final_error, 'matched_loss': result.matched_loss,
                    'iterations': result.iterations, 'failed': result.failed})
        rows.append(row)

    frame = pd.DataFrame(rows, columns=WIRE_COLUMNS)
    if not frame.empty:
        logger.info(f"📊 Wire attack: {len(frame)} steps attacked, median E={frame['E'].median():.3g}, "
                    f"median leak error={frame['leak_error'].median():.3g}")
    return frame
