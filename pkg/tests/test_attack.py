import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import expit

from src.extractors.dataset_extractor import make_logistic_dataset, partition
from src.simulation.algorithms import RunSetup, make_schedule
from src.simulation.attack import (
    ATTACK_COLUMNS, WIRE_COLUMNS, attack_campaign, dlg_attack, observe_gradient, wire_attack,
)
from src.simulation.compress import CompressorSpec
from src.simulation.problems import LogisticNonconvexProblem
from src.simulation.topology import build_graph
from src.utils.error_handler import InputError, ParameterError


def logistic(dim=6):
    return LogisticNonconvexProblem(partition(make_logistic_dataset(60, dim, seed=2), 3))


def test_recovers_the_worked_example():
    x, z = np.array([1.0, 0.0]), np.array([1.0, 2.0])
    observed = LogisticNonconvexProblem.loss_gradient(z[None, :], np.array([1.0]), x)
    assert np.allclose(observed, [-0.26894, -0.53788], atol=1e-5)
    result = dlg_attack(x, observed, 1.0, iters=5000, rng=np.random.default_rng(0), z_true=z)
    assert not result.failed
    assert result.final_error <= 1e-6
    assert np.allclose(result.z_hat, z, atol=1e-3)


def test_loss_curve_never_increases():
    x = np.array([0.2, -0.1, 0.05])
    z = np.array([0.5, 0.3, 0.9])
    observed = LogisticNonconvexProblem.loss_gradient(z[None, :], np.array([-1.0]), x)
    result = dlg_attack(x, observed, -1.0, iters=300, rng=np.random.default_rng(1), z_true=z)
    assert all(b <= a for a, b in zip(result.loss_curve, result.loss_curve[1:]))
    assert len(result.error_curve) == len(result.loss_curve) == result.iterations
    frame = result.to_frame()
    assert list(frame.columns) == ATTACK_COLUMNS
    assert frame['iteration'].iloc[0] == 1


def test_regularizer_is_removed_before_matching():
    problem = LogisticNonconvexProblem(partition(make_logistic_dataset(20, 3, seed=4), 2), lam=0.5, alpha=2.0)
    x = np.array([0.1, 0.2, -0.1])
    obs = observe_gradient(problem, 0, x, 0.0, sample_index=3)
    z_true = problem.shards[0].features[3]
    label = float(problem.shards[0].labels[3])
    result = dlg_attack(x, obs.value, label, iters=3000, rng=np.random.default_rng(0), z_true=z_true,
                        lam=0.5, alpha=2.0)
    assert result.final_error <= 1e-6


def test_attack_input_guards():
    with pytest.raises(InputError):
        dlg_attack(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(InputError):
        dlg_attack(np.zeros(2), np.zeros(2), 0.5)
    with pytest.raises(ParameterError):
        dlg_attack(np.zeros(2), np.zeros(2), 1.0, iters=0)


def test_observation_paths():
    problem = logistic()
    x = np.full(6, 0.1)
    shard = problem.shards[1]
    exact = (problem.loss_gradient(shard.features[:1], shard.labels[:1], x) + problem.regularizer_gradient(x))
    plain = observe_gradient(problem, 1, x, 0.0)
    assert np.array_equal(plain.value, exact)
    assert plain.bits is None

    hidden = observe_gradient(problem, 1, x, 0.0, CompressorSpec('identity', privacy_q=1.0),
                              np.random.default_rng(0))
    assert hidden.suppressed and hidden.bits == 1
    assert np.array_equal(hidden.value, np.zeros(6))

    with pytest.raises(ParameterError):
        observe_gradient(problem, 1, x, 0.1)
    with pytest.raises(ParameterError):
        observe_gradient(problem, 1, x, 0.0, sample_index=999)


def test_campaign_compression_hides_the_sample():
    problem = logistic()
    frames = attack_campaign(problem, instances=5, seed=0, agent=1, noise_std=0.0,
                             compressor=CompressorSpec('sign_norm_improved', privacy_q=0.2), iters=2000)
    summary = frames['summary']
    assert set(summary['mode']) == {'uncompressed', 'sign_norm_improved+q0.2'}
    plain = summary[summary['mode'] == 'uncompressed']
    hidden = summary[summary['mode'] != 'uncompressed']
    assert len(plain) == len(hidden) == 5
    assert (plain['final_E'] <= 1e-6).all()
    assert hidden['final_E'].mean() >= 10 * plain['final_E'].mean()
    assert set(frames['curves'].columns) == {'instance', 'mode', *ATTACK_COLUMNS}


def test_campaign_is_seeded():
    problem = logistic()
    a = attack_campaign(problem, 2, seed=5, iters=200)['summary']
    b = attack_campaign(problem, 2, seed=5, iters=200)['summary']
    assert a.equals(b)


def test_campaign_rejects_unknown_agent():
    with pytest.raises(ParameterError):
        attack_campaign(logistic(), 1, seed=0, agent=7)


def test_large_margin_gradient_has_a_second_preimage():
    x, direction = np.array([1.0, 0.0]), np.array([1.0, 2.0])
    target = expit(-1.0)
    t2 = brentq(lambda t: t * expit(-t) - target, 1.3, 10.0)
    near = LogisticNonconvexProblem.loss_gradient(direction[None, :], np.array([1.0]), x)
    far = LogisticNonconvexProblem.loss_gradient(t2 * direction[None, :], np.array([1.0]), x)
    assert t2 > 1.2
    assert np.allclose(near, far, atol=1e-10)


def wire_setup(algorithm, compressor='identity', T=8):
    problem = LogisticNonconvexProblem(partition(make_logistic_dataset(30, 3, seed=5), 3))
    schedule = None
    if algorithm == 'rcp_sgd':
        schedule = make_schedule('custom', {'gamma': 1, 'omega': 1, 'eta0': 0.1, 'eta_decay': 0,
                                            'h0': 0.9, 'alpha_x': 0.5})
    return RunSetup(algorithm, build_graph('ring', 3), problem, T=T, schedule=schedule,
                    compressor=CompressorSpec(compressor), batch=1, eta=0.1, init_scale=0.1)


def test_wire_attack_reads_full_precision_dsgd_messages():
    frame = wire_attack(wire_setup('dsgd'), seed=0, agent=1, noise_std=0.0, iters=2000)
    assert list(frame.columns) == WIRE_COLUMNS
    assert list(frame['step']) == list(range(8))
    assert (frame['leak_error'] <= 1e-20).all()
    assert (frame['E'] <= 1e-6).all()


def test_wire_attack_on_identity_rcp_recovers_every_sample():
    frame = wire_attack(wire_setup('rcp_sgd'), seed=0, agent=1, noise_std=0.0, iters=2000)
    # the last step has no successor message to solve against
    assert list(frame['step']) == list(range(7))
    assert not frame['suppressed'].any()
    assert (frame['leak_error'] <= 1e-20).all()
    assert (frame['E'] <= 1e-6).all()


def test_wire_attack_on_compressed_rcp_misses():
    exact = wire_attack(wire_setup('rcp_sgd'), seed=0, agent=1, noise_std=0.0, iters=2000)
    hidden = wire_attack(wire_setup('rcp_sgd', 'sign_norm_improved'), seed=0, agent=1, noise_std=0.0, iters=2000)
    assert hidden['leak_error'].median() > 1e-3
    assert hidden['E'].median() > 1e-3
    assert hidden['E'].median() >= 10 * exact['E'].median()


def test_wire_attack_every_and_guards():
    frame = wire_attack(wire_setup('rcp_sgd'), seed=0, agent=1, noise_std=0.0, iters=200, every=2)
    assert list(frame['step']) == [0, 2, 4, 6]

    batched = wire_setup('dsgd')
    batched.batch = 8
    with pytest.raises(ParameterError):
        wire_attack(batched, seed=0)
    with pytest.raises(ParameterError):
        wire_attack(wire_setup('choco_sgd', 'sign_norm'), seed=0)
    with pytest.raises(ParameterError):
        wire_attack(wire_setup('dsgd'), seed=0, agent=3)
