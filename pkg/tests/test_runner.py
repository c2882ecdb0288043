import os

import numpy as np
import pandas as pd
import pytest

from schedulers.experiment_scheduler import main
from src.harness.config import parse_config
from src.harness.runner import ExperimentRunner
from src.simulation import problems
from src.simulation.metrics import bits_to_reach, loglog_slope, residual_at_bits
from src.simulation.problems import make_pl_quadratic
from src.simulation.theory import beta0_interval
from src.utils.error_handler import ConfigError

SMALL = 'T=20\nn=4\nproblem.samples=40\nproblem.fstar=false\nmetrics_every=5\n'


def header_dict(path):
    frame = pd.read_csv(os.path.join(path, 'header.csv'), dtype=str, keep_default_na=False)
    return dict(zip(frame['key'], frame['value']))


def test_preset_run_writes_traces_aggregate_and_header(tmp_path):
    config = parse_config(SMALL + 'seeds=0,1\n', preset='rcp-sgd-2')
    results = ExperimentRunner(str(tmp_path)).execute(config)

    assert results['successful'] == 2
    assert results['failed'] == 0
    assert results['total'] == 2
    for name in ('trace_seed0.csv', 'trace_seed1.csv', 'aggregate.csv', 'header.csv'):
        assert (tmp_path / name).exists()

    trace = pd.read_csv(tmp_path / 'trace_seed0.csv')
    assert list(trace['step']) == [0, 5, 10, 15, 20]
    aggregate = pd.read_csv(tmp_path / 'aggregate.csv')
    assert set(aggregate['seeds']) == {2}

    header = header_dict(tmp_path)
    assert header['schedule.regime'] == 'table1'
    assert header['compressor.label'] == results['header']['compressor.label']
    assert header['preset'] == 'rcp-sgd-2'
    assert header['seeds'] == '0,1'


def test_privacy_preset_records_delta():
    config = parse_config(SMALL, preset='rcp-sgd-5')
    results = ExperimentRunner().execute(config, write=False)
    assert results['header']['privacy.delta'] == pytest.approx(0.8)
    assert 'output_dir' not in results


def test_theorem_regime_attaches_ledger(tmp_path):
    text = SMALL + ('algorithm=rcp_sgd\nschedule.regime=theorem1\nschedule.beta1=2\n'
                    'schedule.beta2=1\nschedule.omega=10\ncompressor.kind=identity\n')
    results = ExperimentRunner(str(tmp_path)).execute(parse_config(text))

    assert results['ledger'] is not None
    assert (tmp_path / 'ledger_theorem1.csv').exists()
    header = results['header']
    assert 'ledger.feasible' in header
    assert header['certificate.r'] == pytest.approx(1.0)
    assert header['schedule.alpha_x'] == pytest.approx(0.5)


def test_dsgd_run_has_no_schedule(tmp_path):
    results = ExperimentRunner(str(tmp_path)).execute(parse_config(SMALL, preset='dsgd'))
    assert results['successful'] == 1
    assert results['ledger'] is None
    assert 'schedule.unmapped' not in results['header']
    assert not (tmp_path / 'ledger_theorem1.csv').exists()


def test_attack_campaign_writes_its_files(tmp_path):
    text = SMALL + 'attack.instances=2\nattack.iters=200\nattack.agent=1\n'
    config = parse_config(text, preset='rcp-sgd-4')
    results = ExperimentRunner(str(tmp_path)).execute_attack(config)

    assert len(results['summary']) == 4
    for name in ('attack_summary.csv', 'attack_curves.csv', 'header.csv'):
        assert (tmp_path / name).exists()
    assert 'attack.optimizer' in header_dict(tmp_path)


def test_attack_rejects_quadratic_problem():
    config = parse_config(SMALL + 'problem.kind=pl_quadratic\n', preset='rcp-sgd-2')
    with pytest.raises(ConfigError) as err:
        ExperimentRunner().execute_attack(config, write=False)
    assert err.value.key == 'problem.kind'


def test_cli_certify_exits_cleanly(tmp_path):
    with pytest.raises(SystemExit) as exit_info:
        main(['certify', 'identity', '--samples', '20', '--trials', '5', '--out', str(tmp_path)])
    assert exit_info.value.code == 0
    assert (tmp_path / 'certificate.csv').exists()


def test_cli_ledger_suggest_exits_cleanly(tmp_path):
    argv = ['ledger', 'theorem3', '--suggest', '--L-f', '1', '--lambda-min', '0.38', '--lambda-max', '4',
            '--phi1', '0.4', '--r0', '0.1', '--nu', '1', '--out', str(tmp_path)]
    with pytest.raises(SystemExit) as exit_info:
        main(argv)
    assert exit_info.value.code == 0
    assert (tmp_path / 'ledger_theorem3.csv').exists()


def test_cli_ledger_without_parameters_fails(tmp_path):
    with pytest.raises(SystemExit) as exit_info:
        main(['ledger', 'theorem1', '--out', str(tmp_path)])
    assert exit_info.value.code == 1


def test_wire_attack_through_the_runner(tmp_path):
    text = SMALL + ('attack.mode=wire\nproblem.batch=1\nattack.every=5\nattack.iters=200\n'
                    'attack.noise_std=0\n')
    results = ExperimentRunner(str(tmp_path)).execute_attack(parse_config(text, preset='rcp-sgd-5'))
    assert list(results['steps']['step']) == [0, 5, 10, 15]
    assert (tmp_path / 'attack_steps.csv').exists()
    assert header_dict(tmp_path)['attack.mode'] == 'wire'


def test_wire_attack_needs_single_sample_batches():
    config = parse_config(SMALL + 'attack.mode=wire\n', preset='rcp-sgd-5')
    with pytest.raises(ConfigError) as err:
        ExperimentRunner().execute_attack(config, write=False)
    assert err.value.key == 'problem.batch'


def fail_on_optimum(*args, **kwargs):
    raise AssertionError("optimum recomputed")


def test_synthetic_optimum_is_cached_in_the_output_dir(tmp_path, monkeypatch):
    text = 'T=5\nn=4\nproblem.samples=40\nproblem.fstar_steps=200\n'
    first = ExperimentRunner(str(tmp_path)).execute(parse_config(text, preset='dsgd'), write=False)
    assert first['header']['problem.f_star'] is not None
    assert len(list(tmp_path.glob('optimum_*.fstar'))) == 1

    monkeypatch.setattr(problems, 'compute_logistic_optimum', fail_on_optimum)
    again = ExperimentRunner(str(tmp_path)).execute(parse_config(text, preset='dsgd'), write=False)
    assert again['header']['problem.f_star'] == first['header']['problem.f_star']


def test_attack_skips_the_optimum(tmp_path, monkeypatch):
    monkeypatch.setattr(problems, 'compute_logistic_optimum', fail_on_optimum)
    text = 'T=5\nn=4\nproblem.samples=40\nattack.instances=1\nattack.iters=50\n'
    results = ExperimentRunner(str(tmp_path)).execute_attack(parse_config(text, preset='rcp-sgd-4'))
    assert len(results['summary']) == 2
    assert not list(tmp_path.glob('optimum_*'))


@pytest.mark.slow
def test_growing_omega_consensus_decays_quadratically(tmp_path):
    problem = make_pl_quadratic(8, 10, seed=0)
    low, high = beta0_interval(problem.nu, 0.2, 0.5)
    text = ('algorithm=rcp_sgd\nT=2000\nn=8\nd=10\nseeds=0,1,2,3,4,5,6,7,8,9\nmetrics_every=10\n'
            'problem.kind=pl_quadratic\nproblem.batch=1\ncompressor.kind=identity\n'
            'schedule.regime=theorem3\nschedule.beta1=2\nschedule.beta2=0.2\nschedule.t1=100\n'
            f'schedule.beta0={(low + high) / 2!r}\n')
    results = ExperimentRunner(str(tmp_path)).execute(parse_config(text), write=False)

    assert results['diverged'] == 0
    aggregate = results['aggregate']
    series = np.column_stack([aggregate['step'], aggregate['consensus_err_mean']])
    slope = loglog_slope(series, window=(200, 2000))
    assert -2.6 <= slope <= -1.4


@pytest.mark.slow
def test_optimality_gap_shrinks_with_more_agents(tmp_path):
    gaps = []
    for n in (2, 4, 8):
        low, high = beta0_interval(make_pl_quadratic(n, 10, seed=0).nu, 0.2, 0.5)
        text = (f'algorithm=rcp_sgd\nT=2000\nn={n}\nd=10\nseeds={",".join(str(s) for s in range(20))}\n'
                'metrics_every=50\nproblem.kind=pl_quadratic\nproblem.batch=1\ncompressor.kind=identity\n'
                'schedule.regime=theorem3\nschedule.beta1=2\nschedule.beta2=0.2\nschedule.t1=100\n'
                f'schedule.beta0={(low + high) / 2!r}\n')
        results = ExperimentRunner(str(tmp_path)).execute(parse_config(text), write=False)
        assert results['diverged'] == 0
        aggregate = results['aggregate']
        gaps.append(aggregate['opt_gap_mean'].iloc[-1])

    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] / gaps[0] <= 0.6


@pytest.mark.slow
def test_compressed_rows_beat_dsgd_per_bit_on_the_synthetic_set(tmp_path):
    def trace(preset, T):
        text = f'T={T}\nproblem.fstar=false\nmetrics_every=10\n'
        results = ExperimentRunner(str(tmp_path)).execute(parse_config(text, preset=preset), write=False)
        assert results['diverged'] == 0
        return results['traces'][0]

    dsgd = trace('dsgd', 500)
    budget = dsgd['bits_cum'].iloc[-1]
    assert budget == 500 * 10 * 32 * 9

    frames = {preset: trace(preset, 3000) for preset in ('rcp-sgd-1', 'rcp-sgd-2', 'rcp-sgd-3', 'rcp-sgd-4')}
    dsgd_residual = dsgd['residual'].iloc[-1]
    for preset in ('rcp-sgd-2', 'rcp-sgd-3', 'rcp-sgd-4'):
        assert residual_at_bits(frames[preset], budget) <= dsgd_residual

    def at_2000(frame):
        return frame.loc[frame['step'] == 2000, 'residual'].iloc[0]

    for improved, plain in (('rcp-sgd-2', 'rcp-sgd-1'), ('rcp-sgd-4', 'rcp-sgd-3')):
        level = max(at_2000(frames[improved]), at_2000(frames[plain]))
        assert bits_to_reach(frames[improved], level) <= bits_to_reach(frames[plain], level)
