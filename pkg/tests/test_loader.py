import os

import pandas as pd

from src.loaders.trace_csv_loader import TraceCsvLoader
from src.simulation.compress import Certificate
from src.simulation.metrics import TraceRecord, records_to_frame
from src.simulation.theory import ProblemConstants, ledger_theorem1


def trace_frame():
    return records_to_frame([TraceRecord(0, 1.0, 2.0, None, 3.0, 0), TraceRecord(10, 0.1, 0.2, None, 0.3, 410)])


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv('RCPSGD_OUTPUT_DIR', str(tmp_path / 'env'))
    assert TraceCsvLoader().output_dir == str(tmp_path / 'env')
    assert TraceCsvLoader(str(tmp_path)).output_dir == str(tmp_path)


def test_trace_files_per_seed(tmp_path):
    loader = TraceCsvLoader(str(tmp_path))
    results = loader.load_traces_batch({0: trace_frame(), 5: trace_frame()})
    assert results == {'successful': 2, 'failed': 0, 'skipped': 0, 'total': 2}
    frame = pd.read_csv(tmp_path / 'trace_seed5.csv')
    assert list(frame['bits_cum']) == [0, 410]
    assert frame['opt_gap'].isna().all()
    assert frame['wall_ms'].isna().all()


def test_existing_traces_can_be_skipped(tmp_path):
    loader = TraceCsvLoader(str(tmp_path))
    loader.load_trace(trace_frame(), 0)
    results = loader.load_traces_batch({0: trace_frame()}, skip_if_exists=True)
    assert results['skipped'] == 1


def test_floats_keep_full_precision(tmp_path):
    loader = TraceCsvLoader(str(tmp_path))
    frame = records_to_frame([TraceRecord(0, 0.1 + 0.2, 1 / 3, None, 1 / 3, 0)])
    loader.load_trace(frame, 1)
    back = pd.read_csv(tmp_path / 'trace_seed1.csv', float_precision='round_trip')
    assert back.loc[0, 'consensus_err'] == 0.1 + 0.2
    assert back.loc[0, 'grad_norm_sq'] == 1 / 3


def test_header_certificates_and_ledger(tmp_path):
    loader = TraceCsvLoader(str(tmp_path))
    loader.load_header({'algorithm': 'rcp_sgd', 'output': None, 'privacy.delta': 0.8})
    header = pd.read_csv(tmp_path / 'header.csv', keep_default_na=False)
    rows = dict(zip(header['key'], header['value']))
    assert rows['algorithm'] == 'rcp_sgd'
    assert rows['output'] == ''
    assert float(rows['privacy.delta']) == 0.8

    cert = Certificate('identity', 1.0, 1.0, 0.0, 0.0)
    loader.load_certificates([cert])
    assert list(pd.read_csv(tmp_path / 'certificate.csv').columns) == ['kind', 'r', 'phi', 'sigma_c',
                                                                       'violation_rate']

    pc = ProblemConstants(L_f=1.0, lambda_min_pos=0.38, lambda_max=4.0, phi1=0.4, r0=0.1)
    path = loader.load_ledger(ledger_theorem1(pc, 20, 0.1, 10))
    assert os.path.basename(path) == 'ledger_theorem1.csv'
    ledger = pd.read_csv(path, encoding='utf-8')
    assert 'ε₄>0' in set(ledger['symbol'])


def test_connection_check(tmp_path):
    assert TraceCsvLoader(str(tmp_path / 'fresh')).test_connection()
    assert os.listdir(tmp_path / 'fresh') == []
