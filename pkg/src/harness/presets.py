"""Built-in run configurations for the comparison table's algorithm rows."""

from typing import Dict

_COMMON: Dict[str, str] = {
    'T': '2000',
    'n': '10',
    'seeds': '0',
    'metrics_every': '10',
    'graph.kind': 'ring',
    'problem.kind': 'logistic',
    'problem.batch': '8',
}

_TABLE1_RCP = {
    'algorithm': 'rcp_sgd',
    'schedule.regime': 'table1',
    'schedule.gamma': '2',
    'schedule.omega': '0.5',
    'schedule.eta0': '0.08',
    'schedule.eta_decay': '0.01',
    'schedule.alpha_x': '0.8',
}


def _preset(**overrides: str) -> Dict[str, str]:
    values = dict(_COMMON)
    values.update({key.replace('__', '.'): value for key, value in overrides.items()})
    return values


def _rcp(compressor: str, **overrides: str) -> Dict[str, str]:
    values = _preset(**overrides)
    values.update({key: value for key, value in _TABLE1_RCP.items() if key not in values})
    values['compressor.kind'] = compressor
    return values


PRESETS: Dict[str, Dict[str, str]] = {
    'dsgd': _preset(algorithm='dsgd', dsgd__eta='0.1'),
    'choco-sgd': _preset(algorithm='choco_sgd', compressor__kind='quantizer_b', compressor__bits='2',
                         choco__eta='0.1', choco__gamma='0.2'),
    # no alpha_x listed for this row; make_schedule substitutes and flags the default
    'rcp-sgd-1': {key: value for key, value in _rcp('quantizer_b', schedule__gamma='5').items()
                  if key != 'schedule.alpha_x'},
    'rcp-sgd-2': _rcp('quantizer_b_improved'),
    'rcp-sgd-3': _rcp('sign_norm'),
    'rcp-sgd-4': _rcp('sign_norm_improved'),
    'rcp-sgd-5': _rcp('quantizer_b_improved', compressor__privacy_q='0.2'),
    'unrcp-sgd': _rcp('identity'),
}
