"""
Run configuration.

Configs are dotenv-style `key=value` text with flat dotted keys. A config may
name a built-in preset (`preset=rcp-sgd-2`) and override any of its keys.
"""

import io
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values

from src.extractors.dataset_extractor import PARTITION_STRATEGIES
from src.harness.presets import PRESETS
from src.simulation.algorithms import ALGORITHMS, COST_MODES, REGIMES
from src.simulation.attack import DEFAULT_ITERS, DEFAULT_NOISE_STD, DEFAULT_STEP
from src.simulation.compress import KINDS
from src.simulation.problems import DEFAULT_ALPHA, DEFAULT_LAMBDA, DEFAULT_OPTIMUM_STEPS
from src.simulation.topology import GRAPH_KINDS
from src.utils.error_handler import ConfigError

logger = logging.getLogger(__name__)

PROBLEM_KINDS = ('logistic', 'pl_quadratic')
ATTACK_MODES = ('gradient', 'wire')
SCHEDULE_PARAMS = ('beta0', 'beta1', 'beta2', 'theta', 't1', 'h0', 'alpha_x', 'omega', 'gamma',
                   'eta0', 'eta_decay', 'c_tilde', 'nu')
GROUPS = ('graph', 'problem', 'compressor', 'schedule', 'dsgd', 'choco', 'attack')

_TRUE = ('true', '1', 'yes', 'on')
_FALSE = ('false', '0', 'no', 'off')


def _as_int(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"'{raw}' is not an integer")
    return int(value)


def _as_bool(raw: str) -> bool:
    text = raw.strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"'{raw}' is not a boolean")


def _as_seeds(raw: str) -> List[int]:
    return [_as_int(part) for part in raw.split(',') if part.strip()]


def _as_batch(raw: str) -> Union[str, int]:
    return 'full' if raw.strip().lower() == 'full' else _as_int(raw)


def _optional(convert: Callable) -> Callable:
    def wrapped(raw: str):
        return None if raw.strip().lower() in ('', 'none') else convert(raw)
    return wrapped


# key -> (converter, default)
KEYS: Dict[str, Tuple[Callable, object]] = {
    'algorithm': (str, None),
    'T': (_as_int, 500),
    'n': (_as_int, 10),
    'd': (_optional(_as_int), None),
    'seeds': (_as_seeds, [0]),
    'metrics_every': (_as_int, 10),
    'output': (_optional(str), None),
    'replica_check': (_as_bool, False),
    'cost_mode': (str, 'broadcast'),
    'timing': (_as_bool, False),
    'workers': (_as_int, 1),
    'init.scale': (float, 1.0),
    'graph.kind': (str, 'ring'),
    'graph.rows': (_optional(_as_int), None),
    'graph.cols': (_optional(_as_int), None),
    'graph.edges': (_optional(str), None),
    'problem.kind': (str, 'logistic'),
    'problem.csv': (_optional(str), None),
    'problem.label_column': (_optional(str), None),
    'problem.header': (_as_bool, True),
    'problem.partition': (str, 'round_robin'),
    'problem.seed': (_as_int, 0),
    'problem.samples': (_as_int, 286),
    'problem.lam': (float, DEFAULT_LAMBDA),
    'problem.alpha': (float, DEFAULT_ALPHA),
    'problem.batch': (_as_batch, 8),
    'problem.noise_std': (float, 0.1),
    'problem.rank_deficit': (_as_int, 0),
    'problem.condition': (float, 10.0),
    'problem.heterogeneity': (float, 1.0),
    'problem.fstar': (_as_bool, True),
    'problem.fstar_steps': (_as_int, DEFAULT_OPTIMUM_STEPS),
    'compressor.kind': (str, 'identity'),
    'compressor.bits': (_as_int, 2),
    'compressor.privacy_q': (float, 0.0),
    'compressor.scale_r': (float, 1.0),
    'schedule.regime': (_optional(str), None),
    **{f'schedule.{name}': (_optional(float), None) for name in SCHEDULE_PARAMS},
    'dsgd.eta': (float, 0.1),
    'choco.eta': (float, 0.1),
    'choco.gamma': (float, 0.2),
    'attack.instances': (_as_int, 20),
    'attack.agent': (_as_int, 1),
    'attack.noise_std': (float, DEFAULT_NOISE_STD),
    'attack.iters': (_as_int, DEFAULT_ITERS),
    'attack.step': (float, DEFAULT_STEP),
    'attack.x_radius': (float, 0.3),
    'attack.mode': (str, 'gradient'),
    'attack.every': (_as_int, 10),
}


@dataclass
class RunConfig:
    algorithm: str
    T: int
    n: int
    d: Optional[int]
    seeds: List[int]
    metrics_every: int
    output: Optional[str]
    replica_check: bool
    cost_mode: str
    timing: bool
    workers: int
    init_scale: float
    graph: Dict[str, object] = field(default_factory=dict)
    problem: Dict[str, object] = field(default_factory=dict)
    compressor: Dict[str, object] = field(default_factory=dict)
    schedule: Dict[str, object] = field(default_factory=dict)
    dsgd: Dict[str, object] = field(default_factory=dict)
    choco: Dict[str, object] = field(default_factory=dict)
    attack: Dict[str, object] = field(default_factory=dict)
    preset: Optional[str] = field(default=None, compare=False)

    def get(self, key: str):
        """Value by flat dotted key"""
        if key == 'init.scale':
            return self.init_scale
        if '.' in key:
            group, name = key.split('.', 1)
            return getattr(self, group)[name]
        return getattr(self, key)

    def flat(self) -> Dict[str, object]:
        return {key: self.get(key) for key in KEYS}

    def schedule_params(self) -> Dict[str, float]:
        return {name: value for name, value in self.schedule.items() if name != 'regime' and value is not None}


def _read(source: str) -> Dict[str, Optional[str]]:
    if os.path.isfile(source):
        return dict(dotenv_values(source, encoding='utf-8'))
    return dict(dotenv_values(stream=io.StringIO(source)))


def _convert(key: str, raw: Optional[str]) -> object:
    if key not in KEYS:
        raise ConfigError(key, "unknown key")
    if raw is None:
        raise ConfigError(key, "key given without a value")
    convert, _ = KEYS[key]
    try:
        return convert(str(raw).strip())
    except ValueError as e:
        raise ConfigError(key, f"type mismatch: {e}") from e


def _require(holds: bool, key: str, message: str) -> None:
    if not holds:
        raise ConfigError(key, message)


def _validate(values: Dict[str, object]) -> None:
    _require(values['algorithm'] is not None, 'algorithm', "required key missing")
    _require(values['algorithm'] in ALGORITHMS, 'algorithm', f"must be one of {ALGORITHMS}")
    _require(values['T'] >= 0, 'T', "must be ≥ 0")
    _require(values['n'] >= 2, 'n', "must be ≥ 2")
    _require(values['d'] is None or values['d'] >= 1, 'd', "must be ≥ 1")
    _require(len(values['seeds']) > 0, 'seeds', "must list at least one seed")
    _require(all(seed >= 0 for seed in values['seeds']), 'seeds', "seeds must be ≥ 0")
    _require(values['metrics_every'] >= 1, 'metrics_every', "must be ≥ 1")
    _require(values['cost_mode'] in COST_MODES, 'cost_mode', f"must be one of {COST_MODES}")
    _require(values['workers'] >= 1, 'workers', "must be ≥ 1")
    _require(values['init.scale'] > 0, 'init.scale', "must be > 0")
    _require(values['graph.kind'] in GRAPH_KINDS, 'graph.kind', f"must be one of {GRAPH_KINDS}")
    _require(values['graph.kind'] != 'edge_list' or values['graph.edges'] is not None, 'graph.edges',
             "required for graph.kind=edge_list")
    _require(values['problem.kind'] in PROBLEM_KINDS, 'problem.kind', f"must be one of {PROBLEM_KINDS}")
    _require(values['problem.partition'] in PARTITION_STRATEGIES, 'problem.partition',
             f"must be one of {PARTITION_STRATEGIES}")
    _require(values['problem.lam'] >= 0, 'problem.lam', "must be ≥ 0")
    _require(values['problem.alpha'] > 0, 'problem.alpha', "must be > 0")
    _require(values['problem.batch'] == 'full' or values['problem.batch'] >= 1, 'problem.batch', "must be ≥ 1")
    _require(values['problem.noise_std'] >= 0, 'problem.noise_std', "must be ≥ 0")
    _require(values['compressor.kind'] in KINDS, 'compressor.kind', f"must be one of {KINDS}")
    _require(values['compressor.bits'] >= 1, 'compressor.bits', "must be ≥ 1")
    _require(0 <= values['compressor.privacy_q'] <= 1, 'compressor.privacy_q', "must lie in [0, 1]")
    _require(values['compressor.scale_r'] > 0, 'compressor.scale_r', "must be > 0")
    regime = values['schedule.regime']
    _require(regime is None or regime in REGIMES, 'schedule.regime', f"must be one of {REGIMES}")
    _require(values['algorithm'] != 'rcp_sgd' or regime is not None, 'schedule.regime', "required for rcp_sgd")
    _require(values['dsgd.eta'] > 0, 'dsgd.eta', "must be > 0")
    _require(values['choco.eta'] > 0, 'choco.eta', "must be > 0")
    _require(values['choco.gamma'] > 0, 'choco.gamma', "must be > 0")
    _require(values['attack.instances'] >= 1, 'attack.instances', "must be ≥ 1")
    _require(0 <= values['attack.agent'] < values['n'], 'attack.agent', "must name an agent")
    _require(values['attack.noise_std'] >= 0, 'attack.noise_std', "must be ≥ 0")
    _require(values['attack.iters'] >= 1, 'attack.iters', "must be ≥ 1")
    _require(values['attack.mode'] in ATTACK_MODES, 'attack.mode', f"must be one of {ATTACK_MODES}")
    _require(values['attack.every'] >= 1, 'attack.every', "must be ≥ 1")


def _build(values: Dict[str, object], preset: Optional[str]) -> RunConfig:
    groups = {group: {} for group in GROUPS}
    top = {}
    for key, value in values.items():
        prefix, _, name = key.partition('.')
        if prefix in groups:
            groups[prefix][name] = value
        else:
            top[key] = value
    return RunConfig(
        algorithm=top['algorithm'], T=top['T'], n=top['n'], d=top['d'], seeds=top['seeds'],
        metrics_every=top['metrics_every'], output=top['output'], replica_check=top['replica_check'],
        cost_mode=top['cost_mode'], timing=top['timing'], workers=top['workers'], init_scale=top['init.scale'],
        preset=preset, **groups,
    )


def parse_config(source: str, preset: Optional[str] = None) -> RunConfig:
    """
    Parse a config file path, inline config text, or a bare preset name.

    Args:
        source: path to a dotenv-style file, inline `key=value` text, or a preset name
        preset: preset applied underneath the source's keys

    Returns:
        Fully validated RunConfig
    """
    if source in PRESETS and not os.path.isfile(source):
        raw: Dict[str, Optional[str]] = {}
        preset = preset or source
    else:
        raw = _read(source)

    if 'preset' in raw:
        preset = raw.pop('preset') or preset
    if preset is not None and preset not in PRESETS:
        raise ConfigError('preset', f"unknown preset '{preset}', choose from {sorted(PRESETS)}")

    values = {key: default for key, (_, default) in KEYS.items()}
    values['seeds'] = list(values['seeds'])
    layers = [PRESETS[preset]] if preset else []
    layers.append(raw)
    for layer in layers:
        for key, text in layer.items():
            values[key] = _convert(key, text)

    _validate(values)
    config = _build(values, preset)
    logger.debug(f"Parsed config: algorithm={config.algorithm}, preset={preset}, T={config.T}, n={config.n}")
    return config


def _render(value: object) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(str(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Canonical dotenv text; keys whose value is unset are omitted"""
    lines = [f"{key}={_render(value)}" for key, value in config.flat().items() if value is not None]
    return '\n'.join(lines) + '\n'
