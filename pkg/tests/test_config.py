import pytest

from src.harness.config import parse_config, serialize_config
from src.harness.presets import PRESETS
from src.utils.error_handler import ConfigError


def test_bare_preset_name():
    config = parse_config('rcp-sgd-2')
    assert config.preset == 'rcp-sgd-2'
    assert config.algorithm == 'rcp_sgd'
    assert config.compressor['kind'] == 'quantizer_b_improved'
    assert config.schedule['regime'] == 'table1'
    assert config.schedule_params() == {'gamma': 2.0, 'omega': 0.5, 'eta0': 0.08, 'eta_decay': 0.01,
                                        'alpha_x': 0.8}
    assert config.T == 2000 and config.n == 10
    assert config.problem['batch'] == 8


def test_every_preset_parses():
    for name in PRESETS:
        assert parse_config(name).preset == name


def test_privacy_preset_and_missing_alpha():
    assert parse_config('rcp-sgd-5').compressor['privacy_q'] == 0.2
    assert parse_config('rcp-sgd-1').schedule['alpha_x'] is None
    assert parse_config('rcp-sgd-1').schedule['gamma'] == 5.0


def test_file_overrides_its_preset(tmp_path):
    path = tmp_path / 'run.env'
    path.write_text("# short dsgd run\npreset=dsgd\nT=50\nseeds=0,1,2\ngraph.kind=complete\n", encoding='utf-8')
    config = parse_config(str(path))
    assert config.preset == 'dsgd'
    assert config.algorithm == 'dsgd'
    assert config.T == 50
    assert config.seeds == [0, 1, 2]
    assert config.graph['kind'] == 'complete'
    assert config.dsgd['eta'] == 0.1


def test_inline_text_with_preset_argument():
    config = parse_config("T=10\nproblem.batch=full", preset='choco-sgd')
    assert config.algorithm == 'choco_sgd'
    assert config.problem['batch'] == 'full'
    assert config.get('choco.gamma') == 0.2
    assert config.get('init.scale') == 1.0


@pytest.mark.parametrize('text, key', [
    ("algorithm=dsgd\nlearning_rate=0.1", 'learning_rate'),
    ("algorithm=dsgd\nT=ten", 'T'),
    ("algorithm=dsgd\nT=2.5", 'T'),
    ("algorithm=dsgd\nreplica_check=maybe", 'replica_check'),
    ("T=5", 'algorithm'),
    ("algorithm=rcp_sgd", 'schedule.regime'),
    ("algorithm=dsgd\nn=1", 'n'),
    ("algorithm=dsgd\ncompressor.privacy_q=1.5", 'compressor.privacy_q'),
    ("algorithm=dsgd\ngraph.kind=edge_list", 'graph.edges'),
    ("algorithm=dsgd\nattack.agent=10", 'attack.agent'),
    ("algorithm=dsgd\nattack.mode=replay", 'attack.mode'),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    assert str(err.value).startswith(f"{key}:")


def test_key_without_value():
    with pytest.raises(ConfigError) as err:
        parse_config("algorithm=dsgd\nT")
    assert err.value.key == 'T'


def test_unknown_preset():
    with pytest.raises(ConfigError) as err:
        parse_config("preset=rcp-sgd-9")
    assert err.value.key == 'preset'


def test_serialized_config_parses_back_to_the_same_run():
    config = parse_config("T=25\nseeds=3,4\nproblem.fstar=false", preset='rcp-sgd-5')
    text = serialize_config(config)
    assert 'output=' not in text
    assert 'problem.fstar=false' in text
    assert parse_config(text) == config
