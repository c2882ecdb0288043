import numpy as np
import pytest

from src.extractors.dataset_extractor import (
    DatasetExtractor, load_csv_dataset, make_logistic_dataset, min_max_normalize, partition,
)
from src.utils.error_handler import DatasetError, ParameterError


@pytest.fixture
def csv_path(tmp_path):
    path = tmp_path / 'samples.csv'
    path.write_text("a,b,label\n1,10,1\n3,10,0\n2,10,1\n5,10,0\n", encoding='utf-8')
    return str(path)


def test_load_normalizes_and_maps_labels(csv_path):
    data = load_csv_dataset(csv_path, 'label')
    assert data.size == 4
    assert data.dim == 2
    assert np.allclose(data.features[:, 0], [0.0, 0.5, 0.25, 1.0])
    # constant column maps to 0
    assert np.allclose(data.features[:, 1], 0.0)
    assert list(data.labels) == [1, -1, 1, -1]
    assert 'min-max=on' in data.encoding


def test_label_column_by_negative_index(csv_path):
    by_name = load_csv_dataset(csv_path, 'label')
    by_index = load_csv_dataset(csv_path, '-1')
    assert np.array_equal(by_name.labels, by_index.labels)
    assert by_name.digest() == by_index.digest()


def test_unparseable_feature_reports_row(tmp_path):
    path = tmp_path / 'broken.csv'
    path.write_text("a,label\n1,1\nx,0\n", encoding='utf-8')
    with pytest.raises(DatasetError) as err:
        load_csv_dataset(str(path), 'label')
    assert err.value.row == 3


def test_unseen_label_reports_row(tmp_path):
    path = tmp_path / 'labels.csv'
    path.write_text("a,label\n1,1\n2,7\n", encoding='utf-8')
    with pytest.raises(DatasetError) as err:
        load_csv_dataset(str(path), 'label')
    assert err.value.row == 3


def test_missing_file_and_column(csv_path, tmp_path):
    with pytest.raises(DatasetError):
        load_csv_dataset(str(tmp_path / 'nope.csv'), 'label')
    with pytest.raises(DatasetError):
        load_csv_dataset(csv_path, 'target')


def test_label_map_must_target_signs():
    with pytest.raises(ParameterError):
        DatasetExtractor(label_map={'2': 0})


def test_min_max_normalize_range():
    out = min_max_normalize(np.array([[1.0, -2.0], [3.0, 2.0], [2.0, 0.0]]))
    assert out.min() == 0.0 and out.max() == 1.0


def test_partition_is_a_balanced_disjoint_cover():
    data = make_logistic_dataset(samples=23, dim=3)
    for strategy in ('round_robin', 'contiguous'):
        shards = partition(data, 5, strategy)
        sizes = [shard.size for shard in shards]
        assert sum(sizes) == 23
        assert max(sizes) - min(sizes) <= 1
        rows = np.vstack([shard.features for shard in shards])
        assert len({tuple(row) for row in rows}) == 23


def test_contiguous_partition_keeps_file_order_under_a_seed():
    data = make_logistic_dataset(samples=10, dim=2)
    shards = partition(data, 2, 'contiguous', seed=7)
    assert np.array_equal(shards[0].features, data.features[:5])
    assert np.array_equal(shards[1].features, data.features[5:])

    dealt = partition(data, 2, 'round_robin', seed=7)
    assert dealt[0].size == 5
    assert partition(data, 2, 'round_robin', seed=7)[0].digest() == dealt[0].digest()


def test_partition_guards():
    data = make_logistic_dataset(samples=4, dim=2)
    with pytest.raises(ParameterError):
        partition(data, 5)
    with pytest.raises(ParameterError):
        partition(data, 2, strategy='random')


def test_synthetic_dataset_is_reproducible():
    a = make_logistic_dataset(seed=3)
    b = make_logistic_dataset(seed=3)
    assert a.digest() == b.digest()
    assert a.size == 286 and a.dim == 9
    assert set(np.unique(a.labels)) == {-1.0, 1.0}
    assert a.features.min() >= 0 and a.features.max() <= 1
