import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.simulation.randomness import RandomStreams
from src.utils.error_handler import DatasetError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_LABEL_MAP: Dict[str, int] = {'0': -1, '1': 1, '-1': -1}
PARTITION_STRATEGIES = ('round_robin', 'contiguous')


@dataclass
class Dataset:
    """Feature matrix (m, d) with labels in {-1, +1}"""
    features: np.ndarray
    labels: np.ndarray
    source: str = 'synthetic'
    encoding: str = ''

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx], self.source, self.encoding)

    def digest(self) -> str:
        """sha256 over features and labels, stable across runs"""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.float64).tobytes())
        return h.hexdigest()


def _canonical_label(value: str) -> str:
    text = str(value).strip()
    try:
        number = float(text)
    except ValueError:
        return text
    return str(int(number)) if number.is_integer() else text


class DatasetExtractor:
    """Extract labelled samples from CSV files"""

    def __init__(self, label_map: Optional[Dict[str, int]] = None, header: bool = True):
        self.label_map = {_canonical_label(k): int(v) for k, v in (label_map or DEFAULT_LABEL_MAP).items()}
        bad = [k for k, v in self.label_map.items() if v not in (-1, 1)]
        if bad:
            raise ParameterError(f"label map must target {{-1, +1}}, offending keys: {bad}", condition="labels∈{−1,+1}")
        self.header = header

    def _row_number(self, position: int) -> int:
        return position + (2 if self.header else 1)

    def load_csv_dataset(self, path: str, label_column: Union[str, int], normalize: bool = True) -> Dataset:
        """Read a numeric CSV; min-max normalise features, map labels to {-1, +1}"""
        try:
            raw = pd.read_csv(path, header=0 if self.header else None, dtype=str,
                              skipinitialspace=True, encoding='utf-8', keep_default_na=False)
        except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
            raise DatasetError(f"cannot read {path}: {e}") from e

        if raw.empty:
            raise DatasetError(f"{path} has no data rows")

        if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.lstrip('-').isdigit()
                                             and label_column not in raw.columns):
            position = int(label_column)
            if position < 0:
                position += raw.shape[1]
            if not 0 <= position < raw.shape[1]:
                raise DatasetError(f"label column index {position} out of range")
            label_name = raw.columns[position]
        else:
            if label_column not in raw.columns:
                raise DatasetError(f"label column '{label_column}' not found")
            label_name = label_column

        feature_frame = raw.drop(columns=[label_name])
        numeric = feature_frame.apply(pd.to_numeric, errors='coerce')
        bad_rows = ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
        if bad_rows.any():
            position = int(np.flatnonzero(bad_rows)[0])
            raise DatasetError("unparseable feature value", row=self._row_number(position))

        labels = np.empty(len(raw))
        for position, value in enumerate(raw[label_name]):
            key = _canonical_label(value)
            if key not in self.label_map:
                raise DatasetError(f"unseen label value '{value}'", row=self._row_number(position))
            labels[position] = self.label_map[key]

        features = numeric.to_numpy(dtype=float)
        if normalize:
            features = min_max_normalize(features)

        encoding = (f"min-max={'on' if normalize else 'off'}; labels "
                    + ','.join(f"{k}->{v:+d}" for k, v in sorted(self.label_map.items())))
        dataset = Dataset(features, labels, source=str(path), encoding=encoding)
        logger.info(f"✅ Loaded {dataset.size} samples × {dataset.dim} features from {path}")
        return dataset


def min_max_normalize(features: np.ndarray) -> np.ndarray:
    """Per column (v - min)/(max - min); constant columns map to 0"""
    low = features.min(axis=0)
    span = features.max(axis=0) - low
    out = np.zeros_like(features, dtype=float)
    varying = span > 0
    out[:, varying] = (features[:, varying] - low[varying]) / span[varying]
    return out


def load_csv_dataset(path: str, label_column: Union[str, int], normalize: bool = True,
                     header: bool = True, label_map: Optional[Dict[str, int]] = None) -> Dataset:
    return DatasetExtractor(label_map=label_map, header=header).load_csv_dataset(path, label_column, normalize)


def partition(dataset: Dataset, n: int, strategy: str = 'round_robin',
              seed: Optional[int] = None) -> List[Dataset]:
    """
    Disjoint cover into n agent shards with sizes differing by at most one.

    round_robin deals a (seeded) shuffle of the rows; contiguous keeps file
    order and ignores the seed.
    """
    if strategy not in PARTITION_STRATEGIES:
        raise ParameterError(f"unknown partition strategy '{strategy}'", condition="problem.partition")
    if n < 1 or n > dataset.size:
        raise ParameterError(f"cannot split {dataset.size} samples across {n} agents", condition="n≤samples")

    order = np.arange(dataset.size)
    if strategy == 'round_robin':
        if seed is not None:
            order = RandomStreams(seed).stream('partition').permutation(dataset.size)
        shards = [order[i::n] for i in range(n)]
    else:
        shards = np.array_split(order, n)
    return [dataset.subset(shard) for shard in shards]


def make_logistic_dataset(samples: int = 286, dim: int = 9, seed: int = 0) -> Dataset:
    """Planted-model binary classification set with features already in [0, 1]"""
    rng = RandomStreams(seed).stream('problem')
    features = rng.random((samples, dim))
    weights = 3.0 * rng.standard_normal(dim)
    scores = features @ weights
    scores = scores - np.median(scores) + 0.5 * rng.standard_normal(samples)
    labels = np.where(scores >= 0, 1.0, -1.0)
    return Dataset(features, labels, source=f'synthetic(samples={samples},dim={dim},seed={seed})',
                   encoding='planted linear model; features uniform [0,1]')
