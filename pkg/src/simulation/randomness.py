"""Counter-style random streams keyed by (master seed, agent, step, purpose)."""

from typing import Dict

import numpy as np

from src.utils.error_handler import ParameterError

PURPOSE_TAGS: Dict[str, int] = {
    'init': 1,
    'compress': 2,
    'minibatch': 3,
    'noise': 4,
    'attack': 5,
    'certify': 6,
    'partition': 7,
    'problem': 8,
}


class RandomStreams:
    """Derives an independent generator per (agent, step, purpose); draw order across agents is irrelevant"""

    def __init__(self, seed: int):
        if int(seed) != seed or seed < 0:
            raise ParameterError(f"seed must be a nonnegative integer, got {seed}", condition="seed≥0")
        self.seed = int(seed)

    def stream(self, purpose: str, agent: int = 0, step: int = 0) -> np.random.Generator:
        if purpose not in PURPOSE_TAGS:
            raise ParameterError(f"unknown stream purpose '{purpose}'", condition="purpose")
        return np.random.default_rng([self.seed, int(agent), int(step), PURPOSE_TAGS[purpose]])
