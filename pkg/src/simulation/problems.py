"""
Objective oracles: the nonconvex-regularised logistic model and a synthetic
P-L quadratic, both split across agents, with exact and minibatch gradients.
"""

import hashlib
import logging
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np
import scipy.linalg
from dotenv import dotenv_values, set_key
from scipy.special import expit

from src.extractors.dataset_extractor import Dataset
from src.simulation.randomness import RandomStreams
from src.utils.error_handler import InputError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.001
DEFAULT_ALPHA = 1.0
DEFAULT_OPTIMUM_STEPS = 10 ** 6

Batch = Optional[Union[int, str]]


@dataclass
class GradientSample:
    agent: int
    value: np.ndarray
    batch_indices: Optional[np.ndarray] = None


def _is_full(batch: Batch) -> bool:
    return batch is None or batch == 'full'


class Problem(ABC):
    """f(x) = (1/n) sum_i f_i(x) over n agents in dimension dim"""

    n_agents: int
    dim: int

    @abstractmethod
    def local_value(self, agent: int, x: np.ndarray) -> float:
        ...

    @abstractmethod
    def local_full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _sample_gradient(self, agent: int, x: np.ndarray, batch: int,
                         rng: np.random.Generator) -> GradientSample:
        ...

    @property
    @abstractmethod
    def smoothness(self) -> float:
        ...

    @property
    def f_star(self) -> Optional[float]:
        return None

    def local_count(self, agent: int) -> Optional[int]:
        return None

    def local_gradient(self, agent: int, x: np.ndarray, batch: Batch = None,
                       rng: Optional[np.random.Generator] = None) -> GradientSample:
        """Exact gradient for batch None/'full', otherwise an unbiased minibatch estimate"""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InputError(f"gradient requested at non-finite point for agent {agent}")
        if _is_full(batch):
            return GradientSample(agent, self.local_full_gradient(agent, x))

        batch = int(batch)
        count = self.local_count(agent)
        if batch < 1 or (count is not None and batch > count):
            raise ParameterError(f"batch {batch} invalid for agent {agent} with {count} samples",
                                 condition="batch≤samples")
        if rng is None:
            raise ParameterError("minibatch sampling needs a random stream", condition="rng")
        return self._sample_gradient(agent, x, batch, rng)

    def value(self, x: np.ndarray) -> float:
        return float(np.mean([self.local_value(i, x) for i in range(self.n_agents)]))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.mean([self.local_full_gradient(i, x) for i in range(self.n_agents)], axis=0)

    def describe(self) -> Dict[str, object]:
        return {'n_agents': self.n_agents, 'dim': self.dim, 'L_f': self.smoothness}


class LogisticNonconvexProblem(Problem):
    """Logistic loss plus the nonconvex penalty lam * sum_s alpha x_s^2 / (1 + alpha x_s^2)"""

    def __init__(self, shards: List[Dataset], lam: float = DEFAULT_LAMBDA, alpha: float = DEFAULT_ALPHA,
                 f_star: Optional[float] = None):
        if not shards:
            raise ParameterError("logistic problem needs at least one agent shard", condition="n≥1")
        dims = {shard.dim for shard in shards}
        if len(dims) != 1:
            raise ParameterError(f"agents disagree on dimension: {sorted(dims)}", condition="shared d")
        if lam < 0:
            raise ParameterError(f"lambda must be ≥ 0, got {lam}", condition="λ≥0")
        if alpha <= 0:
            raise ParameterError(f"alpha must be > 0, got {alpha}", condition="α>0")
        for shard in shards:
            if shard.size == 0:
                raise ParameterError("empty agent shard", condition="samples≥1")
            if not np.all(np.isin(shard.labels, (-1.0, 1.0))):
                raise InputError("labels must lie in {-1, +1}")
            if not np.all(np.isfinite(shard.features)):
                raise InputError("features must be finite")

        self.shards = shards
        self.n_agents = len(shards)
        self.dim = dims.pop()
        self.lam = lam
        self.alpha = alpha
        self._f_star = f_star

    def local_count(self, agent: int) -> Optional[int]:
        return self.shards[agent].size

    def regularizer_value(self, x: np.ndarray) -> float:
        ax2 = self.alpha * x ** 2
        return float(self.lam * np.sum(ax2 / (1 + ax2)))

    def regularizer_gradient(self, x: np.ndarray) -> np.ndarray:
        return 2 * self.lam * self.alpha * x / (1 + self.alpha * x ** 2) ** 2

    @staticmethod
    def loss_gradient(features: np.ndarray, labels: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Mean of -u * sigmoid(-u x.z) * z over the rows"""
        weights = labels * expit(-labels * (features @ x))
        return -(weights @ features) / len(labels)

    def local_value(self, agent: int, x: np.ndarray) -> float:
        shard = self.shards[agent]
        margins = shard.labels * (shard.features @ x)
        return float(np.mean(np.logaddexp(0.0, -margins))) + self.regularizer_value(x)

    def local_full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        shard = self.shards[agent]
        return self.loss_gradient(shard.features, shard.labels, x) + self.regularizer_gradient(x)

    def _sample_gradient(self, agent: int, x: np.ndarray, batch: int,
                         rng: np.random.Generator) -> GradientSample:
        shard = self.shards[agent]
        indices = rng.integers(0, shard.size, size=batch)
        value = self.loss_gradient(shard.features[indices], shard.labels[indices], x) + self.regularizer_gradient(x)
        return GradientSample(agent, value, indices)

    @property
    def smoothness(self) -> float:
        max_sq = max(float(np.max(np.sum(shard.features ** 2, axis=1))) for shard in self.shards)
        return 0.25 * max_sq + 2 * self.lam * self.alpha

    @property
    def f_star(self) -> Optional[float]:
        return self._f_star

    @f_star.setter
    def f_star(self, value: Optional[float]) -> None:
        self._f_star = value

    def cache_key(self) -> str:
        h = hashlib.sha256()
        for shard in self.shards:
            h.update(shard.digest().encode())
        h.update(f"lam={self.lam!r};alpha={self.alpha!r}".encode())
        return h.hexdigest()

    def describe(self) -> Dict[str, object]:
        info = super().describe()
        info.update({
            'kind': 'logistic',
            'lambda': self.lam,
            'alpha': self.alpha,
            'samples': sum(shard.size for shard in self.shards),
            'encoding': self.shards[0].encoding,
        })
        return info


def compute_logistic_optimum(problem: LogisticNonconvexProblem, steps: int = DEFAULT_OPTIMUM_STEPS,
                             tol: float = 1e-20) -> float:
    """Centralised full-gradient descent with a slowly diminishing step; returns the best value seen"""
    step0 = 1.0 / problem.smoothness
    x = np.zeros(problem.dim)
    best = problem.value(x)
    executed = 0
    for t in range(steps):
        grad = problem.gradient(x)
        if float(grad @ grad) < tol:
            break
        executed = t + 1
        x = x - step0 / (1 + t / max(steps, 1)) * grad
        if t % 1000 == 999 or t == steps - 1:
            best = min(best, problem.value(x))
    best = min(best, problem.value(x))
    logger.info(f"📊 Logistic optimum after {executed} steps: f* = {best:.12g}")
    return best


class OptimumCache:
    """
    f* stored beside the dataset as `<csv>.fstar`, keyed by a hash of (data, lambda, alpha).
    Datasets without a file cache under a directory instead (see `in_directory`).
    """

    def __init__(self, dataset_path: str):
        self.path = f"{dataset_path}.fstar"

    @classmethod
    def in_directory(cls, directory: str, problem: LogisticNonconvexProblem) -> 'OptimumCache':
        return cls(os.path.join(directory, f"optimum_{problem.cache_key()[:16]}"))

    def lookup(self, key: str) -> Optional[float]:
        if not os.path.exists(self.path):
            return None
        values = dotenv_values(self.path)
        if values.get('key') != key or values.get('f_star') is None:
            return None
        return float(values['f_star'])

    def store(self, key: str, f_star: float) -> None:
        os.makedirs(os.path.dirname(self.path) or '.', exist_ok=True)
        with open(self.path, 'a', encoding='utf-8'):
            pass
        set_key(self.path, 'key', key, quote_mode='never')
        set_key(self.path, 'f_star', repr(float(f_star)), quote_mode='never')

    def resolve(self, problem: LogisticNonconvexProblem, steps: int = DEFAULT_OPTIMUM_STEPS) -> float:
        key = problem.cache_key()
        cached = self.lookup(key)
        if cached is not None:
            logger.info(f"✅ Cached f* hit: {self.path}")
            return cached
        logger.info(f"🔍 No cached f* for this dataset/λ/α, computing ({steps} steps)...")
        value = compute_logistic_optimum(problem, steps)
        self.store(key, value)
        return value


class PLQuadraticProblem(Problem):
    """f_i(x) = 1/2 x'A_i x - b_i'x with PSD A_i; satisfies P-L with nu = smallest positive eigenvalue of mean A"""

    def __init__(self, A: np.ndarray, b: np.ndarray, noise_std: float = 0.0, rank_tol: float = 1e-10):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
            raise InputError(f"expected A (n, d, d) and b (n, d), got {A.shape} and {b.shape}")
        if not np.allclose(A, np.transpose(A, (0, 2, 1)), atol=1e-12):
            raise InputError("A_i must be symmetric")
        if noise_std < 0:
            raise ParameterError(f"noise_std must be ≥ 0, got {noise_std}", condition="noise_std≥0")

        self.A = A
        self.b = b
        self.noise_std = float(noise_std)
        self.n_agents, self.dim = b.shape

        self.Q = A.mean(axis=0)
        self.p = b.mean(axis=0)
        eigenvalues = scipy.linalg.eigh(self.Q, eigvals_only=True)
        scale = max(float(np.max(np.abs(eigenvalues))), 1.0)
        if eigenvalues[0] < -rank_tol * scale:
            raise InputError(f"average Hessian is not PSD (min eigenvalue {eigenvalues[0]:.3g})")
        positive = eigenvalues[eigenvalues > rank_tol * scale]
        if positive.size == 0:
            raise InputError("average Hessian is zero; P-L constant undefined")
        self.nu = float(positive[0])

        self.x_star = scipy.linalg.pinv(self.Q) @ self.p
        if np.linalg.norm(self.Q @ self.x_star - self.p) > 1e-8 * (1 + np.linalg.norm(self.p)):
            raise ParameterError("mean b lies outside range(Q); f is unbounded below", condition="p∈range(Q)")
        self._f_star = float(-0.5 * self.p @ self.x_star)
        self._smoothness = max(float(scipy.linalg.eigh(a, eigvals_only=True)[-1]) for a in A)

    def local_value(self, agent: int, x: np.ndarray) -> float:
        return float(0.5 * x @ self.A[agent] @ x - self.b[agent] @ x)

    def local_full_gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        return self.A[agent] @ x - self.b[agent]

    def _sample_gradient(self, agent: int, x: np.ndarray, batch: int,
                         rng: np.random.Generator) -> GradientSample:
        noise = rng.standard_normal(self.dim) * (self.noise_std / math.sqrt(batch))
        return GradientSample(agent, self.local_full_gradient(agent, x) + noise)

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x - self.p @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.Q @ x - self.p

    @property
    def smoothness(self) -> float:
        return self._smoothness

    @property
    def f_star(self) -> Optional[float]:
        return self._f_star

    def describe(self) -> Dict[str, object]:
        info = super().describe()
        info.update({'kind': 'pl_quadratic', 'nu': self.nu, 'f_star': self._f_star, 'noise_std': self.noise_std})
        return info


def make_pl_quadratic(n: int, d: int, rank_deficit: int = 0, condition: float = 10.0, seed: int = 0,
                      noise_std: float = 0.1, heterogeneity: float = 1.0) -> PLQuadraticProblem:
    """Random PSD A_i sharing one null space (dimension rank_deficit), eigenvalues in about [1/condition, 1]"""
    if not 0 <= rank_deficit < d:
        raise ParameterError(f"rank_deficit must lie in [0, {d}), got {rank_deficit}", condition="0≤rank_deficit<d")
    if condition < 1:
        raise ParameterError(f"condition must be ≥ 1, got {condition}", condition="condition≥1")

    rng = RandomStreams(seed).stream('problem')
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    basis = (q * np.sign(np.diag(r)))[:, :d - rank_deficit]
    spectrum = np.geomspace(1.0 / condition, 1.0, d - rank_deficit)

    A = np.empty((n, d, d))
    for i in range(n):
        scaled = spectrum * (0.75 + 0.5 * rng.random(spectrum.size))
        A[i] = (basis * scaled) @ basis.T
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))

    x_star = rng.standard_normal(d)
    offsets = heterogeneity * rng.standard_normal((n, d))
    offsets -= offsets.mean(axis=0)
    b = np.einsum('nij,j->ni', A, x_star) + offsets
    return PLQuadraticProblem(A, b, noise_std=noise_std)


def estimate_sigma(problem: Problem, points: int, batch: Batch, rng: np.random.Generator,
                   draws: int = 200, radius: float = 1.0, center: Optional[np.ndarray] = None) -> float:
    """Largest empirical per-agent minibatch variance E||g - grad f_i||^2 over sampled points"""
    if points < 10:
        raise ParameterError(f"need at least 10 points, got {points}", condition="points≥10")
    if _is_full(batch):
        return 0.0

    worst = 0.0
    for _ in range(points):
        x = center if center is not None else radius * rng.standard_normal(problem.dim)
        for agent in range(problem.n_agents):
            exact = problem.local_full_gradient(agent, x)
            deviations = [problem.local_gradient(agent, x, batch, rng).value - exact for _ in range(draws)]
            worst = max(worst, float(np.mean(np.sum(np.square(deviations), axis=1))))
    return worst
