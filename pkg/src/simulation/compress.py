"""
Stochastic compressors with relative + absolute error, the suppression
(privacy) wrapper, bit accounting and Monte-Carlo certification.

A compressor C satisfies  E||C(x)/r - x||^2 <= (1 - phi)||x||^2 + sigma_c.
Every kernel works on a batch of row vectors so certification can draw many
trials per point in one call; `compress` is the single-vector entry point.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.utils.error_handler import CertificationError, InputError, ParameterError

logger = logging.getLogger(__name__)

IDENTITY = 'identity'
QUANTIZER = 'quantizer_b'
SIGN_NORM = 'sign_norm'
QUANTIZER_IMPROVED = 'quantizer_b_improved'
SIGN_NORM_IMPROVED = 'sign_norm_improved'
ZERO = 'zero'

KINDS = (IDENTITY, QUANTIZER, SIGN_NORM, QUANTIZER_IMPROVED, SIGN_NORM_IMPROVED, ZERO)
QUANTIZER_KINDS = (QUANTIZER, QUANTIZER_IMPROVED)
IMPROVED_KINDS = (QUANTIZER_IMPROVED, SIGN_NORM_IMPROVED)

FLOAT_NORM_BITS = 32
ROUNDED_NORM_BITS = 16
# unsigned 16-bit rounded norm
ROUNDED_NORM_LIMIT = 2 ** ROUNDED_NORM_BITS

DEFAULT_PHI_GRID = np.round(np.arange(1, 101) * 0.01, 2)
DEFAULT_SIGMA_GRID = np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 121)])


@dataclass(frozen=True)
class CompressorSpec:
    kind: str = IDENTITY
    bits: int = 2
    privacy_q: float = 0.0
    scale_r: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown compressor kind '{self.kind}'", condition="compressor.kind")
        if self.kind in QUANTIZER_KINDS and (int(self.bits) != self.bits or self.bits < 1):
            raise ParameterError(f"quantizer needs b ≥ 1 bits, got {self.bits}", condition="b≥1")
        # q = 1 is accepted as the degenerate always-suppress boundary
        if not (0.0 <= self.privacy_q <= 1.0):
            raise ParameterError(f"privacy_q must lie in [0, 1), got {self.privacy_q}", condition="0≤q<1")
        if not self.scale_r > 0:
            raise ParameterError(f"scale_r must be positive, got {self.scale_r}", condition="r>0")

    @property
    def label(self) -> str:
        name = f"{self.kind}({self.bits})" if self.kind in QUANTIZER_KINDS else self.kind
        return f"{name}+q{self.privacy_q:g}" if self.privacy_q > 0 else name


@dataclass
class CompressedMessage:
    payload: np.ndarray
    bits: int
    suppressed: bool = False


@dataclass(frozen=True)
class Certificate:
    kind: str
    r: float
    phi: float
    sigma_c: float
    violation_rate: float
    samples: int = 0
    trials_per_sample: int = 0
    domain_radius: float = 0.0

    @property
    def r0(self) -> float:
        return 2 * self.r ** 2 * (1 - self.phi) + 2 * (1 - self.r) ** 2

    def to_row(self) -> Dict[str, object]:
        return {
            'kind': self.kind,
            'r': self.r,
            'phi': self.phi,
            'sigma_c': self.sigma_c,
            'violation_rate': self.violation_rate,
        }


def phi_round(v: float, rng: np.random.Generator) -> int:
    """Unbiased stochastic rounding: floor(v) + 1 with probability v - floor(v)"""
    if not math.isfinite(v) or v < 0:
        raise InputError(f"stochastic rounding needs a finite nonnegative input, got {v}")
    base = math.floor(v)
    frac = v - base
    return int(base) + (1 if rng.random() < frac else 0)


def _phi_round_rows(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    base = np.floor(values)
    return base + (rng.random(values.shape) < (values - base))


def _row_norms(rows: np.ndarray) -> np.ndarray:
    # scaled by the row max so huge (x - x_c)/h_k cannot overflow when squared
    peak = np.max(np.abs(rows), axis=1)
    safe = np.where(peak > 0, peak, 1.0)
    return peak * np.sqrt(np.sum((rows / safe[:, None]) ** 2, axis=1))


def _sign_norm_rows(rows: np.ndarray, spec: CompressorSpec, rng: np.random.Generator) -> np.ndarray:
    scale = np.max(np.abs(rows), axis=1)
    if spec.kind == SIGN_NORM_IMPROVED:
        scale = _phi_round_rows(scale, rng)
    return (scale / 2)[:, None] * np.sign(rows)


def _quantizer_rows(rows: np.ndarray, spec: CompressorSpec, rng: np.random.Generator) -> np.ndarray:
    d = rows.shape[1]
    levels = 2.0 ** (spec.bits - 1)
    xi = 1 + min(d / levels ** 2, math.sqrt(d) / levels)

    norms = _row_norms(rows)
    safe = np.where(norms > 0, norms, 1.0)
    dither = rng.random(rows.shape)
    magnitude = np.floor(levels * np.abs(rows) / safe[:, None] + dither)

    prefactor = _phi_round_rows(norms, rng) if spec.kind == QUANTIZER_IMPROVED else norms
    out = (prefactor / xi)[:, None] * np.sign(rows) * magnitude / levels
    out[norms == 0] = 0.0
    return out


def _kernel(rows: np.ndarray, spec: CompressorSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == IDENTITY:
        return rows.copy()
    if spec.kind == ZERO:
        return np.zeros_like(rows)
    if spec.kind in (SIGN_NORM, SIGN_NORM_IMPROVED):
        return _sign_norm_rows(rows, spec, rng)
    return _quantizer_rows(rows, spec, rng)


def compress_rows(spec: CompressorSpec, rows: np.ndarray,
                  rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Compress each row independently; returns (payloads, suppressed mask)"""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if spec.privacy_q > 0:
        # suppression coin drawn first, independent of the input
        suppressed = rng.random(rows.shape[0]) < spec.privacy_q
    else:
        suppressed = np.zeros(rows.shape[0], dtype=bool)

    payloads = _kernel(rows, spec, rng)
    payloads[suppressed] = 0.0
    return payloads, suppressed


def compress(spec: CompressorSpec, x: Sequence[float], rng: np.random.Generator) -> CompressedMessage:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InputError(f"compressor input must be a nonempty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("compressor input has non-finite entries")

    payloads, suppressed = compress_rows(spec, x[None, :], rng)
    flag = bool(suppressed[0])
    return CompressedMessage(payload=payloads[0], bits=message_bits(spec, x.size, flag), suppressed=flag)


def bit_cost(spec: CompressorSpec, d: int) -> int:
    """Encoded size of an unsuppressed message of dimension d"""
    if d < 1:
        raise InputError(f"dimension must be ≥ 1, got {d}")
    if spec.kind == IDENTITY:
        bits = FLOAT_NORM_BITS * d
    elif spec.kind == ZERO:
        bits = 0
    elif spec.kind == QUANTIZER:
        bits = FLOAT_NORM_BITS + d * (spec.bits + 1)
    elif spec.kind == QUANTIZER_IMPROVED:
        bits = ROUNDED_NORM_BITS + d * (spec.bits + 1)
    elif spec.kind == SIGN_NORM:
        bits = FLOAT_NORM_BITS + d
    else:
        bits = ROUNDED_NORM_BITS + d
    return bits + (1 if spec.privacy_q > 0 else 0)


def message_bits(spec: CompressorSpec, d: int, suppressed: bool) -> int:
    return 1 if suppressed else bit_cost(spec, d)


def _sample_ball(dim: int, samples: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    directions = rng.standard_normal((samples, dim))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = radius * rng.random(samples)
    radii[0] = radius
    return directions * radii[:, None]


def error_profile(spec: CompressorSpec, points: np.ndarray, r: float, trials: int,
                  rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per point: ||x||^2, mean of ||C(x)/r - x||^2 over trials, and a 3-sigma Monte-Carlo tolerance"""
    norms_sq = np.sum(points ** 2, axis=1)
    mean_err = np.empty(len(points))
    tolerance = np.empty(len(points))
    for idx, point in enumerate(points):
        payloads, _ = compress_rows(spec, np.repeat(point[None, :], trials, axis=0), rng)
        errors = np.sum((payloads / r - point) ** 2, axis=1)
        mean_err[idx] = errors.mean()
        tolerance[idx] = 3 * errors.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return norms_sq, mean_err, tolerance


def _violations(norms_sq: np.ndarray, mean_err: np.ndarray, phi: float, sigma_c: float) -> np.ndarray:
    bound = (1 - phi) * norms_sq + sigma_c
    return mean_err > bound + 1e-12 * (1 + bound)


def certify(spec: CompressorSpec, r: Optional[float] = None, domain_radius: float = 10.0,
            samples: int = 1000, trials_per_sample: int = 200,
            rng: Optional[np.random.Generator] = None, dim: int = 9,
            points: Optional[np.ndarray] = None, max_violation: float = 0.0,
            phi_grid: np.ndarray = DEFAULT_PHI_GRID,
            sigma_grid: np.ndarray = DEFAULT_SIGMA_GRID) -> Certificate:
    """
    Find the grid pair (phi, sigma_c) with the smallest sigma_c, then the largest
    phi, for which the compressor bound holds on every sampled point.

    Args:
        spec: compressor under test
        r: scaling (defaults to spec.scale_r)
        domain_radius: sampled points lie in the ball of this radius
        samples, trials_per_sample: Monte-Carlo sizes
        points: explicit evaluation points; overrides sampling
        max_violation: fraction of points allowed outside the bound after tolerance

    Returns:
        Certificate with the raw violation rate at the reported pair
    """
    rng = rng if rng is not None else np.random.default_rng()
    r = spec.scale_r if r is None else r
    if r <= 0:
        raise ParameterError(f"scaling r must be positive, got {r}", condition="r>0")
    if domain_radius <= 0:
        raise ParameterError(f"domain_radius must be positive, got {domain_radius}", condition="domain_radius>0")

    if points is None:
        if samples < 100:
            raise ParameterError(f"certification needs ≥ 100 samples, got {samples}", condition="samples≥100")
        points = _sample_ball(dim, samples, domain_radius, rng)
    points = np.atleast_2d(np.asarray(points, dtype=float))

    if spec.kind in IMPROVED_KINDS and np.max(np.linalg.norm(points, axis=1)) >= ROUNDED_NORM_LIMIT:
        raise InputError(f"{spec.kind} encodes the norm in {ROUNDED_NORM_BITS} bits; inputs must have ‖x‖ < {ROUNDED_NORM_LIMIT}")

    norms_sq, mean_err, tolerance = error_profile(spec, points, r, trials_per_sample, rng)

    best: Optional[Tuple[float, float]] = None
    for phi in phi_grid:
        slack = mean_err - tolerance - (1 - phi) * norms_sq
        if max_violation > 0:
            required = float(np.quantile(slack, 1 - max_violation, method='higher'))
        else:
            required = float(slack.max())
        required = max(required, 0.0)
        idx = int(np.searchsorted(sigma_grid, required, side='left'))
        if idx >= len(sigma_grid):
            continue
        candidate = (float(sigma_grid[idx]), float(phi))
        if best is None or candidate[0] < best[0] or (candidate[0] == best[0] and candidate[1] > best[1]):
            best = candidate

    if best is None:
        ratio = mean_err / np.where(norms_sq > 0, norms_sq, 1.0)
        raise CertificationError(
            f"no feasible (phi, sigma_c) on grid for {spec.label}",
            diagnostics={
                'max_mean_error': float(mean_err.max()),
                'max_relative_error': float(ratio.max()),
                'max_norm_sq': float(norms_sq.max()),
            },
        )

    sigma_c, phi = best
    violation_rate = float(np.mean(_violations(norms_sq, mean_err, phi, sigma_c)))
    logger.debug(f"🔍 Certified {spec.label}: phi={phi}, sigma_c={sigma_c:.3g}, violations={violation_rate:.3%}")
    return Certificate(
        kind=spec.label,
        r=float(r),
        phi=phi,
        sigma_c=sigma_c,
        violation_rate=violation_rate,
        samples=len(points),
        trials_per_sample=trials_per_sample,
        domain_radius=float(domain_radius),
    )


def check_certificate(spec: CompressorSpec, phi: float, sigma_c: float, points: np.ndarray,
                      trials_per_sample: int, rng: np.random.Generator, r: Optional[float] = None,
                      max_violation: float = 0.01) -> bool:
    """True when (phi, sigma_c) holds on the points up to Monte-Carlo tolerance"""
    r = spec.scale_r if r is None else r
    norms_sq, mean_err, tolerance = error_profile(spec, np.atleast_2d(points), r, trials_per_sample, rng)
    rate = float(np.mean(_violations(norms_sq, mean_err - tolerance, phi, sigma_c)))
    return rate <= max_violation


def wrap_certificate(base: Certificate, q: float) -> Certificate:
    """Certificate implied for the suppression-wrapped compressor: (phi(1-q), (1-q)sigma_c)"""
    if not (0.0 <= q < 1.0):
        raise ParameterError(f"privacy_q must lie in [0, 1), got {q}", condition="0≤q<1")
    return Certificate(
        kind=f"{base.kind}+q{q:g}",
        r=base.r,
        phi=base.phi * (1 - q),
        sigma_c=base.sigma_c * (1 - q),
        violation_rate=base.violation_rate,
        samples=base.samples,
        trials_per_sample=base.trials_per_sample,
        domain_radius=base.domain_radius,
    )


def privacy_delta(spec: CompressorSpec) -> Optional[float]:
    """delta of the (0, delta)-DP guarantee of the suppression wrapper"""
    return 1 - spec.privacy_q if spec.privacy_q > 0 else None
