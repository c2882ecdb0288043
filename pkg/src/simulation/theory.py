"""
Constant ledgers for the convergence theorems.

Each ledger evaluates every auxiliary constant of the corresponding proof
(epsilons, betas and c's for the constant-omega theorems, m's and c-bars for
the growing-omega theorem) and turns the proof's side conditions into named,
checkable inequalities. `suggest_params` searches for a parameterisation the
ledger accepts.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from src.simulation.compress import Certificate
from src.simulation.topology import SpectralBounds
from src.utils.error_handler import InputError, ParameterError, SearchFailure

logger = logging.getLogger(__name__)

DEFAULT_BETA5 = 1.0
DEFAULT_C_TILDE = 0.5
SEARCH_CEILING = 1e12

# feasibility conditions, constant-omega ledger
COND_BETA1_C0 = "β₁>c₀"
COND_OMEGA_BETA3 = "ω>β₃"
COND_ETA_BETA4 = "η<β₄"
COND_EPS1 = "ε̃₁>0"
COND_EPS4 = "ε₄>0"
COND_EPS6 = "ε₆>0"
COND_EPS10 = "ε₁₀−ηε₁₁−η²ε₁₂>0"
COND_ALPHA_R = "α_x·r<1"
# horizon-dependent omega
COND_THETA = "θ∈(0,1)"
COND_BETA2_UNIT = "β₂∈(0,1)"
COND_HORIZON = "T≥(β₃/β₂)^(1/θ)"
# growing-omega ledger
COND_BETA1_CBAR1 = "β₁>c̄₁"
COND_BETA2_CBAR2 = "0<β₂<c̄₂"
COND_T1_CBAR5 = "t₁>c̄₅"
COND_BETA0_INTERVAL = "β₀∈[c̃νβ₂/4,νβ₂/4)"
COND_H0_T1 = "h₀<1/t₁"


@dataclass(frozen=True)
class ProblemConstants:
    L_f: float
    lambda_min_pos: float
    lambda_max: float
    phi1: float
    r0: float
    sigma_sq: float = 0.0
    nu: Optional[float] = None
    r: float = 1.0
    alpha_x: Optional[float] = None
    n: int = 1
    sigma_bar: float = 0.0

    def __post_init__(self):
        if not self.L_f > 0:
            raise ParameterError(f"L_f must be positive, got {self.L_f}", condition="L_f>0")
        if self.lambda_min_pos < 0 or not self.lambda_max > 0:
            raise ParameterError("Laplacian bounds must satisfy 0 ≤ λ̲ and λ̄ > 0", condition="0<λ̲≤λ̄")
        if not 0 < self.phi1 <= 1:
            raise ParameterError(f"phi1 must lie in (0, 1], got {self.phi1}", condition="φ₁∈(0,1]")
        if self.r0 < 0 or self.sigma_sq < 0 or not self.r > 0:
            raise ParameterError("r0, sigma_sq must be ≥ 0 and r > 0", condition="r₀≥0")
        if self.nu is not None and not self.nu > 0:
            raise ParameterError(f"nu must be positive, got {self.nu}", condition="ν>0")

    @classmethod
    def from_certificate(cls, L_f: float, bounds: SpectralBounds, certificate: Certificate, alpha_x: float,
                         sigma_sq: float = 0.0, nu: Optional[float] = None, n: int = 1) -> 'ProblemConstants':
        """phi1 = alpha_x * r * phi and r0 = 2r^2(1 - phi) + 2(1 - r)^2 from a compressor certificate"""
        return cls(
            L_f=L_f,
            lambda_min_pos=bounds.lambda_min_pos,
            lambda_max=bounds.lambda_max,
            phi1=alpha_x * certificate.r * certificate.phi,
            r0=certificate.r0,
            sigma_sq=sigma_sq,
            nu=nu,
            r=certificate.r,
            alpha_x=alpha_x,
            n=n,
        )


@dataclass
class ConstantLedger:
    theorem: str
    values: Dict[str, float] = field(default_factory=dict)
    conditions: Dict[str, bool] = field(default_factory=dict)

    def __getitem__(self, symbol: str) -> float:
        return self.values[symbol]

    @property
    def violated(self):
        return [name for name, holds in self.conditions.items() if not holds]

    @property
    def feasible(self) -> bool:
        return not self.violated

    def report(self) -> pd.DataFrame:
        """Two-column (symbol, value) report; conditions report 'holds' or 'violated'"""
        rows = [(symbol, value) for symbol, value in self.values.items()]
        rows += [(name, 'holds' if holds else 'violated') for name, holds in self.conditions.items()]
        return pd.DataFrame(rows, columns=['symbol', 'value'])


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0:
        return math.inf if numerator >= 0 else -math.inf
    return numerator / denominator


def _positive_root(a: float, b: float, c: float) -> float:
    """(sqrt(b^2 + 4ac) - b) / (2c) with the c = 0 limit taken as unbounded"""
    if c == 0:
        return math.inf
    return (math.sqrt(b * b + 4 * a * c) - b) / (2 * c)


def _require_connected(pc: ProblemConstants) -> None:
    if pc.lambda_min_pos <= 0:
        raise InputError("smallest positive Laplacian eigenvalue is 0; ledger constants divide by it")


def beta0_interval(nu: float, beta2: float, c_tilde: float = DEFAULT_C_TILDE) -> Tuple[float, float]:
    """Admissible [low, high) range for beta0 in the growing-omega schedule"""
    if not 0 < c_tilde < 1:
        raise ParameterError(f"c̃ must lie in (0, 1), got {c_tilde}", condition="c̃∈(0,1)")
    return c_tilde * nu * beta2 / 4, nu * beta2 / 4


def ledger_theorem1(pc: ProblemConstants, beta1: float, beta2: float, omega: float,
                    eta: Optional[float] = None, beta5: float = DEFAULT_BETA5) -> ConstantLedger:
    """Constant-omega ledger: gamma = beta1 * omega, eta defaults to beta2 / omega"""
    _require_connected(pc)
    eta = beta2 / omega if eta is None else eta
    if min(beta1, beta2, omega, eta, beta5) <= 0:
        raise InputError("beta1, beta2, omega, eta and beta5 must be positive")

    lam, lam_bar, L = pc.lambda_min_pos, pc.lambda_max, pc.L_f
    phi1, r0, r = pc.phi1, pc.r0, pc.r
    gamma = beta1 * omega
    L2 = L ** 2

    eps1 = gamma * lam / 2 - ((omega + 4) / 4 + 5 * L2 / 4)
    eps2 = (7 + 16 / phi1) * L2 + (4 + 8 / phi1) * gamma ** 2 * lam_bar ** 2
    eps3 = 0.5 + omega ** 2 + 1.5 * gamma ** 2 * lam_bar ** 2
    eps4 = (3 * omega - 1) / 4 - 3 / lam
    eps5 = 2 * omega ** 2 * lam_bar + 1 / lam + (4 + 8 / phi1) * omega ** 2 * lam
    eps6 = 1 / 8 - (2 * (1 + beta1) ** 2 / (omega ** 2 * lam) + 1 / (omega ** 2 * lam ** 2)) * L2
    eps7 = ((1 + beta1) / (omega ** 2 * lam) + 1 / (omega ** 2 * lam ** 2) + 1.5) * L2 + L
    eps8 = (2 * (1 + beta1) ** 2 / (eta * omega ** 2 * lam) + (1 + beta1) / (omega ** 2 * lam)
            + (1 + eta) / (eta * omega ** 2 * lam ** 2) + 1.5) * L2 + L
    eps9 = 11 + 16 / phi1
    eps10 = phi1 / 2 + phi1 ** 2 / 2
    eps11 = 0.5 * (gamma + 2 * omega) * lam_bar * r0 + 2 * omega * r0
    eps12 = (8 + 7 * phi1) * gamma ** 2 * lam_bar ** 2 * r0 / phi1 + (1 + 2 * omega ** 2) * r0
    eps13 = ((beta1 * beta2 + 6 * beta2) * lam_bar * r ** 2
             + (14 * beta1 ** 2 * beta2 ** 2 * lam_bar ** 2 * r ** 2 + 2 * eta ** 2 + 4 * beta1 ** 2 * beta2 ** 2) + 1)
    eps1_tilde = gamma * lam / 2 - ((9 * omega + 4) / 4 + 5 * L2 / 4)
    eps2_tilde = eps2 + 1 + 2 * omega ** 2 + 3 * gamma ** 2 * lam_bar ** 2

    beta6 = (16 * (1 + beta1) ** 2 / lam + 8 / lam ** 2) * L2
    beta4 = min(_ratio(eps1_tilde, eps2_tilde), _ratio(eps4, eps5), _ratio(eps6, eps7),
                _positive_root(eps10, eps11, eps12), 1.0)
    beta3 = max((4 + 5 * L2) / beta5, (12 / lam + 1) / 3, math.sqrt(beta6),
                beta2 / beta4 if beta4 > 0 else math.inf, 4 * beta2 * L)
    c_check1 = (gamma * lam - omega) / (2 * gamma * lam)
    c0 = max((9 + beta5) / (2 * lam), 1.0)
    c1 = (2 * (1 + beta1) ** 2 / (beta2 * beta3 * lam) + (1 + beta1) / (beta3 ** 2 * lam)
          + 1 / (beta2 * beta3 * lam ** 2) + 1 / (beta3 ** 2 * lam ** 2) + 1.5) * L2 + L
    c2 = eta * eps1_tilde - eta ** 2 * eps2_tilde

    values = {
        'γ': gamma, 'ω': omega, 'η': eta, 'β₁': beta1, 'β₂': beta2, 'β₅': beta5,
        'ε₁': eps1, 'ε₂': eps2, 'ε₃': eps3, 'ε₄': eps4, 'ε₅': eps5, 'ε₆': eps6, 'ε₇': eps7,
        'ε₈': eps8, 'ε₉': eps9, 'ε₁₀': eps10, 'ε₁₁': eps11, 'ε₁₂': eps12, 'ε₁₃': eps13,
        'ε̃₁': eps1_tilde, 'ε̃₂': eps2_tilde,
        'β₃': beta3, 'β₄': beta4, 'β₆': beta6,
        'c₀': c0, 'c₁': c1, 'c₂': c2, 'č₁': c_check1,
    }
    conditions = {
        COND_BETA1_C0: beta1 > c0,
        COND_OMEGA_BETA3: omega > beta3,
        COND_ETA_BETA4: eta < beta4,
        COND_EPS1: eps1_tilde > 0,
        COND_EPS4: eps4 > 0,
        COND_EPS6: eps6 > 0,
        COND_EPS10: eps10 - eta * eps11 - eta ** 2 * eps12 > 0,
    }
    if pc.alpha_x is not None:
        conditions[COND_ALPHA_R] = pc.alpha_x * r < 1
    return ConstantLedger('theorem1', values, conditions)


def ledger_theorem2(pc: ProblemConstants, beta1: float, beta2: float, theta: float, T: int,
                    beta5: float = DEFAULT_BETA5) -> ConstantLedger:
    """Constant-omega ledger at omega = beta2 (T+1)^theta plus the horizon conditions"""
    if T < 0:
        raise InputError(f"horizon T must be ≥ 0, got {T}")
    omega = beta2 * (T + 1) ** theta
    ledger = ledger_theorem1(pc, beta1, beta2, omega, beta2 / omega, beta5)
    ledger.theorem = 'theorem2'

    lam = pc.lambda_min_pos
    gamma, eta = ledger['γ'], ledger['η']
    c3 = eta * (ledger['ε₄'] - eta * ledger['ε₅'])
    beta8 = max(0.5 + beta1, (gamma * lam + omega) / (2 * gamma * lam))
    base = min(ledger['c₂'], c3)
    ledger.values.update({'θ': theta, 'T': float(T), 'c₃': c3, 'β₈': beta8, 'β₁₀': base / beta8})
    if pc.nu is not None:
        ledger.values['β₉'] = min(base, pc.nu / (2 * (T + 1) ** theta)) / beta8

    ledger.conditions[COND_THETA] = 0 < theta < 1
    ledger.conditions[COND_BETA2_UNIT] = 0 < beta2 < 1
    if 0 < theta < 1 and math.isfinite(ledger['β₃']):
        ledger.conditions[COND_HORIZON] = T >= (ledger['β₃'] / beta2) ** (1 / theta)
    else:
        ledger.conditions[COND_HORIZON] = False
    return ledger


def ledger_theorem3(pc: ProblemConstants, beta0: float, beta1: float, beta2: float, t1: float,
                    c_tilde: float = DEFAULT_C_TILDE, h0: Optional[float] = None) -> ConstantLedger:
    """
    Growing-omega ledger (omega_k = beta0 (k + t1)).

    Step-dependent quantities (m6, m19) are evaluated at k = 0. Two printed
    constants are read as follows: the first m9 term as 21 beta1^2 lam_bar^2 r0 / phi1,
    and the fourth c-bar-2 candidate as 1 / (4 S) with S = lam_bar + 1/lam + (4 + 8/phi1) lam,
    the value that keeps m5 positive.
    """
    _require_connected(pc)
    if pc.nu is None:
        raise InputError("the growing-omega ledger needs the P-L constant nu")
    if min(beta0, beta1, beta2, t1) <= 0:
        raise InputError("beta0, beta1, beta2 and t1 must be positive")
    low, high = beta0_interval(pc.nu, beta2, c_tilde)

    lam, lam_bar, L, nu = pc.lambda_min_pos, pc.lambda_max, pc.L_f, pc.nu
    phi1, r0, r, n = pc.phi1, pc.r0, pc.r, pc.n
    L2 = L ** 2
    w0 = beta0 * t1
    w1 = beta0 * (t1 + 1)
    eta0 = beta2 / w0
    b0 = 1 / w0 - 1 / w1
    spread = lam_bar + 1 / lam + (4 + 8 / phi1) * lam

    m = {}
    m[1] = (beta1 * lam / 2 - 9 / 4) - 1
    m[2] = (12 + 16 / phi1) + (4 + 8 / phi1 * beta1 ** 2 * lam_bar ** 2) + 1 + 2 + 3 * beta1 ** 2 * lam_bar ** 2
    m[3] = beta1 * lam / 4 - 1
    m[4] = 4 + (3 * beta1 ** 2 + 1 + beta1) * lam_bar
    m[5] = beta2 / 4 - beta2 ** 2 * spread
    m[6] = (4 * eta0 * L2 * ((b0 + b0 * beta1 + b0 ** 2 + b0 ** 2 * beta1) / (2 * lam) + b0 / 2)
            + eta0 * L2 * b0 * (beta1 ** 2 + 2 * ((1 + beta1) ** 2 / (eta0 * w0 ** 2)
                                                  + (1 + beta1) / (2 * w0 ** 2)) / lam + 1))
    m[7] = phi1 / 2 + phi1 ** 2 / 2
    m[8] = (beta1 + 2) * lam_bar * r0 + 2 * r0 + beta1 / 4 * lam_bar * r0
    m[9] = 21 * beta1 ** 2 * lam_bar ** 2 * r0 / phi1 + (4 + 2 * (1 + beta1) * lam_bar) * r0
    m[10] = 1.5 * beta2 ** 2 * lam_bar + beta2 / 4 + 0.5 + beta1 / 4 - 2 * beta1 * beta2
    m[11] = beta2 * L2 * (2 / lam * (2 + 2 * beta1) + beta1 ** 2
                          + 2 * ((1 + beta1) ** 2 / beta2 + (1 + beta1) / 2) / lam + 3)
    m[12] = ((2 * (1 + beta1) ** 2 / (beta2 * w0 * lam) + (1 + beta1) / (w0 ** 2 * lam)
              + 1 / (beta2 * w0 * lam ** 2) + 1 / (w0 ** 2 * lam ** 2) + 1.5) * L2 + L
             + 4 * L2 / w0 * ((2 + 2 * beta1) / lam + 0.5)
             + L2 / w0 * (beta1 ** 2 + 2 * ((1 + beta1) ** 2 / (beta2 * w0)
                                            + (1 + beta1) / (2 * w0 ** 2)) / lam + 1))
    m[13] = 11 + 16 / phi1 + 2
    m[14] = (2 + 2 * beta1) / lam + 1
    m[15] = (beta2 * (6 + beta1) * lam_bar * r ** 2 + 14 * beta1 ** 2 * beta2 ** 2 * lam_bar ** 2 * r ** 2
             + 2 * beta2 ** 2 / beta0 ** 2 + 4 * beta2 ** 2 + 1
             + r ** 2 * ((2.5 * beta2 + beta1 * beta2) * lam_bar
                         + ((beta2 ** 2 + beta1 * beta2 ** 2) * lam_bar / 2
                            + 0.75 * beta1 ** 2 * beta2 ** 2 * lam_bar ** 2 + beta2 ** 2 / beta0 ** 2)))
    m[16] = ((1 + beta1) / (w0 ** 2 * lam) + 1 / (w0 ** 2 * lam ** 2) + 1.5) * L2 + L + m[11] / (beta2 * w0)
    m[17] = (2 + 2 * beta1) / (beta2 ** 2 * lam) + 1 / beta2 ** 2
    m[18] = (m[11] / n + m[12]) * pc.sigma_sq + m[17] * pc.sigma_bar

    cbar = {}
    cbar[4] = m[1] * beta2 - m[2] * beta2 ** 2
    beta8 = max(0.5 + beta1, (beta1 * lam + 1) / (2 * beta1 * lam))
    m[19] = min(cbar[4] / eta0, m[5] / (2 * eta0), m[7] / (2 * eta0), nu / 4) / beta8
    cbar[0] = max(_ratio(2 * m[10], m[5]) if m[5] > 0 else math.inf, 16 * m[11])
    cbar[1] = 9 / (2 * lam) + 1
    cbar[2] = min(_ratio(m[1], m[2]), _ratio(m[3], m[4]), _positive_root(m[7] / 2, m[8], m[9]),
                  1 / (4 * spread),
                  1 / (((1 + beta1) / (32 * lam) + 1 / (32 * lam ** 2) + 3 / 64) * L2 + 32 * L))
    cbar[3] = max(1 + 1.25 * L2, 4 / (3 * lam), 4 * L * math.sqrt(4 * (1 + beta1) / lam + 2 / lam ** 2),
                  4 * beta2 * L)
    cbar[5] = max(cbar[0] / beta0, 8 * L / (nu * beta2) * ((2 + 2 * beta1) / lam + 1), cbar[3] / beta0, 2.0)

    subscripts = str.maketrans('0123456789', '₀₁₂₃₄₅₆₇₈₉')
    values = {'β₀': beta0, 'β₁': beta1, 'β₂': beta2, 't₁': t1, 'c̃': c_tilde, 'β₀_low': low, 'β₀_high': high,
              'ω₀': w0, 'η₀': eta0, 'b₀': b0, 'β₈': beta8}
    values.update({f"m{str(i).translate(subscripts)}": m[i] for i in sorted(m)})
    values.update({f"c̄{str(i).translate(subscripts)}": cbar[i] for i in sorted(cbar)})

    conditions = {
        COND_BETA1_CBAR1: beta1 > cbar[1],
        COND_BETA2_CBAR2: 0 < beta2 < cbar[2],
        COND_T1_CBAR5: t1 > cbar[5],
        COND_BETA0_INTERVAL: low <= beta0 < high,
    }
    if h0 is not None:
        values['h₀'] = h0
        conditions[COND_H0_T1] = 0 < h0 < 1 / t1
    if pc.alpha_x is not None:
        conditions[COND_ALPHA_R] = pc.alpha_x * r < 1
    return ConstantLedger('theorem3', values, conditions)


def _first_violation(ledger: ConstantLedger) -> Optional[str]:
    violated = ledger.violated
    return violated[0] if violated else None


def _suggest_constant_omega(pc: ProblemConstants, regime: str, n: int, T: int, budget: int) -> Dict[str, float]:
    c0 = max((9 + DEFAULT_BETA5) / (2 * pc.lambda_min_pos), 1.0) if pc.lambda_min_pos > 0 else math.inf
    if not math.isfinite(c0) or c0 > SEARCH_CEILING:
        raise SearchFailure(f"c₀ = {c0:.3g} is beyond the search range", binding=COND_BETA1_C0)
    beta1 = 1.1 * c0
    binding = None
    attempts = 0

    if regime == 'theorem1':
        beta2, omega = 1.0, 1.0
        while attempts < budget and omega <= SEARCH_CEILING:
            attempts += 1
            ledger = ledger_theorem1(pc, beta1, beta2, omega)
            if ledger.feasible:
                return {'beta1': beta1, 'beta2': beta2, 'omega': omega, 'beta5': DEFAULT_BETA5}
            binding = _first_violation(ledger)
            if binding == COND_ALPHA_R:
                raise SearchFailure("α_x·r ≥ 1 cannot be fixed by the schedule", binding=binding)
            beta3, beta4 = ledger['β₃'], ledger['β₄']
            if beta4 <= 0:
                # epsilon terms still negative at this omega
                omega *= 2
            elif beta2 >= 0.99 * omega * beta4:
                # eta = beta2 / omega must sit below beta4
                beta2 = 0.5 * omega * beta4
            else:
                omega = max(1.1 * beta3, 1.5 * omega)
        raise SearchFailure(f"no feasible {regime} parameters within {budget} evaluations", binding=binding)

    if regime == 'theorem1_speedup':
        for beta2 in np.geomspace(10.0, 1e-8, budget):
            omega = beta2 * math.sqrt(T) / math.sqrt(n)
            ledger = ledger_theorem1(pc, beta1, beta2, omega)
            if ledger.feasible:
                return {'beta1': beta1, 'beta2': float(beta2), 'omega': omega, 'beta5': DEFAULT_BETA5,
                        'T': T, 'n': n}
            binding = _first_violation(ledger)
        raise SearchFailure(f"no feasible {regime} parameters within {budget} evaluations", binding=binding)

    per_theta = max(budget // 4, 1)
    for theta in (0.9, 0.75, 0.5, 0.25):
        for beta2 in np.geomspace(0.99, 1e-8, per_theta):
            ledger = ledger_theorem2(pc, beta1, float(beta2), theta, T)
            if ledger.feasible:
                return {'beta1': beta1, 'beta2': float(beta2), 'theta': theta, 'T': T, 'beta5': DEFAULT_BETA5}
            binding = _first_violation(ledger)
    raise SearchFailure(f"no feasible {regime} parameters within {budget} evaluations", binding=binding)


def _suggest_growing_omega(pc: ProblemConstants, budget: int, c_tilde: float) -> Dict[str, float]:
    if pc.nu is None:
        raise InputError("the growing-omega search needs the P-L constant nu")
    lam = pc.lambda_min_pos
    # m1 > 0 and m3 > 0 need beta1 * lam > 6.5 and > 4 respectively
    beta1 = 1.1 * max(9 / (2 * lam) + 1, 6.5 / lam, 4 / lam)
    binding = None
    for _ in range(budget):
        trial = ledger_theorem3(pc, beta0_interval(pc.nu, 1e-3, c_tilde)[0], beta1, 1e-3, 1.0, c_tilde)
        cbar2 = trial['c̄₂']
        if cbar2 > 0 and math.isfinite(cbar2):
            beta2 = 0.5 * min(cbar2, 1.0)
            low, high = beta0_interval(pc.nu, beta2, c_tilde)
            beta0 = 0.5 * (low + high)
            t1 = 1.1 * ledger_theorem3(pc, beta0, beta1, beta2, 1.0, c_tilde)['c̄₅']
            h0 = 0.5 / t1
            ledger = ledger_theorem3(pc, beta0, beta1, beta2, t1, c_tilde, h0)
            if ledger.feasible:
                return {'beta0': beta0, 'beta1': beta1, 'beta2': beta2, 't1': t1, 'c_tilde': c_tilde, 'h0': h0}
            binding = _first_violation(ledger)
            if binding == COND_ALPHA_R:
                break
        else:
            binding = COND_BETA2_CBAR2
        beta1 *= 1.5
    raise SearchFailure(f"no feasible theorem3 parameters within {budget} evaluations", binding=binding)


def suggest_params(pc: ProblemConstants, regime: str, n: int = 1, T: int = 1000, budget: int = 200,
                   c_tilde: float = DEFAULT_C_TILDE) -> Dict[str, float]:
    """Coordinate search from the stated lower bounds for parameters the regime's ledger accepts"""
    logger.debug(f"🔍 Searching {regime} parameters (n={n}, T={T}, budget={budget})")
    if regime in ('theorem1', 'theorem1_speedup', 'theorem2'):
        params = _suggest_constant_omega(pc, regime, n, T, budget)
    elif regime == 'theorem3':
        params = _suggest_growing_omega(pc, budget, c_tilde)
    else:
        raise ParameterError(f"no ledger for regime '{regime}'", condition="regime")
    logger.info(f"✅ Feasible {regime} parameters: {params}")
    return params
