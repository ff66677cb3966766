"""One-symbol binary feedback with an asymmetric ACK/NACK decision threshold.

ACK is sent as +1 and NACK as -1 on a unit-amplitude antipodal constellation.
The detection index ``alpha`` moves the threshold from the origin toward the
ACK point, which enlarges the NACK region: NACKs are misread less often at the
price of more ACKs read as NACKs. ``alpha = 0`` is symmetric detection.
"""
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def erfc(x):
    """Complementary error function (libm)."""
    return math.erfc(x)


@dataclass(frozen=True)
class FeedbackParams:
    """snr_f is linear; ``math.inf`` models an error-free feedback channel."""

    snr_f: float
    alphas: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.snr_f > 0:
            raise ValueError(f"snr_f must be > 0, got {self.snr_f}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))

    @property
    def perfect(self):
        return math.isinf(self.snr_f)

    @property
    def noise_std(self):
        """Per-dimension noise std that yields the erfc error rates for unit amplitude."""
        return 0.0 if self.perfect else 1.0 / math.sqrt(2.0 * self.snr_f)


@dataclass(frozen=True)
class FeedbackErrorRates:
    p_nack_err: np.ndarray
    p_ack_err: np.ndarray

    def __len__(self):
        return len(self.p_nack_err)

    @property
    def p_nack_err_with_virtual(self):
        """NACK error rates prefixed with the virtual zeroth entry ``P_{N,0} = 0``."""
        return np.concatenate(([0.0], self.p_nack_err))


def _rate(distance, sqrt_snr):
    if math.isinf(sqrt_snr):
        return 0.0 if distance > 0 else (0.5 if distance == 0 else 1.0)
    return 0.5 * math.erfc(distance * sqrt_snr)


def nack_error(alpha, snr_f):
    return _rate(1.0 + alpha, math.sqrt(snr_f))


def ack_error(alpha, snr_f):
    return _rate(1.0 - alpha, math.sqrt(snr_f))


def error_rates(params: FeedbackParams) -> FeedbackErrorRates:
    """Per-feedback NACK->ACK and ACK->NACK flip probabilities."""
    s = math.sqrt(params.snr_f)
    pn = np.array([_rate(1.0 + a, s) for a in params.alphas], dtype=float)
    pa = np.array([_rate(1.0 - a, s) for a in params.alphas], dtype=float)
    return FeedbackErrorRates(p_nack_err=pn, p_ack_err=pa)


def perfect_rates(m_minus_1: int) -> FeedbackErrorRates:
    z = np.zeros(m_minus_1)
    return FeedbackErrorRates(p_nack_err=z, p_ack_err=z.copy())


def symmetric(snr_f: float, attempts: int) -> FeedbackParams:
    return FeedbackParams(snr_f=snr_f, alphas=(0.0,) * max(attempts - 1, 0))


def rates_from(p_nack: Sequence[float], p_ack: Sequence[float]) -> FeedbackErrorRates:
    """Build rates directly from probabilities (for tests and what-if analysis)."""
    return FeedbackErrorRates(np.asarray(p_nack, dtype=float), np.asarray(p_ack, dtype=float))
