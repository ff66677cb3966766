"""Mutual-information statistics over block Rayleigh fading.

Each transmission attempt sees one fading draw ``|h|^2 ~ Exp(1)`` held for the
whole attempt, so attempt ``m`` contributes ``u_m * log2(1 + |h_m|^2 snr_d)``
bits, where ``u_m`` is the number of complex channel uses it spans.
Decoding succeeds once the accumulated information reaches the payload size.
"""
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import QuadratureNotConverged
from .numerology import SYMBOLS_PER_SLOT

QUAD_TOL = 1e-10
QUAD_LIMIT = 10_000
_TAIL_START = 40.0  # e^-40 ~ 4e-18: beyond this the Exp(1) weight is mapped to [0, 1]


@dataclass(frozen=True)
class ChannelParams:
    """Downlink channel and payload.

    snr_d is linear (not dB); bandwidth_w in Hz; slot_duration in seconds.
    """

    snr_d: float
    bandwidth_w: float
    slot_duration: float
    payload_bits: float
    symbols_per_slot: int = SYMBOLS_PER_SLOT

    def __post_init__(self):
        if not self.snr_d > 0:
            raise ValueError(f"snr_d must be > 0, got {self.snr_d}")
        if not self.bandwidth_w > 0:
            raise ValueError(f"bandwidth_w must be > 0, got {self.bandwidth_w}")
        if not self.slot_duration > 0:
            raise ValueError(f"slot_duration must be > 0, got {self.slot_duration}")
        if not self.payload_bits >= 1:
            raise ValueError(f"payload_bits must be >= 1, got {self.payload_bits}")
        if self.symbols_per_slot < 1:
            raise ValueError("symbols_per_slot must be >= 1")

    @property
    def uses_per_symbol(self):
        return self.slot_duration * self.bandwidth_w / self.symbols_per_slot

    def attempt_duration(self, n_symbols):
        return n_symbols / self.symbols_per_slot * self.slot_duration


@dataclass(frozen=True)
class MiMoments:
    mean_per_use: float
    var_per_use: float

    @property
    def std_per_use(self):
        return math.sqrt(self.var_per_use)


def channel_uses(attempt_symbols, params: ChannelParams):
    """Complex channel uses spanned by an attempt of ``attempt_symbols`` OFDM symbols."""
    return attempt_symbols / params.symbols_per_slot * params.slot_duration * params.bandwidth_w


def _quad(f, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=QUAD_TOL, limit=QUAD_LIMIT)
        except integrate.IntegrationWarning as exc:
            raise QuadratureNotConverged(str(exc)) from exc
    return val, err


def _expectation(g, snr):
    # split at the knee of log(1 + snr x), then a mapped infinite tail
    knee = min(1.0 / snr, _TAIL_START)
    edges = [0.0, knee] + ([_TAIL_START] if knee < _TAIL_START else [])
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = _quad(lambda x: g(x) * math.exp(-x), a, b)
        total += v
        err += e
    v, e = _quad(lambda x: g(x) * math.exp(-x), edges[-1], math.inf)
    total += v
    err += e
    if err > 10 * QUAD_TOL * abs(total) + 1e-300:
        raise QuadratureNotConverged(f"error estimate {err:.3g} exceeds tolerance for value {total:.6g}")
    return total


def mi_moments(params: ChannelParams) -> MiMoments:
    """Mean and variance (per channel use, in bits) of ``log2(1 + X snr_d)``, X ~ Exp(1)."""
    snr = params.snr_d
    inv_ln2 = 1.0 / math.log(2.0)
    mean = _expectation(lambda x: math.log1p(snr * x) * inv_ln2, snr)
    second = _expectation(lambda x: (math.log1p(snr * x) * inv_ln2) ** 2, snr)
    return MiMoments(mean_per_use=mean, var_per_use=max(second - mean * mean, 0.0))


def failure_prob(prefix_symbols: Sequence[int], params: ChannelParams, moments: MiMoments) -> float:
    """Gaussian-approximated probability that decoding still fails after the given attempts.

    The accumulated information is treated as normal with mean ``U * mean`` and
    variance ``sum(u_m^2) * var`` (one fading draw per attempt). Empty prefix -> 1.
    """
    if len(prefix_symbols) == 0:
        return 1.0
    u = np.asarray([channel_uses(n, params) for n in prefix_symbols], dtype=float)
    mean = u.sum() * moments.mean_per_use
    std = math.sqrt(float(np.dot(u, u)) * moments.var_per_use)
    return float(ndtr((params.payload_bits - mean) / std))


def failure_probs(n: Sequence[int], params: ChannelParams, moments: MiMoments) -> np.ndarray:
    """``[P_{1,f}, ..., P_{M,f}]`` for every prefix of ``n``."""
    u = np.asarray(n, dtype=float) * params.uses_per_symbol
    mean = np.cumsum(u) * moments.mean_per_use
    std = np.sqrt(np.cumsum(u * u) * moments.var_per_use)
    return ndtr((params.payload_bits - mean) / std)


def failure_probs_grid(n_cells: np.ndarray, params: ChannelParams, moments: MiMoments) -> np.ndarray:
    """Vectorised :func:`failure_probs` over rows of an (cells, M) integer array."""
    u = np.asarray(n_cells, dtype=float) * params.uses_per_symbol
    mean = np.cumsum(u, axis=1) * moments.mean_per_use
    std = np.sqrt(np.cumsum(u * u, axis=1) * moments.var_per_use)
    return ndtr((params.payload_bits - mean) / std)
