"""HARQ round probabilities, M/G/1 queue moments and long-term average delay.

Conventions used throughout:

* attempts are 1-indexed in the formulas and 0-indexed in arrays;
* ``P_{0,f} = 1`` (nothing decodes before the first attempt);
* ``P_{N,0} = 0`` (a virtual feedback before the first attempt never errs);
* ``P_{i,s} = 1 - P_{i,f}``.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, UnstableQueue
from .feedback import FeedbackErrorRates, FeedbackParams, error_rates
from .mi_stats import ChannelParams, MiMoments, failure_probs, mi_moments

STABILITY_TOL = 1e-9


@dataclass(frozen=True)
class HarqPolicy:
    """Per-attempt lengths (OFDM symbols) and detection indices for one HARQ process."""

    n: tuple
    alphas: tuple = ()
    feedback_timing_k: int = 1
    n_max: Optional[int] = None

    def __post_init__(self):
        n = tuple(int(x) for x in self.n)
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "alphas", alphas)
        if len(n) < 1:
            raise ValueError("a policy needs at least one attempt")
        if any(x < 1 for x in n):
            raise ValueError(f"attempt lengths must be >= 1 symbol, got {n}")
        if self.n_max is not None and any(x > self.n_max for x in n):
            raise ValueError(f"attempt lengths {n} exceed n_max={self.n_max}")
        if len(alphas) != len(n) - 1:
            raise DimensionMismatch(f"{len(n)} attempts need {len(n) - 1} detection indices, got {len(alphas)}")
        if self.feedback_timing_k < 0:
            raise ValueError("feedback_timing_k must be >= 0")

    @property
    def max_attempts(self):
        return len(self.n)

    def durations(self, channel: ChannelParams) -> np.ndarray:
        return np.asarray(self.n, dtype=float) / channel.symbols_per_slot * channel.slot_duration

    def feedback(self, snr_f) -> FeedbackParams:
        return FeedbackParams(snr_f=snr_f, alphas=self.alphas)


@dataclass(frozen=True)
class QueueParams:
    lambda0: float

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be > 0, got {self.lambda0}")


@dataclass(frozen=True)
class DelayReport:
    """Every analytic quantity for one policy. Times in seconds."""

    p_fail: np.ndarray
    p_occur: np.ndarray
    p_out: float
    p_nack_err: np.ndarray
    p_ack_err: np.ndarray
    durations: np.ndarray
    t_service_mean: float
    t_service_2nd: float
    sum_t_p: float
    lambda_tot: float
    utilization: float
    load: float
    stable: bool
    t_queue: float
    t_ub_mean: float
    expected_rtts: float
    avg_delay: float
    moments: MiMoments = field(default=None, repr=False)

    def as_dict(self):
        out = {}
        for name in (
            "p_out", "t_service_mean", "t_service_2nd", "sum_t_p", "lambda_tot",
            "utilization", "load", "stable", "t_queue", "t_ub_mean", "expected_rtts", "avg_delay",
        ):
            out[name] = getattr(self, name)
        for name in ("p_fail", "p_occur", "p_nack_err", "p_ack_err", "durations"):
            for i, v in enumerate(getattr(self, name), start=1):
                out[f"{name}[{i}]"] = float(v)
        return out


def _check(p_fail, rates: FeedbackErrorRates):
    p_fail = np.asarray(p_fail, dtype=float)
    m = len(p_fail)
    if m < 1:
        raise DimensionMismatch("p_fail must have at least one entry")
    if len(rates.p_nack_err) != m - 1 or len(rates.p_ack_err) != m - 1:
        raise DimensionMismatch(
            f"M={m} attempts need {m - 1} feedback error rates, got "
            f"{len(rates.p_nack_err)}/{len(rates.p_ack_err)}"
        )
    return p_fail, m


def _no_nack_error_prefix(pn_virtual):
    # entry d: prod_{m=0}^{d} (1 - P_{N,m}); entry 0 is 1 because P_{N,0} = 0
    return np.cumprod(1.0 - pn_virtual)


def occurrence_probs(p_fail, rates: FeedbackErrorRates) -> np.ndarray:
    """Probability ``P_i`` that attempt ``i`` takes place in a HARQ round.

    Attempt i happens either because decoding still fails and every NACK so far
    was read correctly, or because decoding first succeeded at attempt
    ``d = i - j < i`` (NACKs before it read correctly) and each of the ACKs at
    feedbacks ``d..i-1`` was misread as a NACK.
    """
    p_fail, m = _check(p_fail, rates)
    pf0 = np.concatenate(([1.0], p_fail))  # pf0[i] = P_{i,f}
    pn = rates.p_nack_err_with_virtual  # pn[i] = P_{N,i}
    pa = np.concatenate(([0.0], rates.p_ack_err))
    keep = _no_nack_error_prefix(pn)

    p = np.empty(m)
    p[0] = 1.0
    for i in range(2, m + 1):
        total = pf0[i - 1] * keep[i - 1]
        for j in range(1, i):
            d = i - j
            total += (pf0[d - 1] - pf0[d]) * keep[d - 1] * np.prod(pa[d:i])
        p[i - 1] = total
    return np.clip(p, 0.0, 1.0)


def outage_prob(p_fail, rates: FeedbackErrorRates) -> float:
    """Probability that a HARQ round ends undelivered.

    Delivery needs decoding at some attempt i with all earlier NACKs read
    correctly; the first attempt needs no feedback at all.
    """
    p_fail, m = _check(p_fail, rates)
    pf0 = np.concatenate(([1.0], p_fail))
    keep = _no_nack_error_prefix(rates.p_nack_err_with_virtual)
    delivered = 1.0 - p_fail[0]
    for i in range(2, m + 1):
        delivered += (pf0[i - 1] - pf0[i]) * keep[i - 1]
    return float(min(max(1.0 - delivered, 0.0), 1.0))


def service_moments(durations, p_fail, p_occur):
    """Return ``(E[T_tran], sum T_i^2 P_i, sum T_i P_i)``.

    ``E[T_tran]`` weights attempt ``i`` by ``P_{i-1,f}``; the two sums weight by
    the occurrence probabilities and feed the queue-delay numerator/denominator.
    """
    t = np.asarray(durations, dtype=float)
    pf0 = np.concatenate(([1.0], np.asarray(p_fail, dtype=float)[:-1]))
    p = np.asarray(p_occur, dtype=float)
    mean = float(np.dot(t, pf0) / pf0.sum())
    return mean, float(np.dot(t * t, p)), float(np.dot(t, p))


def check_stability(t_service_mean, sum_t_p, p_occur, p_out, queue: QueueParams):
    """Return ``(stable, utilization, load)``.

    ``utilization`` is the effective service time times the total (first
    transmissions plus retransmissions) arrival rate. ``load`` is the
    occurrence-weighted work rate that appears in the queue-delay denominator.
    Both coincide under error-free feedback; stability requires both < 1.
    """
    delivered = 1.0 - p_out
    if delivered <= 0.0:
        return False, math.inf, math.inf
    lam_tot = queue.lambda0 * float(np.sum(p_occur)) / delivered
    utilization = t_service_mean * lam_tot
    load = queue.lambda0 * sum_t_p / delivered
    stable = utilization < 1.0 - STABILITY_TOL and load < 1.0 - STABILITY_TOL
    return stable, utilization, load


def queue_delay(sum_t2_p, sum_t_p, p_out, queue: QueueParams) -> float:
    """Mean M/G/1 waiting time with retransmissions counted as arrivals."""
    denom = (1.0 - p_out) / queue.lambda0 - sum_t_p
    if not denom > 0.0:
        raise UnstableQueue(
            f"queue denominator {denom:.3g} <= 0 (load >= 1)",
            load=queue.lambda0 * sum_t_p / max(1.0 - p_out, 1e-300),
        )
    return sum_t2_p / (2.0 * denom)


def expected_rtts(p_fail, p_out):
    """Round-trip count factor ``(M + 1 - sum_{i<M} P_{i,s}) / (1 - P_out)``."""
    p_fail = np.asarray(p_fail, dtype=float)
    m = len(p_fail)
    p_succ = 1.0 - p_fail[: m - 1]
    if p_out >= 1.0:
        return math.inf
    return (m + 1 - float(np.sum(p_succ))) / (1.0 - p_out)


def report_from_probs(durations, p_fail, rates: FeedbackErrorRates, queue: QueueParams,
                      feedback_delay, strict=True, moments=None) -> DelayReport:
    """Assemble a :class:`DelayReport` from precomputed failure and feedback probabilities."""
    durations = np.asarray(durations, dtype=float)
    p_fail = np.asarray(p_fail, dtype=float)
    p_occur = occurrence_probs(p_fail, rates)
    p_out = outage_prob(p_fail, rates)
    t_mean, s2, s1 = service_moments(durations, p_fail, p_occur)
    stable, util, load = check_stability(t_mean, s1, p_occur, p_out, queue)
    lam_tot = queue.lambda0 * float(p_occur.sum()) / (1.0 - p_out) if p_out < 1.0 else math.inf
    rtts = expected_rtts(p_fail, p_out)
    if stable:
        t_queue = queue_delay(s2, s1, p_out, queue)
        t_ub = t_queue + t_mean + feedback_delay
        avg = rtts * t_ub
    else:
        if strict:
            raise UnstableQueue(
                f"unstable queue: utilization={util:.6g}, load={load:.6g}", utilization=util, load=load
            )
        t_queue = t_ub = avg = math.inf
    return DelayReport(
        p_fail=p_fail, p_occur=p_occur, p_out=p_out,
        p_nack_err=np.asarray(rates.p_nack_err), p_ack_err=np.asarray(rates.p_ack_err),
        durations=durations, t_service_mean=t_mean,
        t_service_2nd=s2 / float(p_occur.sum()), sum_t_p=s1, lambda_tot=lam_tot,
        utilization=util, load=load, stable=stable, t_queue=t_queue, t_ub_mean=t_ub,
        expected_rtts=rtts, avg_delay=avg, moments=moments,
    )


def delay_report(policy: HarqPolicy, channel: ChannelParams, feedback: FeedbackParams,
                 queue: QueueParams, strict=True, moments: Optional[MiMoments] = None) -> DelayReport:
    """Analytic delay figures for ``policy``.

    Raises :class:`UnstableQueue` when ``strict`` and the queue has no finite
    mean wait; with ``strict=False`` the report carries ``stable=False`` and
    infinite delays instead.
    """
    if len(feedback.alphas) != policy.max_attempts - 1:
        raise DimensionMismatch("feedback.alphas must have M-1 entries")
    if not np.array_equal(np.asarray(feedback.alphas), np.asarray(policy.alphas)):
        raise ValueError("feedback.alphas and policy.alphas disagree")
    if moments is None:
        moments = mi_moments(channel)
    p_fail = failure_probs(policy.n, channel, moments)
    rates = error_rates(feedback)
    return report_from_probs(
        policy.durations(channel), p_fail, rates, queue,
        feedback_delay=policy.feedback_timing_k * channel.slot_duration,
        strict=strict, moments=moments,
    )
