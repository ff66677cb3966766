"""Monte Carlo discrete-event oracle for the HARQ queue.

Model
-----
* New packets arrive as a Poisson process of rate ``lambda0``.
* One FIFO server transmits *attempts*. Each attempt is a job that holds the
  server for ``T_i``. After it finishes, the feedback takes
  ``k * T_slot`` to come back. A retransmission then rejoins the queue tail,
  so retransmissions are arrivals exactly as the analytic total
  arrival rate counts them.
* Each attempt draws its own fading ``|h|^2 ~ Exp(1)`` and contributes
  ``u_i log2(1 + |h|^2 snr_d)`` bits. The packet is decodable once the
  accumulated information reaches the payload.
* Feedback is an antipodal symbol (+1 ACK, -1 NACK) plus Gaussian noise,
  detected as ACK iff ``r > alpha_i``. ACK is sent iff the packet is decodable.
  A NACK read as ACK ends the round in outage. An ACK read as NACK causes a
  redundant retransmission, and the packet still counts as delivered.
* A round that ends in outage is handed back and starts over as a fresh round
  at the queue tail.

With ``occupy_during_feedback=True`` the server stays busy for the feedback
wait as well, so each attempt occupies it for ``T_i + k T_slot``.
"""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .analytics import HarqPolicy, QueueParams
from .errors import InvalidConfig
from .feedback import FeedbackParams
from .mi_stats import ChannelParams, channel_uses, mi_moments

RNG_ALGORITHM = "numpy.random.Philox (4x64, counter-based), streams spawned via SeedSequence"
MAX_QUEUE = 1_000_000
N_BATCHES = 64
_BLOCK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    policy: HarqPolicy
    channel: ChannelParams
    feedback: FeedbackParams
    queue: QueueParams
    num_packets: int = 1_000_000
    warmup_packets: int = 10_000
    seed: int = 12345
    use_gaussian_mi: bool = False
    occupy_during_feedback: bool = False
    replications: int = 1
    workers: int = 1
    backend: str = "auto"

    def __post_init__(self):
        if not self.num_packets > self.warmup_packets >= 0:
            raise InvalidConfig(
                f"need num_packets > warmup_packets >= 0, got {self.num_packets}, {self.warmup_packets}"
            )
        if len(self.feedback.alphas) != self.policy.max_attempts - 1:
            raise InvalidConfig("feedback.alphas must carry M-1 detection indices")
        if self.replications < 1:
            raise InvalidConfig("replications must be >= 1")
        if self.backend not in ("auto", "python", "cython"):
            raise InvalidConfig(f"unknown backend {self.backend!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    half_width_95: float
    n_samples: int

    def contains(self, value, k_sigma=None):
        """``value`` within the 95% half-width (or ``k_sigma`` standard errors)."""
        hw = self.half_width_95 if k_sigma is None else self.half_width_95 / 1.96 * k_sigma
        return abs(value - self.mean) <= hw

    @property
    def std_error(self):
        return self.half_width_95 / 1.96


@dataclass(frozen=True)
class SimReport:
    p_fail: tuple
    p_occur: tuple
    p_out: SimEstimate
    mean_service: SimEstimate
    mean_service_effective: float
    mean_queue_wait: SimEstimate
    mean_delay: SimEstimate
    mean_rtt_count: SimEstimate
    mean_queue_length: SimEstimate
    jobs_per_packet: float
    rounds: int
    packets: int
    jobs: int
    max_queue_length: int
    rng: str = RNG_ALGORITHM
    seed: int = 0
    backend: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def little_queue_length(self):
        """Mean number waiting implied by Little's law with the measured job wait."""
        return self.raw["lambda0"] * self.jobs_per_packet * self.mean_queue_wait.mean


class DrawStream:
    """Block-refilled stream of standard exponential or normal variates."""

    def __init__(self, seed_seq, kind, block=_BLOCK):
        self.gen = np.random.Generator(np.random.Philox(seed_seq))
        self.kind = kind
        self.block = block

    def refill(self):
        if self.kind == "exp":
            return self.gen.standard_exponential(self.block)
        return self.gen.standard_normal(self.block)


class TraceWriter:
    """Writes one comma-delimited line per HARQ round."""

    header = "packet,round,attempts,outcome,wait_s,service_s"

    def __init__(self, fh):
        self.fh = fh
        fh.write(self.header + "\n")

    def __call__(self, pkt, rnd, attempts, delivered, wait, service):
        self.fh.write(f"{pkt},{rnd},{attempts},{'delivered' if delivered else 'outage'},{wait:.9e},{service:.9e}\n")


def _kernel(name):
    if name == "auto":
        return _kernels
    return _kernels.backend(name)


def _streams(seed, replication):
    root = np.random.SeedSequence(seed, spawn_key=(replication,))
    a, f, b = root.spawn(3)
    return a, f, b


def _run_one(config: SimConfig, replication: int, trace=None):
    ch = config.channel
    pol = config.policy
    moments = mi_moments(ch) if config.use_gaussian_mi else None
    a_ss, f_ss, b_ss = _streams(config.seed, replication)
    arrivals = DrawStream(a_ss, "exp")
    fading = DrawStream(f_ss, "normal" if config.use_gaussian_mi else "exp")
    feedback = DrawStream(b_ss, "normal")
    kern = _kernel(config.backend)
    return kern.simulate(
        pol.durations(ch),
        np.array([channel_uses(n, ch) for n in pol.n]),
        np.asarray(config.feedback.alphas, dtype=float),
        ch.snr_d,
        float(ch.payload_bits),
        moments.mean_per_use if moments else 0.0,
        moments.std_per_use if moments else 0.0,
        bool(config.use_gaussian_mi),
        config.feedback.noise_std,
        pol.feedback_timing_k * ch.slot_duration,
        bool(config.occupy_during_feedback),
        config.queue.lambda0,
        int(config.num_packets),
        int(config.warmup_packets),
        N_BATCHES,
        arrivals,
        fading,
        feedback,
        trace,
        MAX_QUEUE,
    )


def _binomial(count, n):
    p = count / n if n else math.nan
    hw = 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n) if n else math.nan
    return SimEstimate(float(p), float(hw), int(n))


def _ratio(num, den):
    """Batch-means estimate of sum(num)/sum(den)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = den > 0
    total = float(den.sum())
    mean = float(num.sum() / total) if total > 0 else math.nan
    b = int(ok.sum())
    if b < 2:
        return SimEstimate(mean, math.inf, int(total))
    ratios = num[ok] / den[ok]
    hw = float(stats.t.ppf(0.975, b - 1) * ratios.std(ddof=1) / math.sqrt(b))
    return SimEstimate(mean, hw, int(total))


def summarize(raw: dict, config: SimConfig, backend: str = "") -> SimReport:
    rounds = int(raw["rounds"])
    m = config.policy.max_attempts
    p_fail = tuple(_binomial(int(c), rounds) for c in raw["fail"])
    p_occur = tuple(_binomial(int(c), rounds) for c in raw["occur"])
    durations = config.policy.durations(config.channel)
    pf0 = np.concatenate(([1.0], [e.mean for e in p_fail[: m - 1]]))
    eff = float(np.dot(durations, pf0) / pf0.sum())
    jobs = float(np.sum(raw["b_jobs"]))
    pkts = float(np.sum(raw["b_pkts"]))
    extra = dict(raw)
    extra["lambda0"] = config.queue.lambda0
    return SimReport(
        p_fail=p_fail,
        p_occur=p_occur,
        p_out=_binomial(int(raw["outages"]), rounds),
        mean_service=_ratio(raw["b_serv"], raw["b_jobs"]),
        mean_service_effective=eff,
        mean_queue_wait=_ratio(raw["b_wait"], raw["b_jobs"]),
        mean_delay=_ratio(raw["b_delay"], raw["b_pkts"]),
        mean_rtt_count=_ratio(raw["b_rtt"], raw["b_pkts"]),
        mean_queue_length=_ratio(raw["b_qlen"], raw["b_qn"]),
        jobs_per_packet=jobs / pkts if pkts else math.nan,
        rounds=rounds,
        packets=int(pkts),
        jobs=int(jobs),
        max_queue_length=int(raw["max_queue"]),
        seed=config.seed,
        backend=backend,
        raw=extra,
    )


def _merge(raws):
    out = {}
    for key in raws[0]:
        vals = [r[key] for r in raws]
        if key.startswith("b_"):
            out[key] = np.concatenate(vals)
        elif key in ("max_queue", "end_time"):
            out[key] = max(vals)
        else:
            out[key] = sum(vals[1:], vals[0])
    return out


def _worker(args):
    config, rep = args
    return _run_one(config, rep)


def run(config: SimConfig, trace=None) -> SimReport:
    """Simulate ``config.replications`` independent replications and pool their counters.

    ``trace`` is an optional callable ``(packet, round, attempts, delivered, wait, service)``
    invoked once per HARQ round (see :class:`TraceWriter`).
    """
    reps = range(config.replications)
    if config.workers > 1 and config.replications > 1 and trace is None:
        with ProcessPoolExecutor(config.workers) as ex:
            raws = list(ex.map(_worker, [(config, r) for r in reps]))
    else:
        raws = [_run_one(config, r, trace) for r in reps]
    backend = _kernels.BACKEND if config.backend == "auto" else config.backend
    return summarize(_merge(raws), config, backend)


def validate_feedback_channel(feedback: FeedbackParams, trials: int = 1_000_000, seed: int = 0):
    """Symbol-level Monte Carlo of the ACK/NACK detector.

    Returns ``(p_nack_err, p_ack_err)`` arrays of empirical flip rates, one per
    detection index in ``feedback.alphas``.
    """
    if trials < 10_000:
        raise ValueError("trials must be >= 1e4")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    sd = feedback.noise_std
    pn = np.empty(len(feedback.alphas))
    pa = np.empty(len(feedback.alphas))
    for i, a in enumerate(feedback.alphas):
        nack_rx = -1.0 + sd * gen.standard_normal(trials)
        ack_rx = 1.0 + sd * gen.standard_normal(trials)
        pn[i] = np.count_nonzero(nack_rx > a) / trials
        pa[i] = np.count_nonzero(ack_rx <= a) / trials
    return pn, pa
