"""Flat ``section.key = value`` run configuration.

One assignment per line, ``#`` starts a comment. Lists are comma separated.
SNRs are given in dB (``inf`` allowed for the feedback link) and converted to
linear ratios here. Every key is known up front; anything else is rejected
with the file and line it came from.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

from .analytics import HarqPolicy, QueueParams
from .errors import InvalidConfig
from .feedback import FeedbackParams
from .mi_stats import ChannelParams
from .numerology import slot_duration
from .optimizer import SCHEMES, OptimizationProblem, OptimizerConfig


class ConfigError(InvalidConfig):
    """Validation failure that knows where the offending value came from."""

    def __init__(self, message, origin=None):
        self.origin = origin
        super().__init__(f"{origin}: {message}" if origin else message)


def _float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text):
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _str(text):
    return text.strip()


def _list(conv):
    def parse(text):
        text = text.strip()
        if not text:
            return ()
        return tuple(conv(p.strip()) for p in text.split(","))
    return parse


# key -> (parser, default). ``None`` means "unset".
SCHEMA = {
    "channel.snr_d_db": (_float, -1.0),
    "channel.bandwidth_hz": (_float, 20e6),
    "channel.slot_duration_us": (_float, None),
    "channel.numerology": (_int, None),
    "channel.payload_bits": (_float, 2816.0),
    "feedback.snr_f_db": (_float, 0.0),
    "queue.lambda0": (_float, 200.0),
    "harq.max_attempts": (_int, 4),
    "harq.k": (_int, 1),
    "harq.n_max": (_int, 56),
    "policy.n": (_list(_int), None),
    "policy.alphas": (_list(_float), None),
    "problem.epsilon": (_float, 1.0),
    "problem.scheme": (_str, "afd"),
    "optimizer.eta0": (_float, OptimizerConfig.eta0),
    "optimizer.armijo": (_float, OptimizerConfig.armijo),
    "optimizer.fd_step": (_float, OptimizerConfig.fd_step),
    "optimizer.tol": (_float, OptimizerConfig.tol),
    "optimizer.max_iter": (_int, OptimizerConfig.max_iter),
    "optimizer.alpha_max": (_float, OptimizerConfig.alpha_max),
    "optimizer.multistart": (_bool, False),
    "optimizer.search": (_str, "bnb"),
    "optimizer.threads": (_int, 1),
    "sim.num_packets": (_int, 1_000_000),
    "sim.warmup_packets": (_int, 10_000),
    "sim.seed": (_int, 12345),
    "sim.use_gaussian_mi": (_bool, False),
    "sim.occupy_during_feedback": (_bool, False),
    "sim.replications": (_int, 1),
    "sim.workers": (_int, 1),
    "sim.trace": (_str, None),
    "sweep.var": (_str, "snr_f"),
    "sweep.values": (_list(_float), None),
    "sweep.range": (_str, None),
    "sweep.schemes": (_list(_str), SCHEMES),
    # written by ``optimize`` for the record; ignored on input
    "result.objective_s": (_float, None),
    "result.p_out": (_float, None),
    "result.feasible": (_bool, None),
}

SWEEP_VARS = ("snr_f", "snr_d", "epsilon", "lambda0")
DEFAULT_SLOT_US = 125.0


def db_to_linear(db):
    return math.inf if math.isinf(db) and db > 0 else 10.0 ** (db / 10.0)


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    origins: dict = field(default_factory=dict)

    def get(self, key):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][1]

    def is_set(self, key):
        return key in self.values

    def where(self, key):
        return self.origins.get(key, "default")

    def set(self, key, text, origin):
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", origin)
        try:
            self.values[key] = SCHEMA[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", origin) from None
        self.origins[key] = origin

    def merge(self, other, prefix=""):
        for key, val in other.values.items():
            if key.startswith(prefix):
                self.values[key] = val
                self.origins[key] = other.origins[key]

    def fail(self, key, message):
        raise ConfigError(message, self.where(key))

    # ---- typed views ----
    def channel(self) -> ChannelParams:
        if self.is_set("channel.numerology") and self.is_set("channel.slot_duration_us"):
            self.fail("channel.numerology", "set either channel.numerology or channel.slot_duration_us, not both")
        if self.is_set("channel.numerology"):
            try:
                slot = slot_duration(self.get("channel.numerology"))
            except (ValueError, KeyError) as exc:
                self.fail("channel.numerology", str(exc))
        else:
            slot = (self.get("channel.slot_duration_us") or DEFAULT_SLOT_US) * 1e-6
        snr_db = self.get("channel.snr_d_db")
        if math.isinf(snr_db):
            self.fail("channel.snr_d_db", "downlink SNR must be finite")
        try:
            return ChannelParams(
                snr_d=db_to_linear(snr_db),
                bandwidth_w=self.get("channel.bandwidth_hz"),
                slot_duration=slot,
                payload_bits=self.get("channel.payload_bits"),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), self._first_origin("channel.")) from None

    def snr_f(self):
        return db_to_linear(self.get("feedback.snr_f_db"))

    def queue(self) -> QueueParams:
        try:
            return QueueParams(self.get("queue.lambda0"))
        except ValueError as exc:
            self.fail("queue.lambda0", str(exc))

    def policy(self) -> HarqPolicy:
        if not self.is_set("policy.n"):
            raise ConfigError("policy.n is required (give it in the config or via --policy)")
        n = self.get("policy.n")
        alphas = self.get("policy.alphas")
        if alphas is None:
            alphas = (0.0,) * (len(n) - 1)
        if self.is_set("harq.max_attempts") and len(n) != self.get("harq.max_attempts"):
            self.fail("policy.n", f"policy.n has {len(n)} entries but harq.max_attempts = {self.get('harq.max_attempts')}")
        try:
            return HarqPolicy(n=n, alphas=alphas, feedback_timing_k=self.get("harq.k"))
        except ValueError as exc:
            self.fail("policy.alphas" if self.is_set("policy.alphas") else "policy.n", str(exc))

    def feedback(self, policy: HarqPolicy) -> FeedbackParams:
        try:
            return FeedbackParams(self.snr_f(), policy.alphas)
        except ValueError as exc:
            self.fail("feedback.snr_f_db", str(exc))

    def problem(self, scheme: Optional[str] = None) -> OptimizationProblem:
        scheme = scheme or self.get("problem.scheme")
        if scheme not in SCHEMES:
            self.fail("problem.scheme", f"scheme must be one of {SCHEMES}, got {scheme!r}")
        channel, queue = self.channel(), self.queue()
        try:
            return OptimizationProblem(
                channel=channel,
                queue=queue,
                snr_f=self.snr_f(),
                M=self.get("harq.max_attempts"),
                n_max=self.get("harq.n_max"),
                epsilon=self.get("problem.epsilon"),
                k=self.get("harq.k"),
                scheme=scheme,
            )
        except ValueError as exc:
            raise ConfigError(str(exc), self._first_origin("problem.", "harq.", "feedback.")) from None

    def optimizer(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(
                eta0=self.get("optimizer.eta0"),
                armijo=self.get("optimizer.armijo"),
                fd_step=self.get("optimizer.fd_step"),
                tol=self.get("optimizer.tol"),
                max_iter=self.get("optimizer.max_iter"),
                alpha_max=self.get("optimizer.alpha_max"),
                multistart=self.get("optimizer.multistart"),
                search=self.get("optimizer.search"),
                threads=max(1, self.get("optimizer.threads")),
            )
        except ValueError as exc:
            raise ConfigError(str(exc), self._first_origin("optimizer.")) from None

    def sweep_values(self):
        if self.is_set("sweep.values") and self.is_set("sweep.range"):
            self.fail("sweep.range", "set either sweep.values or sweep.range, not both")
        if self.is_set("sweep.range"):
            return parse_range(self.get("sweep.range"), self.where("sweep.range"))
        vals = self.get("sweep.values")
        return list(vals) if vals is not None else []

    def sweep_var(self):
        var = self.get("sweep.var")
        if var not in SWEEP_VARS:
            self.fail("sweep.var", f"sweep.var must be one of {SWEEP_VARS}, got {var!r}")
        return var

    def _first_origin(self, *prefixes):
        for key, origin in self.origins.items():
            if key.startswith(prefixes):
                return origin
        return None


def parse_range(text, origin=None):
    """``start:stop:step`` with an inclusive stop; ``start > stop`` with a positive step is empty."""
    parts = text.split(":")
    try:
        if len(parts) != 3:
            raise ValueError("expected start:stop:step")
        start, stop, step = (_float(p) for p in parts)
        if step == 0:
            raise ValueError("step must be nonzero")
    except ValueError as exc:
        raise ConfigError(f"bad sweep.range {text!r}: {exc}", origin) from None
    count = math.floor((stop - start) / step + 1e-9) + 1
    return [start + i * step for i in range(max(count, 0))]


def parse_lines(lines, source="<config>", into: Optional[RunConfig] = None) -> RunConfig:
    cfg = into if into is not None else RunConfig()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        origin = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", origin)
        key, text = (s.strip() for s in line.split("=", 1))
        if key in cfg.values and cfg.origins.get(key, "").startswith(source + ":"):
            raise ConfigError(f"duplicate key {key!r} (first set at {cfg.origins[key]})", origin)
        cfg.set(key, text, origin)
    return cfg


def load(path, into: Optional[RunConfig] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    return parse_lines(lines, str(path), into)


def apply_overrides(cfg: RunConfig, assignments):
    for i, item in enumerate(assignments or (), start=1):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}", f"--set #{i}")
        key, text = (s.strip() for s in item.split("=", 1))
        cfg.set(key, text, f"--set {key}")
    return cfg


def fmt_float(x):
    return repr(float(x))


def dump(cfg: RunConfig, policy: HarqPolicy = None, result: dict = None) -> str:
    """Serialise every resolved setting so the file reproduces the run on its own."""
    out = []
    for key in SCHEMA:
        if key.startswith(("policy.", "result.", "sweep.", "sim.trace")):
            continue
        if key in ("channel.numerology", "channel.slot_duration_us"):
            continue
        val = cfg.get(key)
        if val is None:
            continue
        out.append(f"{key} = {_fmt(val)}")
    if cfg.is_set("channel.numerology"):
        out.insert(2, f"channel.numerology = {cfg.get('channel.numerology')}")
    else:
        out.insert(2, f"channel.slot_duration_us = {fmt_float(cfg.get('channel.slot_duration_us') or DEFAULT_SLOT_US)}")
    if policy is not None:
        out.append(f"policy.n = {', '.join(str(x) for x in policy.n)}")
        out.append(f"policy.alphas = {', '.join(fmt_float(a) for a in policy.alphas)}")
    for key, val in (result or {}).items():
        out.append(f"result.{key} = {_fmt(val)}")
    return "\n".join(out) + "\n"


def _fmt(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return fmt_float(val)
    if isinstance(val, tuple):
        return ", ".join(_fmt(v) for v in val)
    return str(val)
