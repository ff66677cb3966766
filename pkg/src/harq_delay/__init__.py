"""Delay-optimal IR-HARQ over block Rayleigh fading with noisy, asymmetrically detected feedback."""
from ._kernels import BACKEND
from .analytics import (
    DelayReport,
    HarqPolicy,
    QueueParams,
    delay_report,
    occurrence_probs,
    outage_prob,
    report_from_probs,
)
from .errors import (
    CellInfeasible,
    DimensionMismatch,
    HarqDelayError,
    InvalidConfig,
    QuadratureNotConverged,
    QueueExplosion,
    UnstableQueue,
)
from .feedback import FeedbackErrorRates, FeedbackParams, ack_error, error_rates, nack_error
from .mi_stats import ChannelParams, MiMoments, channel_uses, failure_prob, failure_probs, mi_moments
from .numerology import NUMEROLOGIES, numerology, slot_duration
from .optimizer import OptimizationProblem, OptimizationResult, OptimizerConfig, optimize, pgd_alpha
from .simulator import SimConfig, SimEstimate, SimReport, run, validate_feedback_channel

__version__ = "0.1.0"

__all__ = [
    "ack_error",
    "BACKEND",
    "CellInfeasible",
    "channel_uses",
    "ChannelParams",
    "delay_report",
    "DelayReport",
    "DimensionMismatch",
    "error_rates",
    "failure_prob",
    "failure_probs",
    "FeedbackErrorRates",
    "FeedbackParams",
    "HarqDelayError",
    "HarqPolicy",
    "InvalidConfig",
    "mi_moments",
    "MiMoments",
    "nack_error",
    "NUMEROLOGIES",
    "numerology",
    "occurrence_probs",
    "OptimizationProblem",
    "OptimizationResult",
    "optimize",
    "OptimizerConfig",
    "outage_prob",
    "pgd_alpha",
    "QuadratureNotConverged",
    "QueueExplosion",
    "QueueParams",
    "report_from_probs",
    "run",
    "SimConfig",
    "SimEstimate",
    "SimReport",
    "slot_duration",
    "UnstableQueue",
    "validate_feedback_channel",
]
