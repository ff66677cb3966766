"""Joint choice of attempt lengths and detection indices that minimises the average delay.

The integer lengths ``n`` are searched over the full grid ``{1..n_max}^M``; for
each grid cell the detection indices are found by projected gradient descent.

The default ``search="bnb"`` visits cells in order of a lower bound that holds
for every alpha in the box, and stops once the bound exceeds the incumbent.
Because the bound is valid, it returns the same optimum as ``"exhaustive"``
while running PGD on a small fraction of cells.
"""
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels
from .analytics import DelayReport, HarqPolicy, QueueParams, delay_report
from .errors import CellInfeasible
from .feedback import FeedbackParams, ack_error, nack_error
from .mi_stats import ChannelParams, MiMoments, failure_probs, failure_probs_grid, mi_moments

SCHEMES = ("afd", "sfd", "perfect")
_MULTISTART_LEVELS = (0.0, 0.25, 0.5, 0.75)
_MAX_STARTS = 64
_CHUNK_ROWS = 1 << 18


@dataclass(frozen=True)
class OptimizationProblem:
    """``scheme``: 'afd' optimises alpha, 'sfd' pins alpha = 0, 'perfect' uses error-free feedback."""

    channel: ChannelParams
    queue: QueueParams
    snr_f: float
    M: int = 4
    n_max: int = 56
    epsilon: float = 1.0
    k: int = 1
    scheme: str = "afd"

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.n_max < 1 or self.M < 1:
            raise ValueError("n_max and M must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.snr_f > 0:
            raise ValueError("snr_f must be > 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")

    @property
    def effective_snr_f(self):
        return math.inf if self.scheme == "perfect" else self.snr_f


@dataclass(frozen=True)
class OptimizerConfig:
    """PGD and search settings.

    PGD works on the objective divided by its value at the first feasible
    point, so ``eta0`` is in units of "relative delay per unit alpha".
    """

    eta0: float = 1000.0
    armijo: float = 1e-4
    fd_step: float = 1e-5
    tol: float = 1e-7
    max_iter: int = 500
    alpha_min: float = 0.0
    alpha_max: float = 1.0 - 1e-3
    multistart: bool = False
    search: str = "bnb"
    nondecreasing: bool = False
    threads: int = 1
    batch: int = 512

    def __post_init__(self):
        if self.search not in ("bnb", "exhaustive"):
            raise ValueError("search must be 'bnb' or 'exhaustive'")
        if not self.alpha_min < self.alpha_max:
            raise ValueError("alpha_min must be < alpha_max")


@dataclass(frozen=True)
class OptimizationResult:
    best_policy: HarqPolicy
    best_report: DelayReport
    objective: float
    feasible: bool
    cells_evaluated: int
    pgd_iterations_total: int
    cells_total: int = 0
    scheme: str = "afd"
    violation: float = 0.0


def _consts(problem: OptimizationProblem):
    ch = problem.channel
    return dict(
        s=math.sqrt(problem.effective_snr_f),
        lam0=problem.queue.lambda0,
        fb_delay=problem.k * ch.slot_duration,
        eps=problem.epsilon,
    )


def _pgd_args(problem, config):
    c = _consts(problem)
    return (c["s"], c["lam0"], c["fb_delay"], c["eps"], config.alpha_min, config.alpha_max,
            config.eta0, config.armijo, config.fd_step, config.tol, config.max_iter)


def _starts(m_minus_1, config):
    if not config.multistart or m_minus_1 == 0:
        return np.zeros((1, m_minus_1))
    pts = list(itertools.islice(itertools.product(_MULTISTART_LEVELS, repeat=m_minus_1), _MAX_STARTS))
    return np.asarray(pts, dtype=float)


def pgd_alpha(n, problem: OptimizationProblem, config: OptimizerConfig = OptimizerConfig(),
              moments: Optional[MiMoments] = None):
    """Best detection indices for a fixed length vector ``n``.

    Starts from alpha = 0 (plus the multistart grid when enabled) and returns
    ``(alphas, objective, iterations)``. Raises :class:`CellInfeasible` when no
    alpha in the box meets the outage limit with a stable queue.
    """
    n = tuple(int(x) for x in n)
    if len(n) != problem.M:
        raise ValueError(f"n must have M={problem.M} entries")
    ch = problem.channel
    moments = moments or mi_moments(ch)
    T = np.asarray(n, dtype=float) / ch.symbols_per_slot * ch.slot_duration
    pf = failure_probs(n, ch, moments)
    args = _pgd_args(problem, config)
    if problem.scheme != "afd":
        alpha = np.zeros(problem.M - 1)
        f, p_out, stable = _kernels.evaluate(T, pf, alpha, args[0], args[1], args[2])
        if p_out > problem.epsilon + 1e-12 or not stable:
            raise CellInfeasible(f"cell {n} infeasible (p_out={p_out:.4g}, stable={stable})")
        return tuple(alpha.tolist()), float(f), 0
    starts = _starts(problem.M - 1, config)
    status, alpha, obj, iters = _kernels.pgd_batch(
        np.repeat(T[None, :], len(starts), axis=0), np.repeat(pf[None, :], len(starts), axis=0), starts, *args
    )
    ok = status == _kernels.OK
    if not ok.any():
        raise CellInfeasible(f"cell {n}: no alpha in [{config.alpha_min}, {config.alpha_max}] is feasible")
    obj = np.where(ok, obj, np.inf)
    best = _argmin_tiebreak(obj, alpha)
    return tuple(float(a) for a in alpha[best]), float(obj[best]), int(iters.sum())


def _argmin_tiebreak(obj, alpha):
    best = None
    for r in range(len(obj)):
        key = (obj[r], tuple(alpha[r]))
        if best is None or key < best[0]:
            best = (key, r)
    return best[1]


# ----------------------------------------------------------------------------------------------
# vectorised cell evaluation


def _cell_probs(pf, pn, pa):
    """Occurrence probabilities and outage for (cells, M) failure probabilities.

    ``pn``/``pa`` are per-feedback error rates (length M-1) shared by all cells.
    """
    cells, m = pf.shape
    pf0 = np.concatenate([np.ones((cells, 1)), pf], axis=1)
    keep = np.concatenate([[1.0], np.cumprod(1.0 - np.asarray(pn, dtype=float))])  # keep[d]
    pa_v = np.concatenate([[0.0], np.asarray(pa, dtype=float)])
    delivered = np.zeros(cells)
    for i in range(1, m + 1):
        delivered += (pf0[:, i - 1] - pf0[:, i]) * keep[i - 1]
    p_out = np.clip(1.0 - delivered, 0.0, 1.0)
    p = np.empty((cells, m))
    p[:, 0] = 1.0
    for i in range(2, m + 1):
        tot = pf0[:, i - 1] * keep[i - 1]
        for d in range(1, i):
            tot = tot + (pf0[:, d - 1] - pf0[:, d]) * keep[d - 1] * np.prod(pa_v[d:i])
        p[:, i - 1] = np.clip(tot, 0.0, 1.0)
    return p, p_out


def _delay_terms(T, pf, p, p_out, lam0, fb_delay, m):
    """Average delay per cell (inf when unstable), vectorised."""
    pf0 = np.concatenate([np.ones((len(pf), 1)), pf[:, :-1]], axis=1)
    t_mean = (T * pf0).sum(1) / pf0.sum(1)
    s1 = (T * p).sum(1)
    s2 = (T * T * p).sum(1)
    d_ok = 1.0 - p_out
    with np.errstate(divide="ignore", invalid="ignore"):
        util = t_mean * lam0 * p.sum(1) / d_ok
        load = lam0 * s1 / d_ok
        denom = d_ok / lam0 - s1
        stable = (d_ok > 0) & (util < 1 - 1e-9) & (load < 1 - 1e-9) & (denom > 0)
        t_ub = s2 / (2.0 * denom) + t_mean + fb_delay
        rtts = (m + 1 - (1.0 - pf[:, : m - 1]).sum(1)) / d_ok
        f = np.where(stable, rtts * t_ub, np.inf)
    return f, stable


def _cell_block(first, rows, n_max, m):
    """Cells with flat indices ``first .. first+rows-1`` in lexicographic order, as 1-based n."""
    flat = np.arange(first, first + rows, dtype=np.int64)
    out = np.empty((rows, m), dtype=np.int64)
    for j in range(m - 1, -1, -1):
        out[:, j] = flat % n_max + 1
        flat //= n_max
    return out


def _cells_from_flat(flat, n_max, m):
    flat = np.asarray(flat, dtype=np.int64).copy()
    out = np.empty((len(flat), m), dtype=np.int64)
    for j in range(m - 1, -1, -1):
        out[:, j] = flat % n_max + 1
        flat //= n_max
    return out


def _iter_blocks(problem):
    total = problem.n_max ** problem.M
    for first in range(0, total, _CHUNK_ROWS):
        rows = min(_CHUNK_ROWS, total - first)
        yield first, _cell_block(first, rows, problem.n_max, problem.M)


def _scan(problem, config, moments):
    """Per-cell bound (afd) or exact objective (sfd/perfect), plus constraint violation."""
    ch = problem.channel
    c = _consts(problem)
    m = problem.M
    total = problem.n_max ** m
    value = np.empty(total)
    violation = np.empty(total)
    if problem.scheme == "afd":
        pn_lo = [nack_error(config.alpha_max, problem.effective_snr_f)] * (m - 1)  # least outage
        pn_hi = [nack_error(config.alpha_min, problem.effective_snr_f)] * (m - 1)  # least keep factor
    else:
        pn_fixed = [nack_error(0.0, problem.effective_snr_f)] * (m - 1)
        pa_fixed = [ack_error(0.0, problem.effective_snr_f)] * (m - 1)
    for first, cells in _iter_blocks(problem):
        pf = failure_probs_grid(cells, ch, moments)
        T = cells / ch.symbols_per_slot * ch.slot_duration
        if problem.scheme == "afd":
            _, p_out_min = _cell_probs(pf, pn_lo, [0.0] * (m - 1))
            p_lo, _ = _cell_probs(pf, pn_hi, [0.0] * (m - 1))
            # queue term bounded below by dropping redundant (ACK-misread) attempts
            f, stable = _delay_terms(T, pf, p_lo, p_out_min, c["lam0"], c["fb_delay"], m)
            p_out = p_out_min
        else:
            p, p_out = _cell_probs(pf, pn_fixed, pa_fixed)
            f, stable = _delay_terms(T, pf, p, p_out, c["lam0"], c["fb_delay"], m)
        over = np.maximum(p_out - problem.epsilon, 0.0)
        feasible = stable & (over <= 1e-12)
        if config.nondecreasing and m > 1:
            feasible &= np.all(np.diff(cells, axis=1) >= 0, axis=1)
        value[first:first + len(cells)] = np.where(feasible, f, np.inf)
        violation[first:first + len(cells)] = over + np.where(stable, 0.0, 1.0)
    return value, violation


def _run_pgd(cells, problem, config, moments):
    ch = problem.channel
    T = cells / ch.symbols_per_slot * ch.slot_duration
    pf = failure_probs_grid(cells, ch, moments)
    starts = _starts(problem.M - 1, config)
    args = _pgd_args(problem, config)
    ns = len(starts)
    T2 = np.repeat(T, ns, axis=0)
    pf2 = np.repeat(pf, ns, axis=0)
    st2 = np.tile(starts, (len(cells), 1))
    if config.threads > 1 and len(T2) > 1:
        parts = np.array_split(np.arange(len(T2)), config.threads)
        with ThreadPoolExecutor(config.threads) as ex:
            res = list(ex.map(lambda idx: _kernels.pgd_batch(T2[idx], pf2[idx], st2[idx], *args), parts))
        status = np.concatenate([r[0] for r in res])
        alpha = np.concatenate([r[1] for r in res])
        obj = np.concatenate([r[2] for r in res])
        iters = np.concatenate([r[3] for r in res])
    else:
        status, alpha, obj, iters = _kernels.pgd_batch(T2, pf2, st2, *args)
    obj = np.where(status == _kernels.OK, obj, np.inf).reshape(len(cells), ns)
    alpha = alpha.reshape(len(cells), ns, -1)
    best_obj = np.empty(len(cells))
    best_alpha = np.empty((len(cells), problem.M - 1))
    for r in range(len(cells)):
        j = _argmin_tiebreak(obj[r], alpha[r])
        best_obj[r] = obj[r, j]
        best_alpha[r] = alpha[r, j]
    return best_obj, best_alpha, int(iters.sum())


def _ordered_chunks(value, batch):
    """Finite cells in (value, index) order, in chunks, sorting only as far as consumed."""
    finite = np.flatnonzero(np.isfinite(value))
    vals = value[finite]
    done = 0
    k = min(len(finite), batch * 8)
    while done < len(finite):
        if k < len(finite):
            cut = np.partition(vals, k - 1)[k - 1]
            pick = np.flatnonzero(vals <= cut)
        else:
            pick = np.arange(len(finite))
        pick = pick[np.lexsort((finite[pick], vals[pick]))]
        ranked = finite[pick]
        while done < len(ranked):
            yield ranked[done:done + batch]
            done = min(done + batch, len(ranked))
        k = min(len(finite), k * 8)


def _better(obj, n, alpha, best):
    return (obj, tuple(n), tuple(alpha)) < best


def optimize(problem: OptimizationProblem, config: OptimizerConfig = OptimizerConfig(),
             moments: Optional[MiMoments] = None) -> OptimizationResult:
    """Minimise the average delay over ``n`` in {1..n_max}^M and (for 'afd') alpha.

    Infeasible problems are reported through ``feasible=False`` with the
    least-violating cell; nothing is raised.
    """
    ch = problem.channel
    moments = moments or mi_moments(ch)
    m = problem.M
    total = problem.n_max ** m
    value, violation = _scan(problem, config, moments)

    best = (math.inf, (), ())
    evaluated = 0
    iters_total = 0
    if problem.scheme != "afd":
        evaluated = total
        idx = int(np.argmin(value))  # first minimum == lexicographically smallest n
        if math.isfinite(value[idx]):
            n = tuple(int(x) for x in _cells_from_flat([idx], problem.n_max, m)[0])
            best = (float(value[idx]), n, (0.0,) * (m - 1))
    else:
        if config.search == "exhaustive":
            chunks = (np.arange(p, min(p + config.batch, total)) for p in range(0, total, config.batch))
        else:
            chunks = _ordered_chunks(value, config.batch)
        for chunk in chunks:
            if config.search == "bnb":
                chunk = chunk[value[chunk] <= best[0]]
                if len(chunk) == 0:
                    break
            cells = _cells_from_flat(chunk, problem.n_max, m)
            obj, alpha, it = _run_pgd(cells, problem, config, moments)
            evaluated += len(cells)
            iters_total += it
            for r in range(len(cells)):
                if math.isfinite(obj[r]) and _better(obj[r], cells[r], alpha[r], best):
                    best = (float(obj[r]), tuple(int(x) for x in cells[r]), tuple(float(a) for a in alpha[r]))

    snr_f = problem.effective_snr_f
    if math.isfinite(best[0]):
        policy = HarqPolicy(n=best[1], alphas=best[2], feedback_timing_k=problem.k, n_max=problem.n_max)
        report = delay_report(policy, ch, FeedbackParams(snr_f, policy.alphas), problem.queue,
                              strict=False, moments=moments)
        feasible = report.stable and report.p_out <= problem.epsilon + 1e-9
        return OptimizationResult(policy, report, report.avg_delay, feasible, evaluated, iters_total,
                                  total, problem.scheme, 0.0)

    idx = int(np.argmin(violation))
    n = tuple(int(x) for x in _cells_from_flat([idx], problem.n_max, m)[0])
    a = config.alpha_max if problem.scheme == "afd" else 0.0
    policy = HarqPolicy(n=n, alphas=(a,) * (m - 1), feedback_timing_k=problem.k, n_max=problem.n_max)
    report = delay_report(policy, ch, FeedbackParams(snr_f, policy.alphas), problem.queue,
                          strict=False, moments=moments)
    return OptimizationResult(policy, report, math.inf, False, evaluated, iters_total, total,
                              problem.scheme, float(violation[idx]))


def with_scheme(problem: OptimizationProblem, scheme: str) -> OptimizationProblem:
    return replace(problem, scheme=scheme)
