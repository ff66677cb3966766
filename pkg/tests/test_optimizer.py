import itertools
import math

import numpy as np
import pytest

import oracles
from conftest import db, table_channel
from harq_delay import (
    CellInfeasible,
    FeedbackParams,
    HarqPolicy,
    OptimizationProblem,
    OptimizerConfig,
    QueueParams,
    delay_report,
    optimize,
    pgd_alpha,
)

Q = QueueParams(200.0)


def objective(n, alphas, ch, snr_f, q=Q):
    pol = HarqPolicy(n, alphas)
    rep = delay_report(pol, ch, FeedbackParams(snr_f, pol.alphas), q, strict=False)
    return rep.avg_delay, rep.p_out


def test_single_attempt_equals_scan():
    ch = table_channel(3.0)
    res = optimize(OptimizationProblem(ch, Q, 1e12, M=1, n_max=56))
    scan = [objective((n,), (), ch, 1e12)[0] for n in range(1, 57)]
    assert res.best_policy.n == (int(np.argmin(scan)) + 1,)
    assert res.objective == pytest.approx(min(scan), rel=1e-14)


def test_dense_grid_never_beats_optimizer():
    ch = table_channel(0.0)
    prob = OptimizationProblem(ch, Q, db(0.0), M=2, n_max=8)
    res = optimize(prob)
    grid = np.round(np.arange(0, 0.9990001, 0.01), 2)
    best = min(objective(n, (a,), ch, db(0.0))[0]
               for n in itertools.product(range(1, 9), repeat=2) for a in grid)
    assert res.objective <= best * (1 + 1e-12)


@pytest.mark.parametrize("snr_d_db,snr_f_db", [(-1.0, 0.0), (2.0, -5.0), (5.0, 0.0)])
def test_pgd_matches_golden_section(snr_d_db, snr_f_db):
    ch = table_channel(snr_d_db)
    prob = OptimizationProblem(ch, Q, db(snr_f_db), M=2, n_max=56)
    n = (20, 14)
    alphas, obj, _ = pgd_alpha(n, prob)
    _, ref = oracles.golden_section(lambda a: objective(n, (a,), ch, db(snr_f_db))[0], 0.0, 0.999)
    assert obj <= ref * (1 + 1e-4)
    assert obj == pytest.approx(objective(n, alphas, ch, db(snr_f_db))[0], rel=1e-13)


def test_noiseless_feedback_leaves_alpha_flat():
    ch = table_channel(0.0)
    prob = OptimizationProblem(ch, Q, 1e9, M=4)
    n = (16, 10, 10, 12)
    _, obj, _ = pgd_alpha(n, prob)
    assert abs(obj - objective(n, (0.0,) * 3, ch, 1e9)[0]) <= 1e-9 * obj


def test_cell_infeasible():
    prob = OptimizationProblem(table_channel(-1.0), Q, 1.0, M=4, epsilon=1e-4)
    with pytest.raises(CellInfeasible):
        pgd_alpha((5, 5, 5, 5), prob)


def test_outage_constraint_restored():
    ch = table_channel(-1.0)
    prob = OptimizationProblem(ch, Q, 1.0, M=4, epsilon=0.01)
    alphas, obj, _ = pgd_alpha((34, 40, 44, 48), prob)
    d, p_out = objective((34, 40, 44, 48), alphas, ch, 1.0)
    assert p_out <= 0.01 + 1e-9 and d == pytest.approx(obj, rel=1e-13)


@pytest.mark.parametrize("snr_d_db", [-3.0, 1.0, 6.0])
def test_bound_search_equals_exhaustive(snr_d_db):
    prob = OptimizationProblem(table_channel(snr_d_db), Q, db(-2.0), M=3, n_max=18)
    a = optimize(prob)
    b = optimize(prob, OptimizerConfig(search="exhaustive"))
    assert a.objective == b.objective
    assert a.best_policy == b.best_policy
    assert a.cells_evaluated < b.cells_evaluated


@pytest.mark.parametrize("snr_d_db", [-5, 0, 5, 10])
@pytest.mark.parametrize("snr_f_db", [-5, 0, 5])
def test_afd_never_worse_than_sfd(snr_d_db, snr_f_db):
    base = OptimizationProblem(table_channel(snr_d_db), Q, db(snr_f_db), M=3, n_max=24)
    afd = optimize(base)
    sfd = optimize(OptimizationProblem(**{**base.__dict__, "scheme": "sfd"}))
    assert afd.objective <= sfd.objective * (1 + 1e-9)


def test_result_revalidated_independently():
    prob = OptimizationProblem(table_channel(0.0), Q, db(-2.0), M=3, n_max=40, epsilon=0.05)
    res = optimize(prob)
    assert res.feasible
    rep = delay_report(res.best_policy, prob.channel, res.best_policy.feedback(prob.snr_f), Q)
    assert rep.p_out <= 0.05 + 1e-9 and rep.stable
    assert res.objective == rep.avg_delay == res.best_report.avg_delay


def test_infeasible_problem_is_flagged():
    prob = OptimizationProblem(table_channel(-1.0), Q, 1.0, M=2, n_max=10, epsilon=1e-6)
    res = optimize(prob)
    assert not res.feasible and math.isinf(res.objective) and res.violation > 0
    assert len(res.best_policy.n) == 2


def test_deterministic_and_thread_independent():
    prob = OptimizationProblem(table_channel(1.0), Q, db(-3.0), M=3, n_max=20)
    a = optimize(prob)
    b = optimize(prob)
    c = optimize(prob, OptimizerConfig(threads=3, batch=7))
    for r in (b, c):
        assert r.objective == a.objective and r.best_policy == a.best_policy


def test_multistart_never_worse():
    prob = OptimizationProblem(table_channel(0.0), Q, db(-5.0), M=3, n_max=16)
    assert optimize(prob, OptimizerConfig(multistart=True)).objective <= optimize(prob).objective


def test_nondecreasing_mode():
    prob = OptimizationProblem(table_channel(0.0), Q, 1.0, M=3, n_max=16)
    res = optimize(prob, OptimizerConfig(nondecreasing=True))
    assert list(res.best_policy.n) == sorted(res.best_policy.n)


def test_perfect_baseline_bounds_everything():
    base = OptimizationProblem(table_channel(0.0), Q, db(-5.0), M=3, n_max=20)
    perfect = optimize(OptimizationProblem(**{**base.__dict__, "scheme": "perfect"}))
    assert perfect.objective <= optimize(base).objective


def test_problem_validation():
    ch = table_channel(0.0)
    for kw in (dict(epsilon=0.0), dict(epsilon=1.5), dict(n_max=0), dict(scheme="x"), dict(k=-1)):
        with pytest.raises(ValueError):
            OptimizationProblem(ch, Q, 1.0, **kw)
