import io
import math

import pytest

import oracles
from conftest import table_channel
from harq_delay import (
    ChannelParams,
    FeedbackParams,
    HarqPolicy,
    InvalidConfig,
    QueueExplosion,
    QueueParams,
    SimConfig,
    channel_uses,
    failure_probs,
    mi_moments,
    run,
    simulator,
)
from harq_delay.feedback import error_rates
from harq_delay.simulator import TraceWriter

AFD = HarqPolicy((18, 11, 11, 13), (0.999, 0.999, 0.891119217220765))


def config(**kw):
    base = dict(policy=AFD, channel=table_channel(-1.0), feedback=AFD.feedback(1.0),
                queue=QueueParams(200.0), num_packets=100_000, warmup_packets=2_000)
    base.update(kw)
    return SimConfig(**base)


def within(est, value, k=3.0):
    return abs(est.mean - value) <= k * est.std_error + 1e-15


def test_seed_determinism():
    a, b = run(config(seed=4)), run(config(seed=4))
    assert a.mean_delay == b.mean_delay and a.p_fail == b.p_fail and a.rounds == b.rounds
    assert run(config(seed=5)).mean_delay != a.mean_delay


def test_noiseless_limit():
    ch = ChannelParams(snr_d=1e6, bandwidth_w=20e6, slot_duration=125e-6, payload_bits=100)
    pol = HarqPolicy((4, 4, 4), (0.0, 0.0))
    rep = run(config(policy=pol, channel=ch, feedback=FeedbackParams(1e12, pol.alphas), num_packets=20_000))
    assert rep.p_out.mean == 0.0
    assert rep.p_occur[1].mean == 0.0
    assert rep.mean_service.mean == pytest.approx(4 / 14 * 125e-6, rel=1e-12)
    assert rep.mean_rtt_count.mean == 1.0


def test_gaussian_mode_reproduces_failure_probs():
    rep = run(config(use_gaussian_mi=True, num_packets=1_000_000, warmup_packets=10_000))
    ch = table_channel(-1.0)
    pf = failure_probs(AFD.n, ch, mi_moments(ch))
    assert rep.rounds >= 1_000_000
    for est, want in zip(rep.p_fail, pf):
        assert within(est, want)


def test_exact_first_attempt_law():
    ch = table_channel(-1.0)
    rep = run(config(num_packets=400_000))
    u = channel_uses(AFD.n[0], ch)
    exact = -math.expm1(-(2.0 ** (ch.payload_bits / u) - 1.0) / ch.snr_d)
    assert within(rep.p_fail[0], exact)


def test_round_structure_matches_recursion():
    # with exact (non-negative) MI the accumulated information is monotone, so
    # the occurrence recursion applied to the empirical failure rates is exact
    rep = run(config(num_packets=400_000))
    r = error_rates(AFD.feedback(1.0))
    occ, out = oracles.enumerate_round([e.mean for e in rep.p_fail], list(r.p_nack_err), list(r.p_ack_err))
    for est, want in zip(rep.p_occur, occ):
        assert within(est, want, k=4.0)
    assert within(rep.p_out, out, k=4.0)


@pytest.mark.parametrize("occupy", [False, True])
def test_md1_queue(occupy):
    ch = ChannelParams(snr_d=1e6, bandwidth_w=20e6, slot_duration=125e-6, payload_bits=100)
    pol = HarqPolicy((28,), ())
    lam = 1600.0
    rep = run(config(policy=pol, channel=ch, feedback=FeedbackParams(1.0, ()), queue=QueueParams(lam),
                     num_packets=400_000, occupy_during_feedback=occupy))
    service = 28 / 14 * 125e-6 + (125e-6 if occupy else 0.0)
    want = oracles.pk_wait(lam, service)
    assert abs(rep.mean_queue_wait.mean - want) <= 3 * rep.mean_queue_wait.half_width_95
    assert rep.mean_queue_wait.mean == pytest.approx(want, rel=0.03)


def test_littles_law():
    rep = run(config(num_packets=400_000))
    assert rep.mean_queue_length.mean == pytest.approx(rep.little_queue_length, rel=0.05)


def test_replications_and_workers():
    one = run(config(replications=3, num_packets=20_000))
    par = run(config(replications=3, workers=2, num_packets=20_000))
    assert one.mean_delay == par.mean_delay and one.rounds == par.rounds
    assert one.packets == 3 * (20_000 - 2_000)


def test_report_ranges():
    rep = run(config(num_packets=50_000))
    for est in (*rep.p_fail, *rep.p_occur, rep.p_out):
        assert 0 <= est.mean <= 1 and est.half_width_95 >= 0 and est.n_samples > 0
    assert rep.mean_queue_wait.mean >= 0
    assert rep.rng.startswith("numpy.random.Philox")


def test_trace_output():
    buf = io.StringIO()
    rep = run(config(num_packets=3_000, warmup_packets=100), trace=TraceWriter(buf))
    lines = buf.getvalue().splitlines()
    assert lines[0] == TraceWriter.header
    assert len(lines) - 1 >= rep.packets
    fields = lines[1].split(",")
    assert len(fields) == 6 and fields[3] in ("delivered", "outage")


def test_queue_explosion(monkeypatch):
    monkeypatch.setattr(simulator, "MAX_QUEUE", 500)
    with pytest.raises(QueueExplosion) as info:
        run(config(queue=QueueParams(20_000.0), num_packets=200_000))
    assert info.value.queue_length > 500


@pytest.mark.parametrize("kw", [dict(num_packets=10, warmup_packets=10), dict(replications=0),
                                dict(backend="fortran"), dict(seed=-1)])
def test_invalid_config(kw):
    with pytest.raises(InvalidConfig):
        config(**kw)


def test_alpha_length_checked():
    with pytest.raises(InvalidConfig):
        config(feedback=FeedbackParams(1.0, (0.0,)))
