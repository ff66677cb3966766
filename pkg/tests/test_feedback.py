import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from harq_delay import FeedbackParams, ack_error, error_rates, nack_error, validate_feedback_channel
from harq_delay.feedback import erfc, perfect_rates, symmetric


def test_erfc_values():
    assert erfc(0.0) == 1.0
    assert erfc(1.0) == pytest.approx(0.157299207050285, rel=1e-14)
    for x in (0.1, 0.5, 2.0, 5.0, 10.0):
        assert erfc(x) == pytest.approx(2 * oracles.half_erfc(x), rel=1e-13)


@given(st.floats(-6, 6))
def test_erfc_reflection(x):
    assert erfc(x) + erfc(-x) == pytest.approx(2.0, abs=1e-15)


def test_symmetric_point():
    assert nack_error(0.0, 1.0) == pytest.approx(0.07864960352514257, rel=1e-13)
    assert ack_error(0.0, 1.0) == nack_error(0.0, 1.0)


def test_offset_point():
    assert nack_error(0.5, 1.0) == pytest.approx(oracles.half_erfc(1.5), rel=1e-13)
    assert ack_error(0.5, 1.0) == pytest.approx(oracles.half_erfc(0.5), rel=1e-13)


def test_threshold_at_ack_point():
    a = 1 - 1e-12
    assert ack_error(a, 2.0) == pytest.approx(0.5, abs=1e-11)
    assert nack_error(a, 2.0) == pytest.approx(oracles.half_erfc(2 * math.sqrt(2.0)), rel=1e-10)


def test_noiseless_limit():
    for a in (-0.9, 0.0, 0.7):
        assert nack_error(a, 1e8) < 1e-300 and ack_error(a, 1e8) < 1e-300
        assert nack_error(a, math.inf) == 0.0 and ack_error(a, math.inf) == 0.0


def test_error_rates_vector():
    fb = FeedbackParams(snr_f=3.0, alphas=(0.0, 0.3, 0.9))
    r = error_rates(fb)
    np.testing.assert_allclose(r.p_nack_err, [nack_error(a, 3.0) for a in fb.alphas], rtol=0)
    np.testing.assert_allclose(r.p_ack_err, [ack_error(a, 3.0) for a in fb.alphas], rtol=0)
    assert r.p_nack_err_with_virtual[0] == 0.0


def test_perfect_and_symmetric_helpers():
    r = perfect_rates(3)
    assert np.all(r.p_nack_err == 0) and np.all(r.p_ack_err == 0)
    assert symmetric(2.0, 4).alphas == (0.0, 0.0, 0.0)


def test_rejects_nonpositive_snr():
    with pytest.raises(ValueError):
        FeedbackParams(snr_f=0.0, alphas=(0.1,))


@given(st.floats(math.log(0.05), math.log(50)), st.lists(st.floats(-0.99, 0.99), min_size=2, max_size=2, unique=True))
def test_tradeoff_monotone(log_snr, pair):
    s = math.exp(log_snr)
    lo, hi = sorted(pair)
    if hi - lo < 1e-6:
        return
    assert nack_error(hi, s) < nack_error(lo, s)
    assert ack_error(hi, s) > ack_error(lo, s)
    if hi > 1e-6:
        assert nack_error(hi, s) < ack_error(hi, s)


@given(st.floats(-0.99, 0.99), st.floats(0.05, 50))
def test_rates_in_open_half_interval(alpha, s):
    for p in (nack_error(alpha, s), ack_error(alpha, s)):
        assert 0.0 <= p < 0.5


def test_detector_monte_carlo_small():
    fb = FeedbackParams(snr_f=1.0, alphas=(0.0, 0.5))
    pn, pa = validate_feedback_channel(fb, trials=200_000, seed=11)
    for i, a in enumerate(fb.alphas):
        for emp, exact in ((pn[i], nack_error(a, 1.0)), (pa[i], ack_error(a, 1.0))):
            se = math.sqrt(exact * (1 - exact) / 200_000)
            assert abs(emp - exact) < 3 * se


def test_detector_high_snr():
    pn, pa = validate_feedback_channel(FeedbackParams(100.0, (0.0,)), trials=1_000_000, seed=1)
    assert pn[0] < 1e-4 and pa[0] < 1e-4


def test_detector_rejects_few_trials():
    with pytest.raises(ValueError):
        validate_feedback_channel(FeedbackParams(1.0, (0.0,)), trials=100)
