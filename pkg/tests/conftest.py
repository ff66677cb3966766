import pytest

from harq_delay import ChannelParams, QueueParams

TABLE_SLOT = 125e-6
TABLE_PAYLOAD = 2816
TABLE_LAMBDA0 = 200.0
BANDWIDTH = 20e6
REFERENCE_SNR_D_DB = -1.0


def db(x):
    return 10.0 ** (x / 10.0)


def table_channel(snr_d_db=REFERENCE_SNR_D_DB, bandwidth=BANDWIDTH):
    return ChannelParams(snr_d=db(snr_d_db), bandwidth_w=bandwidth,
                         slot_duration=TABLE_SLOT, payload_bits=TABLE_PAYLOAD)


@pytest.fixture
def channel():
    return table_channel()


@pytest.fixture
def queue():
    return QueueParams(TABLE_LAMBDA0)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per criterion, then assert it."""
    def record(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
