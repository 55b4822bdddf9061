"""Virtual-time handshake model: budget, frame sizes, scaling laws."""
import pytest

from qkdnet.timing import frame_sizes_bytes, handshake_timing

ZERO_OPS = {"keygen": 0.0, "sign": 0.0, "verify": 0.0}


def test_frame_sizes():
    sizes = frame_sizes_bytes()
    assert sizes == {"nonce": 40, "cert": 3820, "sig": 2527}


def test_default_scenario_within_budget():
    timing = handshake_timing()
    assert timing.total_s == pytest.approx(0.08387, abs=1e-6)
    assert timing.total_s <= 0.100


def test_breakdown_lists_phases_in_start_order():
    text = handshake_timing().breakdown()
    lines = text.splitlines()
    assert lines[0].startswith("phase")
    assert lines[-1] == "total: 83.870 ms"
    starts = [float(line.split()[1]) for line in lines[1:-1]]
    assert starts == sorted(starts)
    names = {line.split()[0] for line in lines[1:-1]}
    assert {"nonce-tx", "cert-tx", "sig-tx", "sign", "verify-cert", "verify-sig"} <= names


def test_zero_cost_scenario_is_instant():
    timing = handshake_timing(delay_s=0.0, bandwidth_bytes_per_s=None, op_costs_s=ZERO_OPS)
    assert timing.total_s == 0.0


def test_delay_slope_is_two_when_delay_dominates():
    # mutual authentication waits on two propagation legs once delay exceeds
    # the overlapped crypto work
    totals = {
        d: handshake_timing(delay_s=d, bandwidth_bytes_per_s=None).total_s
        for d in (0.01, 0.02, 0.03, 0.05)
    }
    assert totals[0.02] - totals[0.01] == pytest.approx(0.02)
    assert totals[0.03] - totals[0.02] == pytest.approx(0.02)
    assert totals[0.05] - totals[0.03] == pytest.approx(0.04)


def test_bandwidth_halving_doubles_serialization_only():
    base = handshake_timing(delay_s=0.0, bandwidth_bytes_per_s=100000.0, op_costs_s=ZERO_OPS)
    half = handshake_timing(delay_s=0.0, bandwidth_bytes_per_s=50000.0, op_costs_s=ZERO_OPS)
    assert base.total_s == pytest.approx(base.serialization_s())
    assert half.serialization_s() == pytest.approx(2.0 * base.serialization_s())
    assert half.total_s == pytest.approx(2.0 * base.total_s)
    # wire bytes= 40 + 3820 + 2527
    assert base.serialization_s() == pytest.approx(6387 / 100000.0)


def test_op_cost_override():
    slow = handshake_timing(op_costs_s={"sign": 0.05, "verify": 0.05, "keygen": 0.05})
    assert slow.total_s > handshake_timing().total_s


def test_validation():
    with pytest.raises(ValueError):
        handshake_timing(delay_s=-0.001)
    with pytest.raises(ValueError):
        handshake_timing(bandwidth_bytes_per_s=0.0)
