"""Rate model, sifting statistics, QBER gate, round records, auth aborts."""
import numpy as np
import pytest

from qkdnet.auth import PresharedPool
from qkdnet.pipeline import (
    SIFT_FACTOR,
    DeviceProfile,
    GateAction,
    LogRecord,
    PairingParams,
    PairingProcess,
    PipelineError,
    PqcRoundAuth,
    PresharedRoundAuth,
    QberPolicy,
    estimate_key_rate,
    fit_device_factor,
    mean_rate_kbps,
    qber_gate,
    run_pairing_process,
    simulate_sifting,
)


# --- rate model ---------------------------------------------------------------

def test_reference_point_is_exact():
    assert estimate_key_rate(10.0, DeviceProfile()) == 10.0


def test_rate_scales_one_decade_per_10db():
    profile = DeviceProfile()
    assert estimate_key_rate(20.0, profile) == pytest.approx(1.0)
    assert estimate_key_rate(0.0, profile) == pytest.approx(100.0)


def test_device_factor_scales_linearly():
    doubled = DeviceProfile(device_factor=2.0)
    assert estimate_key_rate(10.0, doubled) == pytest.approx(20.0)


def test_fit_device_factor_inverts_estimate():
    rng = np.random.default_rng(51)
    for _ in range(20):
        loss = float(rng.uniform(3.0, 14.0))
        observed = float(rng.uniform(2.0, 36.0))
        factor = fit_device_factor(observed, loss)
        profile = DeviceProfile(device_factor=factor)
        assert estimate_key_rate(loss, profile) == pytest.approx(observed)


def test_profile_validation():
    with pytest.raises(ValueError):
        DeviceProfile(detector_efficiency=0.0)
    with pytest.raises(ValueError):
        DeviceProfile(qber_base=0.5)
    with pytest.raises(ValueError):
        DeviceProfile(repetition_rate_hz=-1.0)
    with pytest.raises(ValueError):
        estimate_key_rate(-2.0, DeviceProfile())


# --- sifting ------------------------------------------------------------------

def test_sifting_hits_block_target_on_average():
    profile = DeviceProfile()
    rng = np.random.default_rng(52)
    target = 4096
    sizes = [
        len(simulate_sifting(profile, 10.0, target, rng).alice_bits)
        for _ in range(40)
    ]
    # binomial with mean == target; 3 sigma band around the sample mean
    sigma = np.sqrt(target) / np.sqrt(len(sizes))
    assert abs(np.mean(sizes) - target) < 4 * sigma


def test_sifting_qber_matches_request():
    profile = DeviceProfile()
    rng = np.random.default_rng(53)
    pair = simulate_sifting(profile, 8.0, 20000, rng, qber=0.02)
    observed = np.count_nonzero(pair.alice_bits != pair.bob_bits) / len(pair)
    assert observed == pytest.approx(0.02, abs=0.006)
    assert pair.qber_true == 0.02


def test_sifting_explicit_pulse_budget():
    profile = DeviceProfile()
    rng = np.random.default_rng(54)
    p_detect = 10 ** (-1.0) * profile.detector_efficiency * SIFT_FACTOR
    n_pulses = 200000
    pair = simulate_sifting(profile, 10.0, None, rng, n_pulses=n_pulses)
    expect = n_pulses * p_detect
    assert abs(len(pair.alice_bits) - expect) < 5 * np.sqrt(expect)


def test_sifting_zero_detection_raises():
    profile = DeviceProfile()
    rng = np.random.default_rng(55)
    with pytest.raises(PipelineError):
        simulate_sifting(profile, 300.0, None, rng, n_pulses=100)


# --- QBER gate ----------------------------------------------------------------

def gate_oracle(samples, threshold, limit):
    out, streak = [], 0
    for q in samples:
        if q <= threshold:
            streak = 0
            out.append(GateAction.KEEP)
        else:
            streak += 1
            if streak >= limit:
                streak = 0
                out.append(GateAction.CALIBRATE)
            else:
                out.append(GateAction.DISCARD)
    return out


def test_gate_keep_then_three_discards_is_one_calibration():
    policy = QberPolicy(threshold=0.03125, consecutive_limit=3)
    actions = qber_gate([0.01, 0.05, 0.05, 0.05], policy)
    assert actions == [
        GateAction.KEEP,
        GateAction.DISCARD,
        GateAction.DISCARD,
        GateAction.CALIBRATE,
    ]
    assert actions.count(GateAction.CALIBRATE) == 1


def test_gate_counter_resets_after_calibration():
    policy = QberPolicy(threshold=0.03125, consecutive_limit=2)
    actions = qber_gate([0.05, 0.05, 0.05, 0.05], policy)
    assert actions == [
        GateAction.DISCARD,
        GateAction.CALIBRATE,
        GateAction.DISCARD,
        GateAction.CALIBRATE,
    ]


def test_gate_matches_rescan_oracle_on_random_streams():
    rng = np.random.default_rng(56)
    policy = QberPolicy(threshold=0.03125, consecutive_limit=3)
    for _ in range(50):
        samples = rng.uniform(0.0, 0.0625, size=200)
        assert qber_gate(samples, policy) == gate_oracle(
            samples, policy.threshold, policy.consecutive_limit
        )


def test_gate_policy_validation():
    with pytest.raises(ValueError):
        QberPolicy(threshold=0.0)
    with pytest.raises(ValueError):
        QberPolicy(consecutive_limit=0)


# --- log records ----------------------------------------------------------------

def test_log_record_round_trip():
    record = LogRecord(1800.0, "U4-U3", "U4>X1>U3", 0.006459, 29955, 3121, "keep", "pqc")
    assert LogRecord.from_line(record.to_line()) == record


def test_log_record_unmeasured_qber():
    record = LogRecord(0.0, "U4-U3", "U4>X1>U3", -1.0, 0, 0, "auth-failed", "pqc")
    line = record.to_line()
    assert LogRecord.from_line(line).qber == -1.0


def test_log_record_malformed_line():
    with pytest.raises(ValueError, match="8 fields"):
        LogRecord.from_line("1.0 U4-U3 route 0.1 10")


# --- pairing rounds --------------------------------------------------------------

def preshared_auth(pool_bytes=10**9):
    return PresharedRoundAuth(b"\x10" * 32, PresharedPool(remaining_bytes=pool_bytes))


def small_params():
    return PairingParams(
        round_interval_s=300.0,
        calibration_blocks=4,
        calibration_block_bits=8192,
    )


def test_round_produces_key_and_log(metro_topology):
    records, delivered = run_pairing_process(
        "U4-U3",
        "U4>X1>U3",
        DeviceProfile(device_factor=3.0),
        4.8,
        preshared_auth(),
        np.random.default_rng(57),
        duration_s=900.0,
        params=small_params(),
    )
    assert len(records) == 3
    assert delivered > 0
    assert all(r.action == "keep" for r in records)
    assert all(r.auth_mode == "preshared" for r in records)
    assert mean_rate_kbps(records) > 0


def test_zero_duration_runs_no_rounds():
    records, delivered = run_pairing_process(
        "U4-U3", "r", DeviceProfile(), 4.8, preshared_auth(),
        np.random.default_rng(58), duration_s=0.0, params=small_params(),
    )
    assert records == [] and delivered == 0


def test_short_positive_duration_runs_one_round():
    records, _ = run_pairing_process(
        "U4-U3", "r", DeviceProfile(), 4.8, preshared_auth(),
        np.random.default_rng(59), duration_s=5.0, params=small_params(),
    )
    assert len(records) == 1


def test_failed_round_auth_aborts_without_key():
    auth = PqcRoundAuth(
        None, None, failure_rate=1.0, fail_rng=np.random.default_rng(60)
    )
    records, delivered = run_pairing_process(
        "U4-U3", "r", DeviceProfile(), 4.8, auth,
        np.random.default_rng(61), duration_s=300.0, params=small_params(),
    )
    assert delivered == 0
    assert [r.action for r in records] == ["auth-failed"]
    assert records[0].key_bits_out == 0


def test_pool_exhaustion_halts_process():
    # 4 tag events per good round at 32 bytes each; allow one round only
    auth = preshared_auth(pool_bytes=4 * 32)
    process = PairingProcess(
        "U4-U3", "r", DeviceProfile(), 4.8, auth,
        np.random.default_rng(62), params=small_params(),
    )
    records, delivered = process.run(1200.0)
    assert delivered > 0
    assert records[-1].action == "pool-exhausted"
    assert process.halted == "pool-exhausted"
    assert len(records) < 4


def test_key_store_credited_with_delivered_bits():
    from qkdnet.kms import KeyStore

    store = KeyStore("U4-U3")
    _, delivered = run_pairing_process(
        "U4-U3", "r", DeviceProfile(device_factor=3.0), 4.8, preshared_auth(),
        np.random.default_rng(63), duration_s=600.0, params=small_params(),
        key_store=store,
    )
    assert store.total_credited == pytest.approx(delivered / 8)
