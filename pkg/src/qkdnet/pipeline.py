"""Per-connection key generation at desk scale.

A pairing process runs rounds of sift -> authenticate -> reconcile ->
authenticate -> privacy-amplify -> authenticate, where each round
accumulates a configurable number of seconds' worth of sifted bits
(block_seconds) and stands for a longer stretch of wall time
(round_interval_s). The sifted-bit rate is calibrated per connection so
that the mean delivered rate matches the loss-model estimate: a few
warm-up blocks measure the end-to-end pipeline efficiency at the
connection's error rate, and the sift rate is the target rate divided by
that efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import amplify, reconcile
from .auth import (
    AuthSession,
    PoolExhaustedError,
    PresharedPool,
    TagCategory,
    authenticate_data,
    preshared_authenticate,
)

SIFT_FACTOR = 0.5


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    repetition_rate_hz: float = 4.0e7
    detector_efficiency: float = 0.15
    reference_rate_kbps: float = 10.0
    reference_loss_dB: float = 10.0
    device_factor: float = 1.0
    qber_base: float = 0.01
    qber_jitter_frac: float = 0.1   # sigma of per-round jitter, as fraction of base

    def __post_init__(self):
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ValueError("detector_efficiency must be in (0, 1]")
        if not 0.0 <= self.qber_base < 0.5:
            raise ValueError("qber_base must be in [0, 0.5)")
        for name in ("repetition_rate_hz", "reference_rate_kbps", "device_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def estimate_key_rate(total_loss_dB: float, profile: DeviceProfile) -> float:
    """Loss-model key rate in kbps: one decade per 10 dB."""
    if total_loss_dB < 0:
        raise ValueError("loss must be non-negative")
    decades = (profile.reference_loss_dB - total_loss_dB) / 10.0
    return profile.reference_rate_kbps * 10.0 ** decades * profile.device_factor


def fit_device_factor(
    observed_kbps: float,
    total_loss_dB: float,
    reference_rate_kbps: float = 10.0,
    reference_loss_dB: float = 10.0,
) -> float:
    model = reference_rate_kbps * 10.0 ** ((reference_loss_dB - total_loss_dB) / 10.0)
    return observed_kbps / model


@dataclass
class SiftedKeyPair:
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    qber_true: float

    def __len__(self) -> int:
        return int(self.alice_bits.size)


def simulate_sifting(
    profile: DeviceProfile,
    total_loss_dB: float,
    block_target_bits: int | None,
    rng: np.random.Generator,
    qber: float | None = None,
    n_pulses: int | None = None,
) -> SiftedKeyPair:
    """Sample one sifted block through the loss/efficiency/sift-1/2 channel.

    Either block_target_bits (expected output length) or n_pulses must be
    given; the other is derived from the per-pulse sift probability.
    """
    if qber is None:
        qber = profile.qber_base
    p_sift = (
        10.0 ** (-total_loss_dB / 10.0) * profile.detector_efficiency * SIFT_FACTOR
    )
    if n_pulses is None:
        if block_target_bits is None or block_target_bits <= 0:
            raise ValueError("need block_target_bits > 0 or explicit n_pulses")
        n_pulses = int(round(block_target_bits / p_sift))
    n = int(rng.binomial(n_pulses, p_sift))
    if n == 0:
        raise PipelineError(
            f"zero detections over {n_pulses} pulses at {total_loss_dB} dB"
        )
    alice = rng.integers(0, 2, n, dtype=np.uint8)
    flips = (rng.random(n) < qber).astype(np.uint8)
    return SiftedKeyPair(alice_bits=alice, bob_bits=alice ^ flips, qber_true=qber)


# --- QBER threshold gate ------------------------------------------------------

@dataclass(frozen=True)
class QberPolicy:
    threshold: float = 0.03125
    consecutive_limit: int = 3

    def __post_init__(self):
        if not 0.0 < self.threshold < 0.5:
            raise ValueError("threshold must be in (0, 0.5)")
        if self.consecutive_limit < 1:
            raise ValueError("consecutive_limit must be >= 1")


class GateAction(Enum):
    KEEP = "keep"
    DISCARD = "discard"
    CALIBRATE = "calibrate"


class GateState:
    """Streaming form of the threshold gate; one instance per process."""

    def __init__(self, policy: QberPolicy):
        self.policy = policy
        self._consecutive = 0

    def update(self, qber: float) -> GateAction:
        if qber <= self.policy.threshold:
            self._consecutive = 0
            return GateAction.KEEP
        self._consecutive += 1
        if self._consecutive >= self.policy.consecutive_limit:
            self._consecutive = 0
            return GateAction.CALIBRATE
        return GateAction.DISCARD


def qber_gate(samples, policy: QberPolicy | None = None) -> list[GateAction]:
    state = GateState(policy or QberPolicy())
    return [state.update(q) for q in samples]


# --- log records --------------------------------------------------------------

@dataclass(frozen=True)
class LogRecord:
    timestamp_s: float
    connection: str
    route: str
    qber: float          # -1 when the round aborted before measurement
    key_bits_out: int
    leaked_bits: int
    action: str
    auth_mode: str

    def to_line(self) -> str:
        return (
            f"{self.timestamp_s:.1f} {self.connection} {self.route} "
            f"{self.qber:.6f} {self.key_bits_out} {self.leaked_bits} "
            f"{self.action} {self.auth_mode}"
        )

    @classmethod
    def from_line(cls, line: str) -> "LogRecord":
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"expected 8 fields, got {len(parts)}")
        return cls(
            timestamp_s=float(parts[0]),
            connection=parts[1],
            route=parts[2],
            qber=float(parts[3]),
            key_bits_out=int(parts[4]),
            leaked_bits=int(parts[5]),
            action=parts[6],
            auth_mode=parts[7],
        )


# --- authentication adapters ---------------------------------------------------

class PqcRoundAuth:
    """Tag authentication over two established PQC sessions."""

    mode = "pqc"

    def __init__(
        self,
        session_a: AuthSession,
        session_b: AuthSession,
        failure_rate: float = 0.0,
        fail_rng: np.random.Generator | None = None,
    ):
        self.session_a = session_a
        self.session_b = session_b
        self.failure_rate = failure_rate
        self.fail_rng = fail_rng

    def authenticate(self, category: TagCategory, data_a: bytes, data_b: bytes) -> bool:
        if self.failure_rate > 0.0:
            if self.fail_rng is None:
                raise PipelineError("failure injection needs fail_rng")
            if self.fail_rng.random() < self.failure_rate:
                return False
        ok_a, ok_b = authenticate_data(
            self.session_a, self.session_b, category, data_a, data_b
        )
        return ok_a and ok_b


class PresharedRoundAuth:
    """Keyed-tag authentication drawing from a finite pre-shared pool."""

    mode = "preshared"

    def __init__(self, shared_key: bytes, pool: PresharedPool):
        self.shared_key = shared_key
        self.pool = pool

    def authenticate(self, category: TagCategory, data_a: bytes, data_b: bytes) -> bool:
        self.pool.consume_event()
        tag_a = preshared_authenticate(self.shared_key, category, data_a)
        tag_b = preshared_authenticate(self.shared_key, category, data_b)
        return tag_a.digest == tag_b.digest


# --- the pairing process -------------------------------------------------------

@dataclass(frozen=True)
class PairingParams:
    block_seconds: float = 1.0
    round_interval_s: float = 1800.0
    winnow_schedule: tuple[int, ...] = reconcile.DEFAULT_SCHEDULE
    safety_margin_bits: int = amplify.DEFAULT_SAFETY_MARGIN_BITS
    qber_policy: QberPolicy = field(default_factory=QberPolicy)
    calibration_blocks: int = 6
    calibration_block_bits: int = 16384


def calibrate_efficiency(
    profile: DeviceProfile,
    total_loss_dB: float,
    rng: np.random.Generator,
    params: PairingParams | None = None,
    block_bits: int | None = None,
    n_blocks: int | None = None,
) -> float:
    """Measured end-to-end pipeline efficiency (final bits / sifted bits).

    Warm-up blocks run the real sift/reconcile/compress path at the
    connection's base error rate. Fully converged reconciliation reveals
    every error position, so the error count doubles as the protocol's
    measured QBER. The per-block ratio is bimodal (an early reconciliation
    exit leaks far less), so the median is the robust summary.
    """
    params = params or PairingParams()
    if block_bits is None:
        block_bits = params.calibration_block_bits
    if n_blocks is None:
        n_blocks = params.calibration_blocks
    ratios = []
    for _ in range(n_blocks):
        pair = simulate_sifting(profile, total_loss_dB, block_bits, rng)
        result = reconcile.winnow_reconcile(
            pair.alice_bits, pair.bob_bits, rng, params.winnow_schedule
        )
        if not result.converged:
            continue
        n = len(pair)
        measured = np.count_nonzero(pair.alice_bits != pair.bob_bits) / n
        if measured > params.qber_policy.threshold:
            continue
        n_out = amplify.compression_ratio(
            measured,
            result.leaked_bits,
            result.corrected_alice.size,
            params.safety_margin_bits,
        )
        ratios.append(n_out / n)
    if not ratios:
        raise PipelineError(
            f"calibration produced no usable blocks at {total_loss_dB} dB"
        )
    return float(np.median(ratios))


def calibrate_sift_rate(
    profile: DeviceProfile,
    total_loss_dB: float,
    rng: np.random.Generator,
    params: PairingParams | None = None,
) -> float:
    """Sifted-bit rate (bps) that delivers the loss-model key rate.

    Two passes: a rough efficiency at the standard warm-up size fixes the
    approximate working block, then a second measurement at that block
    size removes the size dependence of the reconciliation-exit mix.
    """
    params = params or PairingParams()
    target_bps = estimate_key_rate(total_loss_dB, profile) * 1000.0
    rough = calibrate_efficiency(profile, total_loss_dB, rng, params)
    working = max(
        params.winnow_schedule[0],
        int(round(target_bps / rough * params.block_seconds)),
    )
    refined = calibrate_efficiency(
        profile, total_loss_dB, rng, params, block_bits=working, n_blocks=4
    )
    return target_bps / refined


class PairingProcess:
    def __init__(
        self,
        connection: str,
        route: str,
        profile: DeviceProfile,
        total_loss_dB: float,
        round_auth,
        rng: np.random.Generator,
        params: PairingParams | None = None,
        sift_rate_bps: float | None = None,
    ):
        self.connection = connection
        self.route = route
        self.profile = profile
        self.loss_dB = total_loss_dB
        self.auth = round_auth
        self.rng = rng
        self.params = params or PairingParams()
        self.target_bps = estimate_key_rate(total_loss_dB, profile) * 1000.0
        if sift_rate_bps is None:
            sift_rate_bps = calibrate_sift_rate(
                profile, total_loss_dB, rng, self.params
            )
        self.sift_rate_bps = sift_rate_bps
        self.gate = GateState(self.params.qber_policy)
        self.current_qber_base = profile.qber_base
        self.halted: str | None = None
        # cumulative-deficit block sizing: each productive round aims to bring
        # total delivered bits back to demand * kept_rounds
        self._demand_bits = self.target_bps * self.params.block_seconds
        self._e0 = self.target_bps / self.sift_rate_bps
        self._kept = 0
        self._keep_in = 0
        self._keep_out = 0

    def _draw_qber(self) -> float:
        sigma = self.profile.qber_jitter_frac * self.current_qber_base
        q = self.current_qber_base + (self.rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        return float(np.clip(q, 0.0, 0.4999))

    def _next_block_bits(self) -> int:
        e_hat = self._keep_out / self._keep_in if self._keep_out > 0 else self._e0
        nominal = self._demand_bits / e_hat
        want_out = self._demand_bits * (self._kept + 1) - self._keep_out
        block = float(np.clip(want_out / e_hat, 0.25 * nominal, 3.0 * nominal))
        return max(self.params.winnow_schedule[0], int(round(block)))

    def _round(self, timestamp: float) -> LogRecord:
        p = self.params
        block_bits = self._next_block_bits()

        def rec(action, qber=-1.0, key_bits=0, leaked=0):
            return LogRecord(
                timestamp_s=timestamp,
                connection=self.connection,
                route=self.route,
                qber=qber,
                key_bits_out=key_bits,
                leaked_bits=leaked,
                action=action,
                auth_mode=self.auth.mode,
            )

        pair = simulate_sifting(
            self.profile, self.loss_dB, block_bits, self.rng, qber=self._draw_qber()
        )
        header = f"{self.connection}:{timestamp:.1f}:{len(pair)}".encode()
        if not self.auth.authenticate(TagCategory.BASIS_SIFT, header, header):
            return rec("auth-failed")

        result = reconcile.winnow_reconcile(
            pair.alice_bits, pair.bob_bits, self.rng, p.winnow_schedule
        )
        measured = np.count_nonzero(pair.alice_bits != pair.bob_bits) / len(pair)
        if not result.converged:
            return rec("winnow-failed", qber=measured, leaked=result.leaked_bits)
        if not self.auth.authenticate(
            TagCategory.CORRECTED_KEY,
            np.packbits(result.corrected_alice).tobytes(),
            np.packbits(result.corrected_bob).tobytes(),
        ):
            return rec("auth-failed", qber=measured, leaked=result.leaked_bits)

        action = self.gate.update(measured)
        if action is GateAction.CALIBRATE:
            self.current_qber_base = self.profile.qber_base
            return rec("calibrate", qber=measured, leaked=result.leaked_bits)
        if action is GateAction.DISCARD:
            return rec("discard", qber=measured, leaked=result.leaked_bits)

        n_corr = int(result.corrected_alice.size)
        n_out = amplify.compression_ratio(
            measured, result.leaked_bits, n_corr, p.safety_margin_bits
        )
        if n_out == 0:
            self._kept += 1
            self._keep_in += len(pair)
            return rec("keep", qber=measured, leaked=result.leaked_bits)
        seed = amplify.random_seed(n_corr, n_out, self.rng)
        seed_bytes = np.packbits(seed.bits).tobytes()
        if not self.auth.authenticate(TagCategory.PA_SHARED_RANDOM, seed_bytes, seed_bytes):
            return rec("auth-failed", qber=measured, leaked=result.leaked_bits)
        final_a = amplify.privacy_amplify(result.corrected_alice, seed, n_out)
        final_b = amplify.privacy_amplify(result.corrected_bob, seed, n_out)
        if not self.auth.authenticate(
            TagCategory.FINAL_KEY,
            np.packbits(final_a).tobytes(),
            np.packbits(final_b).tobytes(),
        ):
            return rec("auth-failed", qber=measured, leaked=result.leaked_bits)
        self._kept += 1
        self._keep_in += len(pair)
        self._keep_out += n_out
        return rec("keep", qber=measured, key_bits=n_out, leaked=result.leaked_bits)

    def run(
        self,
        duration_s: float,
        epoch_start_s: float = 0.0,
        key_store=None,
    ) -> tuple[list[LogRecord], int]:
        """Execute the rounds covered by one pairing of the given duration.

        Rounds subsample the pairing at round_interval_s spacing; a
        positive duration shorter than one interval still runs one round.
        Returns (records, total key bits delivered).
        """
        if duration_s < 0:
            raise ValueError("duration must be non-negative")
        n_rounds = int(duration_s // self.params.round_interval_s)
        if duration_s > 0:
            n_rounds = max(1, n_rounds)
        records: list[LogRecord] = []
        delivered = 0
        for i in range(n_rounds):
            t = epoch_start_s + i * self.params.round_interval_s
            try:
                record = self._round(t)
            except PoolExhaustedError:
                records.append(
                    LogRecord(
                        timestamp_s=t,
                        connection=self.connection,
                        route=self.route,
                        qber=-1.0,
                        key_bits_out=0,
                        leaked_bits=0,
                        action="pool-exhausted",
                        auth_mode=self.auth.mode,
                    )
                )
                self.halted = "pool-exhausted"
                break
            records.append(record)
            if record.key_bits_out > 0:
                delivered += record.key_bits_out
                if key_store is not None:
                    key_store.credit_bits(record.key_bits_out)
        return records, delivered


def run_pairing_process(
    connection: str,
    route: str,
    profile: DeviceProfile,
    total_loss_dB: float,
    round_auth,
    rng: np.random.Generator,
    duration_s: float,
    params: PairingParams | None = None,
    epoch_start_s: float = 0.0,
    key_store=None,
) -> tuple[list[LogRecord], int]:
    process = PairingProcess(
        connection, route, profile, total_loss_dB, round_auth, rng, params
    )
    return process.run(duration_s, epoch_start_s, key_store)


def mean_rate_kbps(records: list[LogRecord], block_seconds: float = 1.0) -> float | None:
    """Mean delivered rate over productive rounds."""
    rates = [
        r.key_bits_out / block_seconds / 1000.0
        for r in records
        if r.action == "keep" and r.key_bits_out > 0
    ]
    if not rates:
        return None
    return float(np.mean(rates))
