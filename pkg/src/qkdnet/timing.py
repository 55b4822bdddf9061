"""Virtual-time model of one mutual handshake over a classical channel.

Both sides start simultaneously and behave symmetrically. Each side owns
a FIFO link (serialization at the configured bandwidth) and a FIFO crypto
engine (configured per-operation costs). Frames go out in protocol order
NONCE, CERT, SIG; signing starts as soon as the peer nonce arrives, so
the signature rides right behind the certificate instead of waiting for
certificate verification. Completion is the end of the peer-signature
verification, which is when a side reaches Authenticated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import signature
from .auth import timing_envelope

FRAME_OVERHEAD = 5          # 1-byte type + 4-byte length
NONCE_PAYLOAD_FIXED = 33    # name length byte + 32-byte nonce
CERT_FIXED = 1355 - 4       # payload sans the two name strings: 2 len bytes,
                            # validity 16, pk length 2 + 1331
SIG_PAYLOAD = 64 + signature.SIGNATURE_SIZE


def frame_sizes_bytes(node_id_len: int = 2, ca_id_len: int = 2) -> dict[str, int]:
    cert_payload = (
        1 + node_id_len + 1 + ca_id_len + 16
        + 2 + signature.PUBLIC_KEY_SIZE
        + 2 + signature.SIGNATURE_SIZE
    )
    return {
        "nonce": FRAME_OVERHEAD + NONCE_PAYLOAD_FIXED + node_id_len,
        "cert": FRAME_OVERHEAD + cert_payload,
        "sig": FRAME_OVERHEAD + SIG_PAYLOAD,
    }


@dataclass(frozen=True)
class Phase:
    name: str
    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class HandshakeTiming:
    delay_s: float
    bandwidth_bytes_per_s: float | None
    op_costs_s: dict[str, float]
    frame_bytes: dict[str, int]
    phases: list[Phase] = field(default_factory=list)

    @property
    def total_s(self) -> float:
        return max((p.end_s for p in self.phases), default=0.0)

    def serialization_s(self) -> float:
        return sum(p.duration_s for p in self.phases if p.name.endswith("-tx"))

    def breakdown(self) -> str:
        lines = [
            f"{'phase':14s} {'start_ms':>9s} {'end_ms':>9s} {'dur_ms':>8s}",
        ]
        for p in sorted(self.phases, key=lambda p: (p.start_s, p.end_s)):
            lines.append(
                f"{p.name:14s} {p.start_s * 1e3:9.3f} {p.end_s * 1e3:9.3f} "
                f"{p.duration_s * 1e3:8.3f}"
            )
        lines.append(f"total: {self.total_s * 1e3:.3f} ms")
        return "\n".join(lines)


def handshake_timing(
    delay_s: float = 0.010,
    bandwidth_bytes_per_s: float | None = 100_000.0,
    op_costs_s: dict[str, float] | None = None,
    node_id_len: int = 2,
    ca_id_len: int = 2,
) -> HandshakeTiming:
    """Closed-form timing of the symmetric handshake (one side's view)."""
    if delay_s < 0:
        raise ValueError("delay_s must be non-negative")
    if bandwidth_bytes_per_s is not None and bandwidth_bytes_per_s <= 0:
        raise ValueError("bandwidth_bytes_per_s must be positive (or None)")
    costs = {
        "sign": timing_envelope("sign", op_costs_s),
        "verify": timing_envelope("verify", op_costs_s),
    }
    sizes = frame_sizes_bytes(node_id_len, ca_id_len)

    def ser(nbytes: int) -> float:
        if bandwidth_bytes_per_s is None:
            return 0.0
        return nbytes / bandwidth_bytes_per_s

    # own link: NONCE then CERT back to back from t = 0
    nonce_tx_end = ser(sizes["nonce"])
    cert_tx_end = nonce_tx_end + ser(sizes["cert"])
    # peer's symmetric frames arrive after their serialization + propagation
    nonce_arrival = nonce_tx_end + delay_s
    cert_arrival = cert_tx_end + delay_s

    # crypto engine FIFO: sign once the peer nonce is in, then verify the
    # peer certificate once it is in
    sign_start = nonce_arrival
    sign_end = sign_start + costs["sign"]
    verify_cert_start = max(cert_arrival, sign_end)
    verify_cert_end = verify_cert_start + costs["verify"]

    # SIG waits for the signing result and for the link to drain the CERT
    sig_tx_start = max(sign_end, cert_tx_end)
    sig_tx_end = sig_tx_start + ser(sizes["sig"])
    sig_arrival = sig_tx_end + delay_s

    verify_sig_start = max(sig_arrival, verify_cert_end)
    verify_sig_end = verify_sig_start + costs["verify"]

    result = HandshakeTiming(
        delay_s=delay_s,
        bandwidth_bytes_per_s=bandwidth_bytes_per_s,
        op_costs_s=costs,
        frame_bytes=sizes,
    )
    result.phases = [
        Phase("nonce-tx", 0.0, nonce_tx_end),
        Phase("cert-tx", nonce_tx_end, cert_tx_end),
        Phase("sign", sign_start, sign_end),
        Phase("sig-tx", sig_tx_start, sig_tx_end),
        Phase("verify-cert", verify_cert_start, verify_cert_end),
        Phase("verify-sig", verify_sig_start, verify_sig_end),
    ]
    return result
