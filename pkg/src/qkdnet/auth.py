"""Authenticated classical channel: PKI certificates, the mutual
nonce-signature handshake, per-category SM3 tags, and the pre-shared-key
fallback.

Wire format: length-prefixed frames, 1-byte type + 4-byte big-endian
payload length. A handshake exchanges NONCE, CERT and SIG frames; the SIG
payload is the 64-byte signed message (32-byte transcript digest || the
peer's 32-byte nonce) followed by the signature, so a verifier can both
check freshness and detect replays of signatures over stale nonces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import signature
from .sm3 import sm3

NONCE_LEN = 32

FRAME_NONCE = 0x01
FRAME_CERT = 0x02
FRAME_SIG = 0x03

_HS_DIGEST_DOMAIN = b"\xff"


class AuthError(Exception):
    pass


class PoolExhaustedError(AuthError):
    pass


class TagCategory(Enum):
    BASIS_SIFT = 0x01
    CORRECTED_KEY = 0x02
    PA_SHARED_RANDOM = 0x03
    FINAL_KEY = 0x04


@dataclass(frozen=True)
class Tag:
    digest: bytes
    category: TagCategory


def compute_tag(category: TagCategory, data: bytes) -> Tag:
    return Tag(digest=sm3(bytes([category.value]) + data), category=category)


def preshared_authenticate(shared_key: bytes, category: TagCategory, data: bytes) -> Tag:
    """Keyed tag for the fallback mode; both sides compare the results."""
    if not shared_key:
        raise AuthError("empty shared key")
    return Tag(
        digest=sm3(shared_key + bytes([category.value]) + data),
        category=category,
    )


@dataclass
class PresharedPool:
    remaining_bytes: int
    cost_per_event: int = 32

    def consume_event(self) -> None:
        if self.remaining_bytes < self.cost_per_event:
            raise PoolExhaustedError(
                f"pre-shared pool exhausted ({self.remaining_bytes} bytes left, "
                f"event costs {self.cost_per_event})"
            )
        self.remaining_bytes -= self.cost_per_event

    def events_left(self) -> int:
        return self.remaining_bytes // self.cost_per_event


# --- certificates -----------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    subject: str
    issuer: str
    not_before: int
    not_after: int
    subject_public_key: bytes
    ca_signature: bytes

    def payload(self) -> bytes:
        return _cert_payload(
            self.subject, self.issuer, self.not_before, self.not_after,
            self.subject_public_key,
        )

    def to_bytes(self) -> bytes:
        return (
            self.payload()
            + len(self.ca_signature).to_bytes(2, "big")
            + self.ca_signature
        )


def _cert_payload(subject, issuer, not_before, not_after, pk) -> bytes:
    s = subject.encode()
    i = issuer.encode()
    if len(s) > 255 or len(i) > 255:
        raise AuthError("identity name too long")
    return (
        bytes([len(s)]) + s
        + bytes([len(i)]) + i
        + int(not_before).to_bytes(8, "big")
        + int(not_after).to_bytes(8, "big")
        + len(pk).to_bytes(2, "big")
        + pk
    )


def parse_certificate(blob: bytes) -> Certificate:
    try:
        pos = 0
        ls = blob[pos]; pos += 1
        subject = blob[pos:pos + ls].decode(); pos += ls
        li = blob[pos]; pos += 1
        issuer = blob[pos:pos + li].decode(); pos += li
        not_before = int.from_bytes(blob[pos:pos + 8], "big"); pos += 8
        not_after = int.from_bytes(blob[pos:pos + 8], "big"); pos += 8
        lpk = int.from_bytes(blob[pos:pos + 2], "big"); pos += 2
        pk = blob[pos:pos + lpk]; pos += lpk
        lsig = int.from_bytes(blob[pos:pos + 2], "big"); pos += 2
        sig = blob[pos:pos + lsig]; pos += lsig
        if pos != len(blob) or len(pk) != lpk or len(sig) != lsig:
            raise AuthError("truncated certificate")
    except (IndexError, UnicodeDecodeError) as exc:
        raise AuthError(f"malformed certificate: {exc}") from None
    return Certificate(subject, issuer, not_before, not_after, pk, sig)


class CertificateAuthority:
    def __init__(self, ca_id: str, seed: bytes):
        self.id = ca_id
        self.keypair = signature.generate_keypair(seed)

    @property
    def public_key(self) -> bytes:
        return self.keypair.public

    def issue(self, subject: str, subject_pk: bytes,
              not_before: int = 0, not_after: int = 2**40) -> Certificate:
        payload = _cert_payload(subject, self.id, not_before, not_after, subject_pk)
        return Certificate(
            subject, self.id, not_before, not_after, subject_pk,
            signature.sign(self.keypair.private, payload),
        )


def verify_certificate(cert: Certificate, ca_public_key: bytes, now: float) -> bool:
    if not (cert.not_before <= now <= cert.not_after):
        return False
    return signature.verify(ca_public_key, cert.payload(), cert.ca_signature)


# --- framing ----------------------------------------------------------------

def encode_frame(frame_type: int, payload: bytes) -> bytes:
    return bytes([frame_type]) + len(payload).to_bytes(4, "big") + payload


def parse_frames(blob: bytes) -> list[tuple[int, bytes]]:
    frames = []
    pos = 0
    while pos < len(blob):
        if pos + 5 > len(blob):
            raise AuthError("truncated frame header")
        ftype = blob[pos]
        length = int.from_bytes(blob[pos + 1:pos + 5], "big")
        pos += 5
        if pos + length > len(blob):
            raise AuthError("truncated frame payload")
        frames.append((ftype, blob[pos:pos + length]))
        pos += length
    return frames


# --- identities and sessions ------------------------------------------------

@dataclass
class NodeIdentity:
    """Long-term key material plus the node's nonce history window."""
    id: str
    keypair: signature.KeyPair
    certificate: Certificate
    rng: np.random.Generator
    nonce_history: set[bytes] = field(default_factory=set)

    def fresh_nonce(self) -> bytes:
        while True:
            value = self.rng.bytes(NONCE_LEN)
            if value not in self.nonce_history:
                self.nonce_history.add(value)
                return value


def make_identity(ca: CertificateAuthority, node_id: str, seed: bytes,
                  rng: np.random.Generator) -> NodeIdentity:
    kp = signature.generate_keypair(seed)
    return NodeIdentity(
        id=node_id, keypair=kp, certificate=ca.issue(node_id, kp.public), rng=rng,
    )


class SessionState(Enum):
    INIT = "init"
    CERTS_EXCHANGED = "certs-exchanged"
    SIGNED = "signed"
    AUTHENTICATED = "authenticated"
    FAILED = "failed"


def _transcript_digest(raw: bytes) -> bytes:
    return sm3(_HS_DIGEST_DOMAIN + raw)


@dataclass
class AuthSession:
    identity: NodeIdentity
    ca_public_key: bytes
    now: float = 0.0
    state: SessionState = SessionState.INIT
    fail_reason: str | None = None
    peer_certificate: Certificate | None = None
    local_nonce: bytes | None = None
    peer_nonce: bytes | None = None
    transcript: list[tuple[str, bytes]] = field(default_factory=list)
    _sent_initial: bool = False
    _sent_sig: bool = False
    _verified_peer_sig: bool = False

    def _fail(self, reason: str) -> None:
        self.state = SessionState.FAILED
        self.fail_reason = reason

    def _initial_frames(self) -> bytes:
        self.local_nonce = self.identity.fresh_nonce()
        nonce_payload = (
            bytes([len(self.identity.id.encode())])
            + self.identity.id.encode()
            + self.local_nonce
        )
        out = encode_frame(FRAME_NONCE, nonce_payload) + encode_frame(
            FRAME_CERT, self.identity.certificate.to_bytes()
        )
        self._sent_initial = True
        return out

    def _sig_frame(self, pending_out: bytes) -> bytes:
        # the digest covers every raw wire byte exchanged so far, including
        # the frames of this very message that precede the signature, so no
        # single-byte mutation anywhere in the transcript can survive
        raw = b"".join(data for _, data in self.transcript) + pending_out
        message = _transcript_digest(raw) + self.peer_nonce
        sig = signature.sign(self.identity.keypair.private, message)
        self._sent_sig = True
        return encode_frame(FRAME_SIG, message + sig)

    def _on_sig(self, payload: bytes, covered_prefix: bytes) -> None:
        if self.peer_certificate is None or self.local_nonce is None:
            self._fail("malformed")
            return
        if len(payload) != 64 + signature.SIGNATURE_SIZE:
            self._fail("malformed")
            return
        digest, nonce = payload[:32], payload[32:64]
        sig = payload[64:]
        if nonce != self.local_nonce:
            if nonce in self.identity.nonce_history:
                self._fail("replay")
            else:
                self._fail("signature")
            return
        # transcript[-1] is the message carrying this signature; the signer
        # covered only its bytes up to the signature frame itself
        raw = b"".join(data for _, data in self.transcript[:-1]) + covered_prefix
        if digest != _transcript_digest(raw):
            self._fail("signature")
            return
        if not signature.verify(
            self.peer_certificate.subject_public_key, digest + nonce, sig
        ):
            self._fail("signature")
            return
        self._verified_peer_sig = True


def handshake_step(session: AuthSession, incoming: bytes | None) -> bytes | None:
    """Advance the state machine by one delivered message.

    Returns wire bytes to send to the peer (possibly several frames), or
    None when there is nothing to say. Terminal states reject stepping.
    """
    if session.state in (SessionState.AUTHENTICATED, SessionState.FAILED):
        raise AuthError(f"session already terminal ({session.state.value})")

    out = b""
    if incoming is None:
        if not session._sent_initial:
            out = session._initial_frames()
            session.transcript.append(("out", out))
        return out or None

    session.transcript.append(("in", incoming))
    try:
        frames = parse_frames(incoming)
    except AuthError:
        session._fail("malformed")
        return None

    frame_start = 0
    for ftype, payload in frames:
        if session.state is SessionState.FAILED:
            return None
        if ftype == FRAME_NONCE:
            if session.peer_nonce is not None or len(payload) < 1 + NONCE_LEN:
                session._fail("malformed")
                return None
            name_len = payload[0]
            if len(payload) != 1 + name_len + NONCE_LEN:
                session._fail("malformed")
                return None
            session.peer_nonce = payload[1 + name_len:]
        elif ftype == FRAME_CERT:
            if session.peer_certificate is not None:
                session._fail("malformed")
                return None
            try:
                cert = parse_certificate(payload)
            except AuthError:
                session._fail("malformed")
                return None
            if not verify_certificate(cert, session.ca_public_key, session.now):
                session._fail("certificate")
                return None
            session.peer_certificate = cert
        elif ftype == FRAME_SIG:
            session._on_sig(payload, incoming[:frame_start])
            if session.state is SessionState.FAILED:
                return None
        else:
            session._fail("malformed")
            return None
        frame_start += 5 + len(payload)

    if not session._sent_initial:
        out += session._initial_frames()
    if (
        session.peer_certificate is not None
        and session.peer_nonce is not None
        and session.state is SessionState.INIT
    ):
        session.state = SessionState.CERTS_EXCHANGED
    if session.state is SessionState.CERTS_EXCHANGED and not session._sent_sig:
        out += session._sig_frame(out)
        session.state = SessionState.SIGNED
    if session._verified_peer_sig and session._sent_sig:
        session.state = SessionState.AUTHENTICATED

    if out:
        session.transcript.append(("out", out))
        return out
    return None


def run_handshake(
    initiator: AuthSession,
    responder: AuthSession,
    tamper: tuple[int, int] | None = None,
) -> list[tuple[str, bytes]]:
    """Drive two sessions to termination, alternating message delivery.

    `tamper`, when given, is (message_index, byte_index): that byte of the
    message_index-th delivered wire message is flipped in flight. Returns
    the delivered message sequence [(sender_id, bytes)].
    """
    wire: list[tuple[str, bytes]] = []
    pending = handshake_step(initiator, None)
    sender, receiver = initiator, responder
    msg_index = 0
    while pending is not None:
        if tamper is not None and tamper[0] == msg_index and tamper[1] < len(pending):
            mutated = bytearray(pending)
            mutated[tamper[1]] ^= 0x01
            pending = bytes(mutated)
        wire.append((sender.identity.id, pending))
        msg_index += 1
        if receiver.state in (SessionState.AUTHENTICATED, SessionState.FAILED):
            break
        reply = handshake_step(receiver, pending)
        sender, receiver = receiver, sender
        pending = reply
    return wire


def authenticate_data(
    session_a: AuthSession,
    session_b: AuthSession,
    category: TagCategory,
    data_a: bytes,
    data_b: bytes,
) -> tuple[bool, bool]:
    """Mutual tag authentication of one data category over two sessions.

    Each side signs (its tag digest || the nonce its peer issued); the
    peer verifies the signature under the certificate exchanged during the
    handshake and compares tags. Returns (a_accepts_b, b_accepts_a).
    """
    for s in (session_a, session_b):
        if s.state is not SessionState.AUTHENTICATED:
            raise AuthError("session not authenticated")
    tag_a = compute_tag(category, data_a)
    tag_b = compute_tag(category, data_b)
    sig_a = signature.sign(
        session_a.identity.keypair.private, tag_a.digest + session_a.peer_nonce
    )
    sig_b = signature.sign(
        session_b.identity.keypair.private, tag_b.digest + session_b.peer_nonce
    )
    b_accepts = tag_a.digest == tag_b.digest and signature.verify(
        session_b.peer_certificate.subject_public_key,
        tag_a.digest + session_b.local_nonce,
        sig_a,
    )
    a_accepts = tag_a.digest == tag_b.digest and signature.verify(
        session_a.peer_certificate.subject_public_key,
        tag_b.digest + session_a.local_nonce,
        sig_b,
    )
    return a_accepts, b_accepts


DEFAULT_OP_COST_S = 0.010


def timing_envelope(operation_kind: str, costs: dict[str, float] | None = None) -> float:
    """Simulated duration of one crypto operation (seconds)."""
    if operation_kind not in ("keygen", "sign", "verify"):
        raise ValueError(f"unknown operation kind {operation_kind!r}")
    if costs and operation_kind in costs:
        return costs[operation_kind]
    return DEFAULT_OP_COST_S
