"""Hash-based signature scheme used for post-quantum authentication.

Winternitz-style one-time chains over truncated SM3: the 256-bit message
digest is cut into 128 base-4 digits plus a 5-digit checksum, one hash
chain of length 3 per digit. The public key commits to the chain ends
through a single root hash, so verification re-walks each chain from the
signature value and recomputes the root.

Serialized sizes are fixed by the wire format of the deployed system:
public key 1331 bytes, private key 3482 bytes, signature 2458 bytes.
Cores are padded to those sizes with a deterministic keystream that is
re-derived and checked on decode, so no byte is free to flip.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

from .sm3 import sm3

PUBLIC_KEY_SIZE = 1331
PRIVATE_KEY_SIZE = 3482
SIGNATURE_SIZE = 2458

_W = 4                      # digits per chain position
_MSG_CHAINS = 128           # 256-bit digest, 2 bits per chain
_CSUM_CHAINS = 5            # checksum <= 384 < 4**5
_CHAINS = _MSG_CHAINS + _CSUM_CHAINS
_HASH_LEN = 16
_SEED_LEN = 32

_DOM_SECRET = b"\x00"
_DOM_STEP = b"\x01"
_DOM_ROOT = b"\x02"
_DOM_PAD = b"\x03"


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes


def _keystream_pad(core: bytes, total: int, domain: bytes) -> bytes:
    anchor = sm3(_DOM_PAD + domain + core)
    out = bytearray(core)
    ctr = 0
    while len(out) < total:
        out.extend(sm3(anchor + ctr.to_bytes(4, "big")))
        ctr += 1
    return bytes(out[:total])


def _unpad(blob: bytes, core_len: int, total: int, domain: bytes) -> bytes | None:
    if len(blob) != total:
        return None
    core = blob[:core_len]
    if _keystream_pad(core, total, domain) != blob:
        return None
    return core


def _digits(message: bytes) -> list[int]:
    digest = sm3(message)
    digs = []
    for byte in digest:
        digs.extend((byte >> 6, (byte >> 4) & 3, (byte >> 2) & 3, byte & 3))
    checksum = sum(_W - 1 - d for d in digs)
    for shift in range(_CSUM_CHAINS - 1, -1, -1):
        digs.append((checksum >> (2 * shift)) & 3)
    return digs


# a sim node signs thousands of messages under one long-term key, so the
# per-seed chain heads are worth memoizing
@lru_cache(maxsize=64)
def _chain_starts(seed: bytes) -> tuple[bytes, ...]:
    return tuple(
        sm3(_DOM_SECRET + seed + bytes([i]))[:_HASH_LEN] for i in range(_CHAINS)
    )


def _step(value: bytes, index: int, level: int) -> bytes:
    return sm3(_DOM_STEP + bytes([index, level]) + value)[:_HASH_LEN]


def _walk(value: bytes, index: int, start: int, stop: int) -> bytes:
    for level in range(start, stop):
        value = _step(value, index, level)
    return value


def _root(ends: list[bytes]) -> bytes:
    return sm3(_DOM_ROOT + b"".join(ends))


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Derive a keypair from a 32-byte seed (random when omitted)."""
    if seed is None:
        seed = os.urandom(_SEED_LEN)
    if len(seed) != _SEED_LEN:
        raise ValueError(f"seed must be {_SEED_LEN} bytes, got {len(seed)}")
    starts = _chain_starts(seed)
    ends = [_walk(starts[i], i, 0, _W - 1) for i in range(_CHAINS)]
    public = _keystream_pad(_root(ends), PUBLIC_KEY_SIZE, b"pk")
    private = _keystream_pad(seed, PRIVATE_KEY_SIZE, b"sk")
    return KeyPair(public=public, private=private)


def sign(private_key: bytes, message: bytes) -> bytes:
    seed = _unpad(private_key, _SEED_LEN, PRIVATE_KEY_SIZE, b"sk")
    if seed is None:
        raise ValueError("malformed private key")
    starts = _chain_starts(seed)
    core = b"".join(
        _walk(starts[i], i, 0, d) for i, d in enumerate(_digits(message))
    )
    return _keystream_pad(core, SIGNATURE_SIZE, b"sig")


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    root = _unpad(public_key, 32, PUBLIC_KEY_SIZE, b"pk")
    core = _unpad(signature, _CHAINS * _HASH_LEN, SIGNATURE_SIZE, b"sig")
    if root is None or core is None:
        return False
    ends = [
        _walk(core[i * _HASH_LEN:(i + 1) * _HASH_LEN], i, d, _W - 1)
        for i, d in enumerate(_digits(message))
    ]
    return _root(ends) == root
