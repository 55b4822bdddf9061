"""SM3 hash primitive.

Digests are produced through OpenSSL when the local hashlib exposes the
algorithm (the common case, and roughly 20x faster); a pure-Python
implementation of the same compression function is kept here both as a
fallback and as an independent reference for the test suite.
"""

from __future__ import annotations

import hashlib

DIGEST_SIZE = 32

_IV = [
    0x7380166F, 0x4914B2B9, 0x172442D7, 0xDA8A0600,
    0xA96F30BC, 0x163138AA, 0xE38DEE4D, 0xB0FB0E4E,
]

_MASK = 0xFFFFFFFF


def _rotl(x: int, n: int) -> int:
    n %= 32
    return ((x << n) | (x >> (32 - n))) & _MASK


def _p0(x: int) -> int:
    return x ^ _rotl(x, 9) ^ _rotl(x, 17)


def _p1(x: int) -> int:
    return x ^ _rotl(x, 15) ^ _rotl(x, 23)


def _cf(v: list[int], block: bytes) -> list[int]:
    w = list(int.from_bytes(block[4 * i:4 * i + 4], "big") for i in range(16))
    for j in range(16, 68):
        w.append(
            _p1(w[j - 16] ^ w[j - 9] ^ _rotl(w[j - 3], 15))
            ^ _rotl(w[j - 13], 7)
            ^ w[j - 6]
        )
    a, b, c, d, e, f, g, h = v
    for j in range(64):
        t = 0x79CC4519 if j < 16 else 0x7A879D8A
        ss1 = _rotl((_rotl(a, 12) + e + _rotl(t, j)) & _MASK, 7)
        ss2 = ss1 ^ _rotl(a, 12)
        if j < 16:
            ff = a ^ b ^ c
            gg = e ^ f ^ g
        else:
            ff = (a & b) | (a & c) | (b & c)
            gg = (e & f) | (~e & g)
        tt1 = (ff + d + ss2 + (w[j] ^ w[j + 4])) & _MASK
        tt2 = (gg + h + ss1 + w[j]) & _MASK
        d, c, b, a = c, _rotl(b, 9), a, tt1
        h, g, f, e = g, _rotl(f, 19), e, _p0(tt2)
    return [x ^ y for x, y in zip(v, (a, b, c, d, e, f, g, h))]


def sm3_python(data: bytes) -> bytes:
    """Reference implementation, straight from the standard."""
    length = len(data)
    # pad to 56 mod 64, then the bit length as a 64-bit big-endian word
    data = data + b"\x80" + b"\x00" * ((55 - length) % 64) + (8 * length).to_bytes(8, "big")
    v = _IV
    for i in range(0, len(data), 64):
        v = _cf(v, data[i:i + 64])
    return b"".join(x.to_bytes(4, "big") for x in v)


def _probe_hashlib() -> bool:
    try:
        h = hashlib.new("sm3")
    except (ValueError, TypeError):
        return False
    h.update(b"abc")
    return h.digest() == sm3_python(b"abc")


_HAVE_HASHLIB = _probe_hashlib()


def sm3(data: bytes) -> bytes:
    if _HAVE_HASHLIB:
        return hashlib.new("sm3", data).digest()
    return sm3_python(data)


def sm3_hex(data: bytes) -> str:
    return sm3(data).hex()
