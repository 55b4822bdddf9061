"""Toeplitz privacy amplification and the key-compression rule.

The n_out x n_in Toeplitz matrix is defined by a seed of n_in + n_out - 1
bits: entry T[i][j] = seed[i - j + n_in - 1]. The GF(2) matrix-vector
product is computed as an integer convolution (FFT) reduced mod 2; exact
as long as convolution sums stay far below the float53 integer ceiling,
which holds by a margin of eleven orders of magnitude at the block sizes
used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

DEFAULT_SAFETY_MARGIN_BITS = 64


@dataclass(frozen=True)
class ToeplitzSeed:
    bits: np.ndarray

    def __len__(self) -> int:
        return int(self.bits.size)

    def check(self, n_in: int, n_out: int) -> None:
        if self.bits.size != n_in + n_out - 1:
            raise ValueError(
                f"seed length {self.bits.size} != n_in + n_out - 1 "
                f"= {n_in + n_out - 1}"
            )


def random_seed(n_in: int, n_out: int, rng: np.random.Generator) -> ToeplitzSeed:
    return ToeplitzSeed(rng.integers(0, 2, n_in + n_out - 1, dtype=np.uint8))


def privacy_amplify(key_bits: np.ndarray, seed: ToeplitzSeed, n_out: int) -> np.ndarray:
    x = np.asarray(key_bits, dtype=np.uint8)
    n_in = x.size
    if n_out > n_in:
        raise ValueError(f"n_out {n_out} exceeds n_in {n_in}")
    if n_out == 0:
        return np.zeros(0, dtype=np.uint8)
    seed.check(n_in, n_out)
    conv = fftconvolve(seed.bits.astype(np.float64), x.astype(np.float64))
    window = conv[n_in - 1:n_in - 1 + n_out]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def toeplitz_matrix(seed: ToeplitzSeed, n_in: int, n_out: int) -> np.ndarray:
    """Explicit matrix construction; quadratic, for small sizes and tests."""
    seed.check(n_in, n_out)
    i = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    return seed.bits[i - j + n_in - 1]


def binary_entropy(q: float) -> float:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"probability out of range: {q}")
    if q in (0.0, 1.0):
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def compression_ratio(
    qber_measured: float,
    leaked_bits: int,
    n_in: int,
    safety_margin_bits: int = DEFAULT_SAFETY_MARGIN_BITS,
) -> int:
    """Final key length after compressing away error-rate information,
    disclosed reconciliation bits, and a fixed safety margin."""
    if qber_measured < 0 or qber_measured >= 0.5:
        raise ValueError(f"qber out of range: {qber_measured}")
    n_out = math.floor(
        n_in * (1.0 - binary_entropy(qber_measured)) - leaked_bits - safety_margin_bits
    )
    return max(0, n_out)
