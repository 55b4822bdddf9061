"""Winnow error reconciliation.

Each round partitions the keys into blocks and compares block parities.
Blocks whose parities disagree exchange a Hamming syndrome over the first
block-1 positions, which locates a single error (syndrome zero with a
parity mismatch means the error sits in the last position). Privacy
maintenance discards one bit per disclosed parity and one per syndrome
bit, so leaked and discarded counts are equal by construction. Keys are
reshuffled with the caller's RNG between rounds; the schedule grows the
block size as the residual error rate drops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SCHEDULE = (8, 8, 8, 16, 16, 32, 32, 64, 64, 128)


@dataclass
class ChannelLog:
    """Tally of every reconciliation bit placed on the classical channel."""
    parity_bits: int = 0
    syndrome_bits: int = 0
    rounds: list[tuple[int, int]] = field(default_factory=list)

    def record_round(self, parities: int, syndromes: int) -> None:
        self.parity_bits += parities
        self.syndrome_bits += syndromes
        self.rounds.append((parities, syndromes))

    @property
    def total_bits(self) -> int:
        return self.parity_bits + self.syndrome_bits


@dataclass
class ReconciliationResult:
    corrected_alice: np.ndarray
    corrected_bob: np.ndarray
    leaked_bits: int
    discarded_bits: int
    converged: bool
    rounds_used: int


def hamming_syndrome(block: np.ndarray) -> int:
    """Syndrome over positions 1..len-1 (1-based index XOR of set bits)."""
    idx = np.nonzero(block[:-1])[0] + 1
    out = 0
    for v in idx:
        out ^= int(v)
    return out


def _round(a, b, block, rng, shuffle, channel):
    n = a.size
    if shuffle:
        perm = rng.permutation(n)
        a = a[perm]
        b = b[perm]
    nb = n // block
    tail = n - nb * block
    k = block.bit_length() - 1
    parities = nb + (1 if tail else 0)
    syndromes = 0

    mat_a = a[: nb * block].reshape(nb, block).copy()
    mat_b = b[: nb * block].reshape(nb, block).copy()
    mism = (mat_a.sum(1) & 1) != (mat_b.sum(1) & 1)
    n_mism = int(mism.sum())
    clean = n_mism == 0

    keep = np.ones((nb, block), dtype=bool)
    keep[:, block - 1] = False   # parity maintenance discard
    if n_mism:
        h = ((np.arange(1, block)[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int64)
        syn_a = (mat_a[mism, : block - 1].astype(np.int64) @ h) & 1
        syn_b = (mat_b[mism, : block - 1].astype(np.int64) @ h) & 1
        diff = ((syn_a ^ syn_b) << np.arange(k)).sum(1)
        err_pos = np.where(diff > 0, diff - 1, block - 1)
        mat_b[np.nonzero(mism)[0], err_pos] ^= 1
        syndromes = k * n_mism
        for m in range(k):
            keep[mism, (1 << m) - 1] = False   # syndrome maintenance discards

    a_parts = [mat_a[keep]]
    b_parts = [mat_b[keep]]
    if tail:
        tail_a, tail_b = a[nb * block:], b[nb * block:]
        if (tail_a.sum() & 1) != (tail_b.sum() & 1):
            clean = False   # too short for a syndrome; caught next round
        a_parts.append(tail_a[:-1])
        b_parts.append(tail_b[:-1])
    if channel is not None:
        channel.record_round(parities, syndromes)
    leaked = parities + syndromes
    return np.concatenate(a_parts), np.concatenate(b_parts), leaked, clean


def winnow_reconcile(
    alice_bits: np.ndarray,
    bob_bits: np.ndarray,
    rng: np.random.Generator,
    schedule: tuple[int, ...] = DEFAULT_SCHEDULE,
    channel: ChannelLog | None = None,
) -> ReconciliationResult:
    a = np.asarray(alice_bits, dtype=np.uint8)
    b = np.asarray(bob_bits, dtype=np.uint8)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("key halves must be equal-length 1-d bit arrays")
    if a.size < schedule[0]:
        raise ValueError(
            f"key too short for reconciliation ({a.size} < block {schedule[0]})"
        )
    n_in = a.size
    leaked = 0
    rounds = 0
    converged = False
    for block in schedule:
        if a.size < block:
            break
        a, b, lk, clean = _round(a, b, block, rng, shuffle=rounds > 0, channel=channel)
        leaked += lk
        rounds += 1
        if clean:
            converged = True
            break
    return ReconciliationResult(
        corrected_alice=a,
        corrected_bob=b,
        leaked_bits=leaked,
        discarded_bits=n_in - a.size,
        converged=converged,
        rounds_used=rounds,
    )
