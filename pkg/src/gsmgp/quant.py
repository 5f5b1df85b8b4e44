"""Stochastic lattice quantization for consensus messages.

Values are rounded to the uniform lattice ``m * delta`` by randomised
rounding: a point inside a cell goes to the upper endpoint with
probability equal to its relative position, so the quantizer is unbiased
and its mean squared error is at most ``delta^2 / 4``.  Values already on
the lattice are kept deterministically.

A quantized vector is transmitted as integer lattice indices; the payload
cost per entry is the bit width of the observed index range (at least one
bit), against 64 bits for a raw float64 entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Quantizer:
    """Lattice step plus the random stream used for the rounding draws."""

    delta: float
    rng: np.random.Generator

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass(frozen=True)
class QuantizedVector:
    """Lattice representation of a vector: indices on the ``delta`` grid
    plus the index range actually used (fixes the symbol width)."""

    indices: np.ndarray
    delta: float
    min_index: int
    max_index: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        if idx.size:
            lo, hi = int(idx.min()), int(idx.max())
            if lo != self.min_index or hi != self.max_index:
                raise ValueError("min/max index do not match the indices")
        if self.max_index < self.min_index:
            raise ValueError("empty index range")

    def values(self) -> np.ndarray:
        return self.indices * self.delta

    def __len__(self) -> int:
        return self.indices.shape[0]


def quantize(x: float, qz: Quantizer) -> float:
    """Randomised rounding of one scalar to the ``qz.delta`` lattice."""
    ratio = x / qz.delta
    m = math.floor(ratio)
    frac = ratio - m
    if frac > 0.0 and qz.rng.random() < frac:
        m += 1
    return m * qz.delta


def quantize_vector(v, qz: Quantizer) -> QuantizedVector:
    """Entrywise randomised rounding; one uniform draw per entry is always
    consumed, so replicas with the same stream stay aligned regardless of
    which entries happen to sit on the lattice."""
    v = np.asarray(v, dtype=np.float64).ravel()
    ratio = v / qz.delta
    m = np.floor(ratio)
    frac = ratio - m
    up = qz.rng.random(v.shape[0]) < frac
    idx = (m + up).astype(np.int64)
    if idx.size == 0:
        return QuantizedVector(indices=idx, delta=qz.delta, min_index=0, max_index=0)
    return QuantizedVector(
        indices=idx,
        delta=qz.delta,
        min_index=int(idx.min()),
        max_index=int(idx.max()),
    )


def bits_required(qv: QuantizedVector) -> int:
    """Payload bits for one quantized vector: ``d`` symbols of the width
    needed for the used index range, never less than one bit each."""
    d = len(qv)
    if d == 0:
        return 0
    spread = qv.max_index - qv.min_index
    width = max(1, int(spread).bit_length()) if spread > 0 else 1
    return d * width


def saving_ratio(v, delta: float) -> float:
    """Per-entry compression factor of lattice transmission over raw
    float64: ``64 / log2(range / delta + 1)``.  A degenerate (constant)
    vector still needs one bit per entry, hence ratio 64."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    v = np.asarray(v, dtype=np.float64).ravel()
    spread = float(v.max() - v.min()) if v.size else 0.0
    if spread <= 0.0:
        return 64.0
    return 64.0 / math.log2(spread / delta + 1.0)


def qd2sca(full, grid, N: int, s: int, delta: float, settings=None):
    """Consensus weight learning with quantized uplinks and downlinks.

    Same orchestration as :func:`gsmgp.consensus.d2sca`, but the shared
    iterate and every agent report cross the network as lattice indices,
    and the dual update on both sides of each link uses only quantized
    quantities so the mirrored multipliers agree bit for bit.
    """
    from .consensus import ConsensusSettings, run_consensus

    settings = settings or ConsensusSettings()
    return run_consensus(full, grid, N, s, settings, delta=float(delta))
