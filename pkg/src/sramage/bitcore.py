"""Bit-matrix container and the two per-bit startup statistics.

Dumps are kept packed (one ``uint8`` per memory byte) and only expanded to
bits in bounded chunks. Bit ``i`` of a dump lives in byte ``i // 8``; within a
byte the default order is least-significant bit first (``"little"``), which
can be overridden with ``bit_order="big"`` for archives using the other
convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

BIT_ORDERS = ("little", "big")

# Rows unpacked at once when summing; bounds peak memory for 64 KB dumps.
_CHUNK_ROWS = 64


def _check_bit_order(bit_order: str) -> str:
    if bit_order not in BIT_ORDERS:
        raise InvalidArgumentError(f"bit_order must be one of {BIT_ORDERS}, got {bit_order!r}")
    return bit_order


@dataclass(frozen=True, eq=False)
class BitSampleSet:
    """Stack of ``N`` startup dumps of one device, stored packed.

    ``data`` has shape ``(N, B // 8)`` and dtype ``uint8``.
    """

    device_id: str
    usage_months: float
    data: np.ndarray
    bit_order: str = "little"

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidArgumentError(f"packed data must be a non-empty 2-D array, got shape {data.shape}")
        if not np.isfinite(self.usage_months) or self.usage_months < 0:
            raise InvalidArgumentError(f"usage_months must be non-negative, got {self.usage_months}")
        _check_bit_order(self.bit_order)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_bits(cls, device_id: str, usage_months: float, bits, bit_order: str = "little") -> "BitSampleSet":
        bits = np.asarray(bits)
        if bits.ndim != 2:
            raise InvalidArgumentError("bits must be an N x B matrix")
        if bits.shape[1] % 8:
            raise InvalidArgumentError(f"number of bits ({bits.shape[1]}) is not byte aligned")
        if not np.isin(bits, (0, 1)).all():
            raise InvalidArgumentError("bit matrix may only contain 0 and 1")
        packed = np.packbits(bits.astype(np.uint8), axis=1, bitorder=_check_bit_order(bit_order))
        return cls(device_id, float(usage_months), packed, bit_order)

    @property
    def num_samples(self) -> int:
        return self.data.shape[0]

    @property
    def num_bits(self) -> int:
        return self.data.shape[1] * 8

    @property
    def bits(self) -> np.ndarray:
        """Full ``N x B`` matrix of 0/1 values (``uint8``)."""
        return np.unpackbits(self.data, axis=1, bitorder=self.bit_order)

    def sample_bits(self, indices) -> np.ndarray:
        return np.unpackbits(self.data[np.asarray(indices)], axis=1, bitorder=self.bit_order)

    def subset(self, indices) -> "BitSampleSet":
        return BitSampleSet(self.device_id, self.usage_months, self.data[np.asarray(indices)], self.bit_order)

    def ones_per_sample(self) -> np.ndarray:
        """Number of set bits in every sample (popcount of each dump)."""
        table = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1)
        return table[self.data].sum(axis=1, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class P1Map:
    """Per-bit probability of one, held as exact ``counts / num_samples_used``."""

    counts: np.ndarray
    num_samples_used: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if self.num_samples_used < 1:
            raise InvalidArgumentError("num_samples_used must be positive")
        if counts.ndim != 1 or (counts < 0).any() or (counts > self.num_samples_used).any():
            raise InvalidArgumentError("counts must be a 1-D vector within [0, num_samples_used]")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def values(self) -> np.ndarray:
        return self.counts / self.num_samples_used

    @property
    def num_bits(self) -> int:
        return self.counts.shape[0]

    def fraction(self, i: int) -> Fraction:
        return Fraction(int(self.counts[i]), self.num_samples_used)

    def __len__(self):
        return self.num_bits


@dataclass(frozen=True, eq=False)
class InstabilityMap:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or (values < 0).any() or (values > 0.5).any():
            raise InvalidArgumentError("instability values must be a 1-D vector in [0, 0.5]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def num_bits(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.num_bits


def compute_p1(samples: BitSampleSet, sample_indices: Sequence[int] | np.ndarray | None = None) -> P1Map:
    """Probability of one for each bit over the selected samples (all by default)."""
    if sample_indices is None:
        idx = np.arange(samples.num_samples)
    else:
        idx = np.asarray(sample_indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise InvalidArgumentError("sample_indices must not be empty")
        if idx.min() < 0 or idx.max() >= samples.num_samples:
            raise InvalidArgumentError(
                f"sample indices out of range [0, {samples.num_samples})")
    counts = np.zeros(samples.num_bits, dtype=np.int64)
    for start in range(0, idx.size, _CHUNK_ROWS):
        chunk = samples.data[idx[start:start + _CHUNK_ROWS]]
        counts += np.unpackbits(chunk, axis=1, bitorder=samples.bit_order).sum(axis=0, dtype=np.int64)
    return P1Map(counts, int(idx.size))


def instability_values(p1) -> np.ndarray:
    p1 = np.asarray(p1, dtype=float)
    return np.where(p1 <= 0.5, p1, 1.0 - p1)


def compute_instability(p1: P1Map) -> InstabilityMap:
    """Symmetrised P1: 0 for a perfectly stable cell, 0.5 for a coin flip."""
    # integer form keeps the result exact: min(c, n - c) / n
    c, n = p1.counts, p1.num_samples_used
    return InstabilityMap(np.minimum(c, n - c) / n)


def group_slices(num_samples: int, group_size: int) -> list[np.ndarray]:
    if group_size < 1:
        raise InvalidArgumentError("group_size must be >= 1")
    if group_size > num_samples:
        raise InvalidArgumentError(f"group_size {group_size} exceeds number of samples {num_samples}")
    n_groups = num_samples // group_size
    return [np.arange(g * group_size, (g + 1) * group_size) for g in range(n_groups)]


def group_p1(samples: BitSampleSet, group_size: int) -> list[P1Map]:
    """One P1 map per consecutive, non-overlapping group; the remainder is dropped."""
    return [compute_p1(samples, idx) for idx in group_slices(samples.num_samples, group_size)]
