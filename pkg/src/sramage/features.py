"""Usage-correlated features computed from grouped P1 maps.

Every P1 group yields 56 values: three statistics of the per-sample share of
ones, the intercept/slope/rank-correlation of P1 against bit address, and the
amplitudes of 50 spatial frequency bins chosen on the training devices.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .bitcore import BitSampleSet, P1Map, compute_p1, group_slices
from .errors import InvalidArgumentError, SchemaMismatchError, UndefinedMetricError
from .metrics import spearman_columns, spearman_r

log = logging.getLogger(__name__)

SCHEMA_FORMAT = "sramage-feature-schema"
SCHEMA_VERSION = 1

BASE_FEATURES = (
    "pct1s_max",
    "pct1s_mean",
    "pct1s_min",
    "p1_addr_intercept",
    "p1_addr_slope",
    "p1_addr_spearman",
)
NUM_BASE = len(BASE_FEATURES)
DEFAULT_NUM_FREQUENCIES = 50
DEFAULT_BLOCK_BYTES = 1024


def _values(p1) -> np.ndarray:
    return p1.values if isinstance(p1, P1Map) else np.asarray(p1, dtype=float)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names plus the frozen frequency selection."""

    selected_freq_indices: tuple
    num_bits: int
    block_bytes: int = DEFAULT_BLOCK_BYTES
    freq_correlations: tuple = ()
    names: tuple = field(init=False)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.selected_freq_indices)
        if len(idx) == 0:
            raise InvalidArgumentError("schema needs at least one frequency index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidArgumentError("selected_freq_indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] > self.num_bits // 2:
            raise InvalidArgumentError(f"frequency indices must lie in [0, {self.num_bits // 2}]")
        object.__setattr__(self, "selected_freq_indices", idx)
        object.__setattr__(self, "freq_correlations", tuple(float(c) for c in self.freq_correlations))
        names = BASE_FEATURES + tuple(f"spectrum_{i}" for i in range(len(idx)))
        object.__setattr__(self, "names", names)

    @property
    def num_features(self) -> int:
        return len(self.names)

    @property
    def ranked_indices(self) -> tuple:
        """Selected bins ordered by decreasing |correlation| (ties: lower bin first)."""
        if not self.freq_correlations:
            return self.selected_freq_indices
        order = sorted(range(len(self.selected_freq_indices)),
                       key=lambda j: (-abs(self.freq_correlations[j]), self.selected_freq_indices[j]))
        return tuple(self.selected_freq_indices[j] for j in order)

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA_FORMAT,
            "version": SCHEMA_VERSION,
            "names": list(self.names),
            "num_bits": self.num_bits,
            "block_bytes": self.block_bytes,
            "selected_freq_indices": list(self.selected_freq_indices),
            "freq_correlations": list(self.freq_correlations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        if doc.get("format") != SCHEMA_FORMAT:
            raise SchemaMismatchError(f"not a feature schema document: format={doc.get('format')!r}")
        if doc.get("version") != SCHEMA_VERSION:
            raise SchemaMismatchError(f"unsupported schema version {doc.get('version')}")
        schema = cls(doc["selected_freq_indices"], doc["num_bits"], doc["block_bytes"],
                     doc.get("freq_correlations", ()))
        if "names" in doc and tuple(doc["names"]) != schema.names:
            raise SchemaMismatchError("feature names do not match the frequency selection")
        return schema

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    device_id: str
    usage_months: float
    values: np.ndarray


def pct_ones_stats(samples: BitSampleSet) -> tuple[float, float, float]:
    """(max, mean, min) over samples of the fraction of bits reading one."""
    frac = samples.ones_per_sample() / samples.num_bits
    return float(frac.max()), float(frac.mean()), float(frac.min())


def blockwise_p1(p1, block_bytes: int = DEFAULT_BLOCK_BYTES) -> np.ndarray:
    v = _values(p1)
    block_bits = 8 * block_bytes
    if block_bytes < 1 or v.size % block_bits:
        raise InvalidArgumentError(f"{v.size} bits cannot be split into blocks of {block_bytes} bytes")
    return v.reshape(-1, block_bits).mean(axis=1)


def address_ols(v: np.ndarray) -> tuple[float, float]:
    """Least-squares intercept and slope of ``v`` against addresses scaled to [0, 1]."""
    n = v.size
    x = np.arange(n) / (n - 1)
    xm = x.mean()
    dx = x - xm
    slope = float(np.dot(dx, v - v.mean()) / np.dot(dx, dx))
    return float(v.mean() - slope * xm), slope


def p1_address_regression(p1, block_bytes: int = DEFAULT_BLOCK_BYTES,
                          per_bit_spearman: bool = False) -> tuple[float, float, float]:
    """Intercept, slope and Spearman coefficient of P1 versus address.

    The rank correlation is taken between blockwise means and block index
    unless ``per_bit_spearman`` is set. If it is undefined (constant input or
    a single block) the feature is reported as 0.
    """
    v = _values(p1)
    if v.size < 2:
        raise InvalidArgumentError("need at least two bits for an address regression")
    intercept, slope = address_ols(v)
    series = v if per_bit_spearman else blockwise_p1(v, block_bytes)
    try:
        rs = spearman_r(np.arange(series.size), series)
    except (UndefinedMetricError, InvalidArgumentError) as exc:
        log.warning("P1/address rank correlation undefined (%s); using 0", exc)
        rs = 0.0
    return intercept, slope, rs


def p1_spectrum(p1) -> np.ndarray:
    """One-sided, unnormalised DFT magnitude of the mean-removed P1 (bins 0..B/2)."""
    v = _values(p1)
    if v.size < 2:
        raise InvalidArgumentError("need at least two bits for a spectrum")
    return np.abs(np.fft.rfft(v - v.mean()))


def fit_frequency_selection(train_spectra, train_usages, k: int = DEFAULT_NUM_FREQUENCIES,
                            num_bits: int | None = None,
                            block_bytes: int = DEFAULT_BLOCK_BYTES) -> FeatureSchema:
    """Keep the ``k`` bins whose amplitude has the largest |Spearman r| with usage.

    Only training rows may be passed here. The DC bin is never selected.
    """
    spectra = np.asarray(train_spectra, dtype=float)
    usages = np.asarray(train_usages, dtype=float).reshape(-1)
    if spectra.ndim != 2 or spectra.shape[0] != usages.size:
        raise InvalidArgumentError("train_spectra must be a (rows x bins) matrix aligned with train_usages")
    if np.unique(usages).size < 2:
        raise InvalidArgumentError("frequency selection needs at least two distinct usage values")
    if num_bits is None:
        num_bits = 2 * (spectra.shape[1] - 1)
    corr = spearman_columns(spectra, usages)
    corr[0] = np.nan
    valid = np.flatnonzero(~np.isnan(corr))
    if k < 1 or valid.size < k:
        raise InvalidArgumentError(f"only {valid.size} usable frequency bins, cannot keep {k}")
    order = valid[np.argsort(-np.abs(corr[valid]), kind="stable")]
    chosen = np.sort(order[:k])
    return FeatureSchema(tuple(chosen), num_bits, block_bytes, tuple(corr[chosen]))


def group_base_features(samples: BitSampleSet, group_size: int,
                        block_bytes: int = DEFAULT_BLOCK_BYTES,
                        per_device_pct: bool = False,
                        per_bit_spearman: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """The six non-spectral features and the full spectrum for every group.

    Returns ``(base, spectra)`` with shapes ``(groups, 6)`` and
    ``(groups, B // 2 + 1)``.
    """
    groups = group_slices(samples.num_samples, group_size)
    frac = samples.ones_per_sample() / samples.num_bits
    base = np.empty((len(groups), NUM_BASE))
    spectra = np.empty((len(groups), samples.num_bits // 2 + 1))
    for g, idx in enumerate(groups):
        p1 = compute_p1(samples, idx)
        f = frac if per_device_pct else frac[idx]
        base[g, :3] = f.max(), f.mean(), f.min()
        base[g, 3:] = p1_address_regression(p1, block_bytes, per_bit_spearman)
        spectra[g] = p1_spectrum(p1)
    return base, spectra


def assemble_features(base, spectra, freq_indices) -> np.ndarray:
    base = np.atleast_2d(np.asarray(base, dtype=float))
    spectra = np.atleast_2d(np.asarray(spectra, dtype=float))
    return np.hstack([base, spectra[:, np.asarray(freq_indices, dtype=np.int64)]])


def extract_features(samples: BitSampleSet, schema: FeatureSchema, group_size: int,
                     per_device_pct: bool = False) -> list[FeatureVector]:
    if samples.num_bits != schema.num_bits:
        raise SchemaMismatchError(
            f"device {samples.device_id} has {samples.num_bits} bits, schema expects {schema.num_bits}")
    base, spectra = group_base_features(samples, group_size, schema.block_bytes, per_device_pct)
    rows = assemble_features(base, spectra, schema.selected_freq_indices)
    return [FeatureVector(samples.device_id, samples.usage_months, r) for r in rows]
