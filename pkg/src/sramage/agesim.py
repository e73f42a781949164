"""Synthetic SRAM fleets with controllable usage-driven drift.

Each cell has a latent skew; its startup probability of reading one is
``logistic(skew / noise_scale)``. Usage adds a drift along a per-cell stress
footprint, an address-linear term and optional low-frequency ripples, all
proportional to usage time. Recovery is not modelled: drift only grows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .bitcore import BitSampleSet
from .datasetio import DeviceEntry, DeviceManifest, write_device_dumps
from .errors import InvalidArgumentError

_SAMPLE_CHUNK = 64

# Profile settings with usage effects far above device-to-device variation.
STRONG_DRIFT = {"drift_rate": 0.5, "stress_density": 0.8, "stress_to_one": 0.8, "segment_bits": 128,
                "address_gradient": -0.2}
NO_DRIFT = {"drift_rate": 0.0}


@dataclass(frozen=True, eq=False)
class CellPopulation:
    skew: np.ndarray
    noise_scale: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        if self.noise_scale <= 0:
            raise InvalidArgumentError("noise_scale must be positive")

    @property
    def num_bits(self) -> int:
        return self.skew.shape[0]


@dataclass(frozen=True, eq=False)
class AgeingProfile:
    footprint: np.ndarray
    drift_rate: float = 0.0
    address_gradient: float = 0.0
    low_freq_components: tuple = ()

    def __post_init__(self):
        fp = np.asarray(self.footprint)
        if not np.isin(fp, (-1, 0, 1)).all():
            raise InvalidArgumentError("footprint entries must be -1, 0 or +1")
        object.__setattr__(self, "footprint", fp.astype(np.int8))


def sample_population(num_bits: int, seed, noise_scale: float = 1.0, unstable_fraction: float = 0.2,
                      stable_scale: float = 8.0, unstable_scale: float = 0.7) -> CellPopulation:
    """Symmetric two-component skew prior: mostly strongly biased cells, a few balanced ones."""
    rng = np.random.default_rng(seed)
    unstable = rng.random(num_bits) < unstable_fraction
    scale = np.where(unstable, unstable_scale, stable_scale) * noise_scale
    return CellPopulation(rng.normal(0.0, 1.0, num_bits) * scale, noise_scale,
                          seed if isinstance(seed, int) else None)


def _segment_ids(num_bits: int, mean_length: float, rng) -> np.ndarray:
    if mean_length <= 1:
        return np.arange(num_bits)
    lengths = rng.geometric(1.0 / mean_length, size=num_bits // max(1, int(mean_length)) * 2 + 2)
    starts = np.cumsum(lengths)
    return np.searchsorted(starts, np.arange(num_bits), side="right")


def make_profile(num_bits: int, seed, drift_rate: float = 0.0, used_fraction: float = 1.0,
                 stress_to_one: float = 0.7, stress_density: float = 0.6, segment_bits: float = 1.0,
                 address_gradient: float = 0.0, low_freq_components: Sequence = ()) -> AgeingProfile:
    """Random footprint over the lowest ``used_fraction`` of the address space.

    The used region is cut into runs of geometric length (mean
    ``segment_bits``) that share one stress state, mimicking variables that
    firmware keeps at fixed addresses. A run is stressed with probability
    ``stress_density``, toward one with probability ``stress_to_one`` (zeros
    are the value most often held by firmware).
    """
    rng = np.random.default_rng(seed)
    seg = _segment_ids(num_bits, segment_bits, rng)
    n_seg = int(seg.max()) + 1
    stressed = (rng.random(n_seg) < stress_density)[seg]
    direction = np.where(rng.random(n_seg) < stress_to_one, 1, -1)[seg]
    used = np.arange(num_bits) < int(round(used_fraction * num_bits))
    return AgeingProfile(np.where(used & stressed, direction, 0), drift_rate, address_gradient,
                         tuple((int(b), float(a)) for b, a in low_freq_components))


def aged_skew(pop: CellPopulation, profile: AgeingProfile, usage_months: float) -> np.ndarray:
    n = pop.num_bits
    if profile.footprint.shape[0] != n:
        raise InvalidArgumentError("footprint and population sizes differ")
    x = np.arange(n) / max(1, n - 1)
    drift = profile.drift_rate * profile.footprint + profile.address_gradient * x
    for b, amp in profile.low_freq_components:
        drift = drift + amp * np.cos(2 * np.pi * b * np.arange(n) / n)
    return pop.skew + usage_months * drift


def startup_probability(pop: CellPopulation, profile: AgeingProfile, usage_months: float) -> np.ndarray:
    return expit(aged_skew(pop, profile, usage_months) / pop.noise_scale)


def simulate_device(pop: CellPopulation, profile: AgeingProfile, usage_months: float, num_samples: int,
                    seed, device_id: str = "sim-0", bit_order: str = "little") -> BitSampleSet:
    """Draw ``num_samples`` independent startup dumps of an aged device."""
    if usage_months < 0:
        raise InvalidArgumentError("usage_months must be non-negative")
    if pop.num_bits % 8:
        raise InvalidArgumentError("number of cells must be a multiple of 8")
    p = startup_probability(pop, profile, usage_months)
    rng = np.random.default_rng(seed)
    packed = np.empty((num_samples, pop.num_bits // 8), dtype=np.uint8)
    for s0 in range(0, num_samples, _SAMPLE_CHUNK):
        m = min(_SAMPLE_CHUNK, num_samples - s0)
        bits = rng.random((m, pop.num_bits)) < p
        packed[s0:s0 + m] = np.packbits(bits, axis=1, bitorder=bit_order)
    return BitSampleSet(device_id, float(usage_months), packed, bit_order)


@dataclass
class Fleet:
    manifest: DeviceManifest
    devices: list = field(repr=False)


def _draw_usages(usage_distribution, num_devices, rng) -> np.ndarray:
    if isinstance(usage_distribution, tuple) and usage_distribution and isinstance(usage_distribution[0], str):
        kind, lo, hi = usage_distribution
        if kind != "uniform":
            raise InvalidArgumentError(f"unknown usage distribution {kind!r}")
        return rng.uniform(lo, hi, num_devices)
    u = np.asarray(usage_distribution, dtype=float).reshape(-1)
    if u.size != num_devices:
        raise InvalidArgumentError("explicit usage list must have one value per device")
    return u


def generate_fleet(num_devices: int, usage_distribution=("uniform", 0.0, 18.0), pop_prior: dict | None = None,
                   profile_prior: dict | None = None, seed: int = 0, num_samples: int = 1000,
                   sram_bytes: int = 65536, shared_profile: bool = True, out_dir=None,
                   bit_order: str = "little") -> Fleet:
    """Simulate a labelled fleet, optionally writing dumps plus a manifest to ``out_dir``.

    Every device draws from its own RNG stream derived from ``(seed, index)``,
    so generating devices in any order gives the same result.
    """
    num_bits = 8 * sram_bytes
    root = np.random.SeedSequence(seed)
    fleet_ss, *device_ss = root.spawn(num_devices + 1)
    usages = _draw_usages(usage_distribution, num_devices, np.random.default_rng(fleet_ss))
    if num_devices > 1 and np.unique(usages).size < 2:
        raise InvalidArgumentError("usage distribution must produce at least two distinct values")
    pop_prior = dict(pop_prior or {})
    profile_prior = dict(profile_prior or {})
    shared = make_profile(num_bits, fleet_ss.spawn(1)[0], **profile_prior) if shared_profile else None
    width = max(3, len(str(num_devices - 1)))
    devices, entries = [], []
    out = Path(out_dir) if out_dir is not None else None
    for i, ss in enumerate(device_ss):
        pop_ss, prof_ss, draw_ss = ss.spawn(3)
        pop = sample_population(num_bits, pop_ss, **pop_prior)
        profile = shared if shared is not None else make_profile(num_bits, prof_ss, **profile_prior)
        device_id = f"sim-{i:0{width}d}"
        dev = simulate_device(pop, profile, float(usages[i]), num_samples, draw_ss, device_id, bit_order)
        dumps = tuple(write_device_dumps(out, dev)) if out is not None else ()
        entries.append(DeviceEntry(device_id, float(usages[i]), dumps, sram_bytes))
        devices.append(dev)
    manifest = DeviceManifest(entries, out if out is not None else Path("."), bit_order)
    if out is not None:
        manifest.write(out / "manifest.json")
    return Fleet(manifest, devices)
