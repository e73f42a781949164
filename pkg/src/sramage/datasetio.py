"""Dump archives, device manifests, labelled feature tables and device splits.

A dump is a raw byte image of the SRAM with no framing. Devices and their
labels are listed in a JSON manifest::

    {
      "format": "sramage-manifest",
      "version": 1,
      "sram_bytes": 65536,
      "bit_order": "little",
      "devices": [
        {"device_id": "m3-1", "usage_months": 12.5, "sram_bytes": 65536,
         "dumps": ["m3-1/0000.bin", "m3-1/0001.bin"]}
      ]
    }

Dump paths are resolved relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bitcore import BIT_ORDERS, BitSampleSet
from .errors import (DumpSizeError, DuplicateDeviceError, InvalidArgumentError, ManifestError,
                     MissingDumpError, SchemaMismatchError)

MANIFEST_FORMAT = "sramage-manifest"
MANIFEST_VERSION = 1
SPLIT_FORMAT = "sramage-split"
DEFAULT_BIN_MONTHS = 1.0


@dataclass(frozen=True)
class DeviceEntry:
    device_id: str
    usage_months: float
    dump_paths: tuple
    sram_bytes: int


@dataclass
class DeviceManifest:
    entries: list
    base_dir: Path = field(default_factory=Path)
    bit_order: str = "little"

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.device_id in seen:
                raise DuplicateDeviceError(f"device id {e.device_id!r} listed twice")
            seen.add(e.device_id)
            if e.usage_months < 0 or not math.isfinite(e.usage_months):
                raise ManifestError(f"device {e.device_id!r}: usage_months must be non-negative")
            if e.sram_bytes < 1:
                raise ManifestError(f"device {e.device_id!r}: sram_bytes must be positive")
        if len({e.sram_bytes for e in self.entries}) > 1:
            raise ManifestError("all devices in a manifest must share sram_bytes")
        if self.bit_order not in BIT_ORDERS:
            raise ManifestError(f"bit_order must be one of {BIT_ORDERS}")

    @property
    def sram_bytes(self) -> int | None:
        return self.entries[0].sram_bytes if self.entries else None

    @property
    def device_ids(self) -> list:
        return [e.device_id for e in self.entries]

    @property
    def usages(self) -> np.ndarray:
        return np.array([e.usage_months for e in self.entries], dtype=float)

    def subset(self, device_ids: Iterable[str]) -> "DeviceManifest":
        keep = set(device_ids)
        return DeviceManifest([e for e in self.entries if e.device_id in keep], self.base_dir, self.bit_order)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "sram_bytes": self.sram_bytes,
            "bit_order": self.bit_order,
            "devices": [
                {"device_id": e.device_id, "usage_months": e.usage_months,
                 "sram_bytes": e.sram_bytes, "dumps": list(e.dump_paths)}
                for e in self.entries
            ],
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def load_manifest(path, bit_order: str | None = None) -> DeviceManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingDumpError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: missing format tag {MANIFEST_FORMAT!r}")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    default_bytes = doc.get("sram_bytes")
    entries = []
    try:
        for d in doc.get("devices", []):
            entries.append(DeviceEntry(str(d["device_id"]), float(d["usage_months"]),
                                       tuple(d["dumps"]), int(d.get("sram_bytes", default_bytes))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed device entry ({exc})") from exc
    return DeviceManifest(entries, path.parent, bit_order or doc.get("bit_order", "little"))


def _as_manifest(manifest) -> DeviceManifest:
    return manifest if isinstance(manifest, DeviceManifest) else load_manifest(manifest)


def read_device(manifest: DeviceManifest, entry: DeviceEntry) -> BitSampleSet:
    if not entry.dump_paths:
        raise ManifestError(f"device {entry.device_id!r} lists no dumps")
    data = np.empty((len(entry.dump_paths), entry.sram_bytes), dtype=np.uint8)
    for j, rel in enumerate(entry.dump_paths):
        p = manifest.base_dir / rel
        try:
            raw = np.fromfile(p, dtype=np.uint8)
        except FileNotFoundError as exc:
            raise MissingDumpError(f"dump not found: {p}") from exc
        if raw.size != entry.sram_bytes:
            raise DumpSizeError(f"{p}: {raw.size} bytes, expected {entry.sram_bytes}")
        data[j] = raw
    return BitSampleSet(entry.device_id, entry.usage_months, data, manifest.bit_order)


def iter_ingest(manifest) -> Iterator[BitSampleSet]:
    """Yield one device at a time (keeps only one device's dumps in memory)."""
    manifest = _as_manifest(manifest)
    for entry in manifest.entries:
        yield read_device(manifest, entry)


def ingest(manifest) -> list[BitSampleSet]:
    return list(iter_ingest(manifest))


def write_device_dumps(directory, samples: BitSampleSet, prefix: str | None = None) -> list[str]:
    """Write each sample as a raw dump; returns paths relative to ``directory``."""
    directory = Path(directory)
    sub = prefix or samples.device_id
    (directory / sub).mkdir(parents=True, exist_ok=True)
    paths = []
    for j, row in enumerate(samples.data):
        rel = f"{sub}/{j:04d}.bin"
        (directory / rel).write_bytes(row.tobytes())
        paths.append(rel)
    return paths


# -- labels and splits ---------------------------------------------------------

def usage_span(usages) -> float:
    return float(np.max(usages))


def num_usage_classes(span_months: float, resolution_months: float) -> int:
    return max(1, math.ceil(span_months / resolution_months - 1e-12))


def discretize_usage(usage_months, resolution_months: float, span_months: float | None = None):
    """Class index ``floor(usage / resolution)``.

    With ``span_months`` the index is clamped so that a device at the maximum
    usage lands in the last class (an 18-month span at 9-month resolution
    gives exactly two classes).
    """
    if resolution_months <= 0:
        raise InvalidArgumentError("resolution must be positive")
    u = np.asarray(usage_months, dtype=float)
    if (u < 0).any():
        raise InvalidArgumentError("usage must be non-negative")
    cls = np.floor(u / resolution_months + 1e-12).astype(np.int64)
    if span_months is not None:
        cls = np.minimum(cls, num_usage_classes(span_months, resolution_months) - 1)
    return int(cls) if cls.ndim == 0 else cls


def usage_bins(usages, bin_months: float = DEFAULT_BIN_MONTHS) -> np.ndarray:
    return np.floor(np.asarray(usages, dtype=float) / bin_months + 1e-12).astype(np.int64)


@dataclass(frozen=True)
class SplitAssignment:
    train_devices: tuple
    test_devices: tuple
    seed: int
    train_fraction: float
    bin_months: float = DEFAULT_BIN_MONTHS

    def tag(self, device_id: str) -> str:
        if device_id in self.train_devices:
            return "train"
        if device_id in self.test_devices:
            return "test"
        raise KeyError(device_id)

    def to_dict(self) -> dict:
        return {"format": SPLIT_FORMAT, "version": 1, "seed": self.seed,
                "train_fraction": self.train_fraction, "bin_months": self.bin_months,
                "train_devices": list(self.train_devices), "test_devices": list(self.test_devices)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitAssignment":
        if doc.get("format") != SPLIT_FORMAT:
            raise SchemaMismatchError("not a split document")
        return cls(tuple(doc["train_devices"]), tuple(doc["test_devices"]), int(doc["seed"]),
                   float(doc["train_fraction"]), float(doc.get("bin_months", DEFAULT_BIN_MONTHS)))


def _largest_remainder(sizes: np.ndarray, fraction: float, total: int) -> np.ndarray:
    quota = sizes * fraction
    base = np.floor(quota + 1e-9).astype(np.int64)
    rem = quota - base
    extra = total - base.sum()
    order = np.argsort(-rem, kind="stable")
    base[order[:extra]] += 1
    return base


def stratified_device_split(manifest, train_fraction: float = 0.7, bin_months: float = DEFAULT_BIN_MONTHS,
                            seed: int = 0) -> SplitAssignment:
    """Device-level train/test split stratified by usage bin.

    ``manifest`` may be a :class:`DeviceManifest` or a sequence of
    ``(device_id, usage_months)`` pairs. The test side receives
    ``ceil((1 - train_fraction) * n)`` devices overall; per-bin train counts
    are apportioned by largest remainder.
    """
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if isinstance(manifest, (str, os.PathLike)):
        manifest = load_manifest(manifest)
    pairs = ([(e.device_id, e.usage_months) for e in manifest.entries]
             if isinstance(manifest, DeviceManifest) else [(str(d), float(u)) for d, u in manifest])
    ids = [d for d, _ in pairs]
    if len(set(ids)) != len(ids):
        raise DuplicateDeviceError("device ids must be unique")
    n = len(pairs)
    bins = usage_bins([u for _, u in pairs], bin_months)
    keys = np.unique(bins)
    sizes = np.array([(bins == b).sum() for b in keys])
    n_test = math.ceil(round((1.0 - train_fraction) * n, 9))
    per_bin = _largest_remainder(sizes, train_fraction, n - n_test)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for b, n_train_b in zip(keys, per_bin):
        members = [ids[i] for i in np.flatnonzero(bins == b)]
        perm = rng.permutation(len(members))
        train += [members[i] for i in perm[:n_train_b]]
        test += [members[i] for i in perm[n_train_b:]]
    return SplitAssignment(tuple(train), tuple(test), seed, train_fraction, bin_months)


def stratified_device_folds(device_ids: Sequence[str], usages, k: int,
                            bin_months: float = DEFAULT_BIN_MONTHS, seed: int = 0) -> dict:
    """Map each device to a fold in ``range(k)``.

    Devices are dealt round-robin within each usage bin after a seeded shuffle;
    the dealer position carries over between bins so overall fold sizes stay
    within one device of each other.
    """
    if k < 2:
        raise InvalidArgumentError("need at least two folds")
    bins = usage_bins(usages, bin_months)
    rng = np.random.default_rng(seed)
    fold_of = {}
    pos = 0
    for b in np.unique(bins):
        members = [device_ids[i] for i in np.flatnonzero(bins == b)]
        for i in rng.permutation(len(members)):
            fold_of[members[i]] = pos % k
            pos += 1
    return fold_of


# -- labelled feature tables ---------------------------------------------------

@dataclass(eq=False)
class LabeledDataset:
    """Feature rows with usage labels, device ids and split tags."""

    X: np.ndarray
    usage: np.ndarray
    device_ids: np.ndarray
    split: np.ndarray
    feature_names: tuple

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(self.feature_names))
        self.usage = np.asarray(self.usage, dtype=float).reshape(-1)
        self.device_ids = np.asarray(self.device_ids, dtype=object).reshape(-1)
        self.split = np.asarray(self.split, dtype=object).reshape(-1)
        n = self.X.shape[0]
        if not (self.usage.size == self.device_ids.size == self.split.size == n):
            raise InvalidArgumentError("all per-row columns must have the same length")
        self.feature_names = tuple(self.feature_names)

    def __len__(self):
        return self.X.shape[0]

    def rows(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.X[mask], self.usage[mask], self.device_ids[mask], self.split[mask],
                              self.feature_names)

    def part(self, tag: str) -> "LabeledDataset":
        return self.rows(self.split == tag)

    def columns(self, names: Sequence[str]) -> "LabeledDataset":
        idx = [self.feature_names.index(n) for n in names]
        return LabeledDataset(self.X[:, idx], self.usage, self.device_ids, self.split, tuple(names))

    def devices(self) -> list:
        """Unique device ids in first-appearance order with their usage."""
        seen = {}
        for d, u in zip(self.device_ids, self.usage):
            seen.setdefault(d, u)
        return list(seen.items())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(self.feature_names) + ["device_id", "usage_months", "split"])
        for x, d, u, s in zip(self.X, self.device_ids, self.usage, self.split):
            w.writerow([repr(float(v)) for v in x] + [d, repr(float(u)), s])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "LabeledDataset":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[-3:] != ["device_id", "usage_months", "split"]:
            raise SchemaMismatchError("dataset header must end with device_id, usage_months, split")
        names = tuple(header[:-3])
        X, d, u, s = [], [], [], []
        for row in reader:
            X.append([float(v) for v in row[:-3]])
            d.append(row[-3])
            u.append(float(row[-2]))
            s.append(row[-1])
        return cls(np.array(X, dtype=float).reshape(-1, len(names)), u, d, s, names)
