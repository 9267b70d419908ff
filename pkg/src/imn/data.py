"""Record ingestion, normalization, task curation, splits, and synthesis.

On-disk format (the converter contract): each record is a raw blob of
C*L little-endian float32 values, row-major by lead, next to a JSON
sidecar {id, fs, labels, fold, C, L} with the same stem. A dataset is a
JSON manifest listing sidecar paths relative to itself. Any external
tool that emits this layout can feed the pipeline.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

SUPERCLASSES = ("NORM", "MI", "STTC", "CD", "HYP")
MANIFEST_VERSION = 1
ZSCORE_EPS = 1e-8


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class EcgRecord:
    id: str
    signal: np.ndarray  # (C, L) float32
    fs: float
    labels: frozenset[str]
    fold: int
    normalized: bool = False
    notes: str = ""

    def __post_init__(self):
        if self.signal.ndim != 2:
            raise DataError(f"record {self.id}: signal must be 2-d, got {self.signal.shape}")
        if not np.isfinite(self.signal).all():
            raise DataError(f"record {self.id}: signal contains non-finite values")
        if not 1 <= self.fold <= 10:
            raise DataError(f"record {self.id}: fold {self.fold} outside [1, 10]")
        bad = set(self.labels) - set(SUPERCLASSES)
        if bad:
            raise DataError(f"record {self.id}: unknown label token(s) {sorted(bad)}")

    @property
    def num_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def length(self) -> int:
        return self.signal.shape[1]


@dataclass(frozen=True)
class LabeledDataset:
    """Curated (record, binary label) pairs tagged with their split of origin."""

    items: tuple[tuple[EcgRecord, int], ...]
    provenance: str  # train | val | test | adhoc

    def __len__(self) -> int:
        return len(self.items)

    def signals(self) -> np.ndarray:
        return np.stack([rec.signal for rec, _ in self.items])

    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.items], dtype=np.int64)


def zscore(record: EcgRecord) -> EcgRecord:
    """Standardize each lead by its own mean and population deviation."""
    if record.normalized:
        raise DataError(f"record {record.id} is already normalized")
    x = record.signal.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    out = (x - mean) / (std + ZSCORE_EPS)
    return replace(record, signal=out.astype(np.float32), normalized=True)


def curate_binary_task(records: Sequence[EcgRecord], target: str) -> list[tuple[EcgRecord, int]]:
    """Keep records with exactly one of {target, NORM}; label 1 iff target."""
    if target == "NORM":
        raise DataError("the healthy class cannot be the curation target")
    if target not in SUPERCLASSES:
        raise DataError(f"unknown target class '{target}'")
    kept = []
    for rec in records:
        has_target = target in rec.labels
        has_norm = "NORM" in rec.labels
        if has_target != has_norm:  # XOR
            kept.append((rec, 1 if has_target else 0))
    return kept


@dataclass(frozen=True)
class FoldSplit:
    train: tuple[EcgRecord, ...]
    val: tuple[EcgRecord, ...]
    test: tuple[EcgRecord, ...]


def split_folds(records: Sequence[EcgRecord]) -> FoldSplit:
    """Folds 1-8 train, fold 9 validation, fold 10 test."""
    train = tuple(r for r in records if r.fold <= 8)
    val = tuple(r for r in records if r.fold == 9)
    test = tuple(r for r in records if r.fold == 10)
    if not val:
        warnings.warn("validation fold 9 is empty", stacklevel=2)
    return FoldSplit(train=train, val=val, test=test)


def curated_split(records: Sequence[EcgRecord], target: str) -> dict[str, LabeledDataset]:
    """Split by fold, then curate each side into a labeled dataset."""
    split = split_folds(records)
    return {
        name: LabeledDataset(items=tuple(curate_binary_task(part, target)), provenance=name)
        for name, part in (("train", split.train), ("val", split.val), ("test", split.test))
    }


# ---------------------------------------------------------------------------
# synthetic task


@dataclass(frozen=True)
class SynthSpec:
    """Seeded generator settings for the paired plateau-anomaly task."""

    seed: int = 0
    num_per_class: int = 100
    num_leads: int = 12
    signal_length: int = 256
    fs: float = 100.0
    beat_rate_bpm: float = 75.0
    p_amplitude: float = 0.15
    qrs_amplitude: float = 1.0
    t_amplitude: float = 0.35
    anomaly_leads: tuple[int, ...] = (2, 3, 4)
    anomaly_onset: float = 0.5
    anomaly_duration: float = 0.1
    anomaly_amplitude: float = 0.5
    noise_std: float = 0.1
    positive_label: str = "MI"
    id_prefix: str = "synth"

    def __post_init__(self):
        if not (0.0 <= self.anomaly_onset and
                self.anomaly_onset + self.anomaly_duration <= 1.0):
            raise DataError("anomaly window must lie within [0, 1]")
        if any(not 0 <= c < self.num_leads for c in self.anomaly_leads):
            raise DataError("anomaly leads outside the lead range")
        if self.positive_label not in SUPERCLASSES or self.positive_label == "NORM":
            raise DataError("positive label must be a pathology superclass")
        if self.num_per_class < 1:
            raise DataError("need at least one record per class")

    @property
    def anomaly_start(self) -> int:
        return int(round(self.anomaly_onset * self.signal_length))

    @property
    def anomaly_samples(self) -> int:
        return int(round(self.anomaly_duration * self.signal_length))


# fixed per-lead projection of the base waveform; mixed signs as on a
# physical lead set, independent of the record RNG
def _lead_gains(num_leads: int) -> np.ndarray:
    idx = np.arange(num_leads)
    return 0.55 + 0.45 * np.cos(2.0 * np.pi * idx / num_leads + 0.9)


def _base_waveform(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(spec.signal_length) / spec.fs
    period = 60.0 / spec.beat_rate_bpm
    phase = rng.uniform(0.0, period)
    amp_jitter = rng.uniform(0.85, 1.15)
    # P / QRS / T as Gaussian bumps around each beat center
    components = (
        (spec.p_amplitude, -0.16, 0.035),
        (spec.qrs_amplitude, 0.0, 0.018),
        (spec.t_amplitude, 0.28, 0.07),
    )
    wave = np.zeros_like(t)
    n_beats = int(np.ceil(t[-1] / period)) + 2
    for b in range(-1, n_beats):
        center = phase + b * period
        for amp, offset, width in components:
            wave += amp * np.exp(-0.5 * ((t - center - offset) / width) ** 2)
    gains = _lead_gains(spec.num_leads) * amp_jitter
    signal = gains[:, None] * wave[None, :]
    signal += rng.normal(0.0, spec.noise_std, size=signal.shape)
    return signal


def generate_synthetic(spec: SynthSpec) -> list[EcgRecord]:
    """Paired positives and negatives; each pair shares its base waveform.

    The positive twin adds a constant offset on the configured leads over
    [onset, onset+duration), so the class-conditional difference has
    support exactly on the injected region. Folds go round-robin per pair,
    keeping every fold class-balanced.
    """
    rng = np.random.default_rng(spec.seed)
    start = spec.anomaly_start
    stop = start + spec.anomaly_samples
    records = []
    for j in range(spec.num_per_class):
        base = _base_waveform(spec, rng)
        fold = (j % 10) + 1
        positive = base.copy()
        positive[list(spec.anomaly_leads), start:stop] += spec.anomaly_amplitude
        records.append(EcgRecord(
            id=f"{spec.id_prefix}-neg-{j:05d}", signal=base.astype(np.float32),
            fs=spec.fs, labels=frozenset({"NORM"}), fold=fold))
        records.append(EcgRecord(
            id=f"{spec.id_prefix}-pos-{j:05d}", signal=positive.astype(np.float32),
            fs=spec.fs, labels=frozenset({spec.positive_label}), fold=fold))
    return records


# ---------------------------------------------------------------------------
# disk format


def write_record(record: EcgRecord, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = directory / f"{record.id}.f32"
    sidecar = directory / f"{record.id}.json"
    blob.write_bytes(np.ascontiguousarray(record.signal, dtype="<f4").tobytes())
    meta = {
        "id": record.id,
        "fs": record.fs,
        "labels": sorted(record.labels),
        "fold": record.fold,
        "C": record.num_leads,
        "L": record.length,
    }
    if record.notes:
        meta["notes"] = record.notes
    sidecar.write_text(json.dumps(meta, sort_keys=True) + "\n")
    return sidecar


def load_record(sidecar_path) -> EcgRecord:
    sidecar_path = Path(sidecar_path)
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable sidecar {sidecar_path}: {e}") from e
    for key in ("id", "fs", "labels", "fold", "C", "L"):
        if key not in meta:
            raise DataError(f"sidecar {sidecar_path} is missing '{key}'")
    c, length = int(meta["C"]), int(meta["L"])
    blob_path = sidecar_path.with_suffix(".f32")
    raw = blob_path.read_bytes()
    expected = 4 * c * length
    if len(raw) != expected:
        raise DataError(
            f"blob {blob_path} has {len(raw)} bytes, expected {expected} (4*{c}*{length})")
    signal = np.frombuffer(raw, dtype="<f4").reshape(c, length).copy()
    return EcgRecord(
        id=str(meta["id"]), signal=signal, fs=float(meta["fs"]),
        labels=frozenset(meta["labels"]), fold=int(meta["fold"]),
        notes=str(meta.get("notes", "")),
    )


def write_manifest(records: Sequence[EcgRecord], directory) -> Path:
    """Write all records plus the manifest that indexes them."""
    directory = Path(directory)
    entries = []
    for rec in records:
        sidecar = write_record(rec, directory)
        entries.append({
            "id": rec.id,
            "path": sidecar.name,
            "fs": rec.fs,
            "labels": sorted(rec.labels),
            "fold": rec.fold,
            "L": rec.length,
        })
    manifest = {"format_version": MANIFEST_VERSION, "records": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def load_manifest(path) -> list[EcgRecord]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable manifest {path}: {e}") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('format_version')!r}")
    seen = set()
    records = []
    for entry in manifest["records"]:
        if entry["id"] in seen:
            raise DataError(f"duplicate record id '{entry['id']}' in manifest")
        seen.add(entry["id"])
        records.append(load_record(path.parent / entry["path"]))
    return records
