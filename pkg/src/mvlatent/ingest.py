"""Manifests, latent files, same-sensor pairing and sensor-disjoint splits.

Manifest: UTF-8, one JSON object per line with keys ``clip_id``,
``sensor_id``, ``segment_index``, ``latent_path`` and optionally
``source_labels`` (array of strings). Relative latent paths resolve against
the manifest's directory.

Latent file: little-endian, 16-byte header ``b"MVLT"``, u32 version, u32
n_frames, u32 d, followed by ``n_frames * d`` float32 values in row-major
order.
"""
from __future__ import annotations

import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (DTYPE, EmbeddingMatrix, MVLatentError, ViewPair, make_rng,
                   validate_embedding)

LATENT_MAGIC = b"MVLT"
LATENT_VERSION = 1
_HEADER = struct.Struct("<4sIII")

DOWNSTREAM_RATIOS = (0.7, 0.1, 0.2)


class ManifestParseError(MVLatentError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DuplicateKeyError(MVLatentError):
    pass


class LatentFormatError(MVLatentError):
    pass


class InsufficientClipsError(MVLatentError):
    def __init__(self, sensor_id: str, n: int):
        super().__init__(f"sensor {sensor_id!r} has {n} clip(s); pairing needs at least 2")
        self.sensor_id = sensor_id


class TooFewSensorsError(MVLatentError):
    pass


class StratificationError(MVLatentError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    sensor_id: str
    segment_index: int
    source_labels: frozenset[str] | None = None
    latent_path: str | None = None

    def to_json(self) -> dict:
        out = {"clip_id": self.clip_id, "sensor_id": self.sensor_id,
               "segment_index": self.segment_index}
        if self.source_labels is not None:
            out["source_labels"] = sorted(self.source_labels)
        if self.latent_path is not None:
            out["latent_path"] = self.latent_path
        return out


@dataclass(frozen=True)
class SplitPlan:
    train_sensors: frozenset[str]
    val_sensors: frozenset[str]
    test_sensors: frozenset[str]
    pairs_per_split: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        a, b, c = self.train_sensors, self.val_sensors, self.test_sensors
        if a & b or a & c or b & c:
            raise MVLatentError("split sensor sets overlap")

    def sensors(self, split: str) -> frozenset[str]:
        return {"train": self.train_sensors, "val": self.val_sensors,
                "test": self.test_sensors}[split]


# -- manifests ---------------------------------------------------------------

_REQUIRED = ("clip_id", "sensor_id", "segment_index")
_KNOWN = set(_REQUIRED) | {"source_labels", "latent_path"}


def _parse_record(lineno: int, obj) -> ClipRecord:
    if not isinstance(obj, dict):
        raise ManifestParseError(lineno, "record is not a key-value object")
    for key in _REQUIRED:
        if key not in obj:
            raise ManifestParseError(lineno, f"missing key {key!r}")
    unknown = set(obj) - _KNOWN
    if unknown:
        raise ManifestParseError(lineno, f"unknown key(s) {sorted(unknown)}")
    seg = obj["segment_index"]
    if isinstance(seg, bool) or not isinstance(seg, int):
        raise ManifestParseError(lineno, "segment_index must be an integer")
    labels = obj.get("source_labels")
    if labels is not None:
        if not isinstance(labels, list) or not all(isinstance(s, str) for s in labels):
            raise ManifestParseError(lineno, "source_labels must be an array of strings")
        labels = frozenset(labels)
    path = obj.get("latent_path")
    if path is not None and not isinstance(path, str):
        raise ManifestParseError(lineno, "latent_path must be a string")
    return ClipRecord(str(obj["clip_id"]), str(obj["sensor_id"]), seg, labels, path)


def check_unique(records: Iterable[ClipRecord]) -> None:
    seen_key: set[tuple[str, int]] = set()
    seen_id: set[str] = set()
    for r in records:
        key = (r.sensor_id, r.segment_index)
        if key in seen_key:
            raise DuplicateKeyError(f"duplicate (sensor_id, segment_index) {key}")
        if r.clip_id in seen_id:
            raise DuplicateKeyError(f"duplicate clip_id {r.clip_id!r}")
        seen_key.add(key)
        seen_id.add(r.clip_id)


def load_manifest(path) -> list[ClipRecord]:
    """Read a line-delimited manifest; latent paths come back absolute."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(lineno, f"invalid JSON ({exc.msg})") from None
            rec = _parse_record(lineno, obj)
            if rec.latent_path is not None and not Path(rec.latent_path).is_absolute():
                rec = ClipRecord(rec.clip_id, rec.sensor_id, rec.segment_index,
                                 rec.source_labels, str(path.parent / rec.latent_path))
            records.append(rec)
    check_unique(records)
    return records


def write_manifest(path, records: Iterable[ClipRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


# -- latent files ------------------------------------------------------------

def write_latent(path, values: np.ndarray) -> None:
    v = np.ascontiguousarray(values, dtype="<f4")
    if v.ndim != 2:
        raise LatentFormatError(f"latent must be 2-D, got shape {v.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LATENT_MAGIC, LATENT_VERSION, *v.shape))
        fh.write(v.tobytes())


def load_latent(path, clip_id: str = "") -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise LatentFormatError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != LATENT_MAGIC:
        raise LatentFormatError(f"{path}: bad magic {magic!r}")
    if version != LATENT_VERSION:
        raise LatentFormatError(f"{path}: unsupported version {version}")
    payload = len(blob) - _HEADER.size
    if payload != 4 * n * d:
        raise LatentFormatError(
            f"{path}: header declares ({n}, {d}) = {n * d} values, file holds {payload / 4:g}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    return validate_embedding(EmbeddingMatrix(values.astype(DTYPE), clip_id))


def load_latents(records: Iterable[ClipRecord]) -> dict[str, EmbeddingMatrix]:
    out = {}
    for r in records:
        if r.latent_path is None:
            raise MVLatentError(f"clip {r.clip_id!r} has no latent_path")
        out[r.clip_id] = load_latent(r.latent_path, r.clip_id)
    return out


# -- pairing and splits ------------------------------------------------------

def clips_by_sensor(records: Iterable[ClipRecord]) -> dict[str, list[ClipRecord]]:
    groups: dict[str, list[ClipRecord]] = defaultdict(list)
    for r in records:
        groups[r.sensor_id].append(r)
    for clips in groups.values():
        clips.sort(key=lambda r: (r.segment_index, r.clip_id))
    return dict(groups)


def sample_pair_ids(records: Sequence[ClipRecord], split_sensors: Iterable[str],
                    n_pairs: int, seed: int) -> list[tuple[str, str, str]]:
    """Draw ``(clip_a, clip_b, sensor)`` triples.

    A sensor is picked uniformly, then an ordered pair of distinct clips from
    it. Clips may recur across pairs but never within one.
    """
    groups = clips_by_sensor(records)
    sensors = sorted(split_sensors)
    if not sensors:
        raise MVLatentError("no sensors to pair from")
    for s in sensors:
        n = len(groups.get(s, ()))
        if n < 2:
            raise InsufficientClipsError(s, n)
    rng = make_rng(seed, 1)
    out = []
    for _ in range(n_pairs):
        s = sensors[rng.integers(len(sensors))]
        i, j = rng.choice(len(groups[s]), size=2, replace=False)
        out.append((groups[s][i].clip_id, groups[s][j].clip_id, s))
    return out


def make_pairs(records: Sequence[ClipRecord], split_sensors: Iterable[str], n_pairs: int,
               seed: int, latents: Mapping[str, EmbeddingMatrix] | None = None) -> list[ViewPair]:
    """Sample ``n_pairs`` same-sensor view pairs.

    ``latents`` maps clip ids to matrices; when omitted, they are read from
    each record's ``latent_path``.
    """
    triples = sample_pair_ids(records, split_sensors, n_pairs, seed)
    if latents is None:
        needed = {a for a, _, _ in triples} | {b for _, b, _ in triples}
        latents = load_latents(r for r in records if r.clip_id in needed)
    return [ViewPair(latents[a], latents[b], s) for a, b, s in triples]


def largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    w = np.asarray(ratios, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError(f"invalid ratios {ratios}")
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    short = total - counts.sum()
    # stable sort so ties go to the earlier slot
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts.tolist()


def split_sensors(records: Sequence[ClipRecord], ratios: Sequence[float] = (39, 5, 12),
                  seed: int = 0) -> SplitPlan:
    sensors = sorted({r.sensor_id for r in records})
    if len(sensors) < 3:
        raise TooFewSensorsError(f"need at least 3 sensors, got {len(sensors)}")
    counts = largest_remainder(len(sensors), ratios)
    for k in range(3):
        if counts[k] == 0:
            counts[int(np.argmax(counts))] -= 1
            counts[k] = 1
    perm = make_rng(seed, 2).permutation(len(sensors))
    shuffled = [sensors[i] for i in perm]
    a, b = counts[0], counts[0] + counts[1]
    return SplitPlan(frozenset(shuffled[:a]), frozenset(shuffled[a:b]), frozenset(shuffled[b:]))


def stratified_downstream_split(records: Sequence[ClipRecord], seed: int = 0,
                                ratios: Sequence[float] = DOWNSTREAM_RATIOS):
    """Partition labelled clips into probe train/val/test lists.

    Every sensor appears in all three parts. For each source label one
    carrier clip is pinned to the train part first, so every class is seen
    during probe training.
    """
    for r in records:
        if r.source_labels is None:
            raise StratificationError(f"clip {r.clip_id!r} carries no source_labels")
    groups = clips_by_sensor(records)
    for s, clips in groups.items():
        if len(clips) < 3:
            raise StratificationError(f"sensor {s!r} has {len(clips)} clip(s); need >= 3")
    rng = make_rng(seed, 3)

    carriers: dict[str, list[ClipRecord]] = defaultdict(list)
    for r in sorted(records, key=lambda r: r.clip_id):
        for lab in r.source_labels:
            carriers[lab].append(r)
    pinned: set[str] = set()
    # rarest labels first so a sole carrier is never skipped
    for lab in sorted(carriers, key=lambda l: (len(carriers[l]), l)):
        if any(r.clip_id in pinned for r in carriers[lab]):
            continue
        pinned.add(carriers[lab][rng.integers(len(carriers[lab]))].clip_id)

    train, val, test = [], [], []
    for s in sorted(groups):
        clips = groups[s]
        n_tr, n_va, n_te = largest_remainder(len(clips), ratios)
        for k in (1, 2):
            if (n_va, n_te)[k - 1] == 0:
                n_tr -= 1
                if k == 1:
                    n_va = 1
                else:
                    n_te = 1
        forced = [c for c in clips if c.clip_id in pinned]
        free = [c for c in clips if c.clip_id not in pinned]
        if len(free) < 2:
            raise StratificationError(f"sensor {s!r}: pinned clips leave no room for val/test")
        free = [free[i] for i in rng.permutation(len(free))]
        n_te = min(n_te, len(free) - 1)
        n_va = min(n_va, len(free) - n_te)
        val.extend(free[:n_va])
        test.extend(free[n_va:n_va + n_te])
        train.extend(forced + free[n_va + n_te:])
    return train, val, test
