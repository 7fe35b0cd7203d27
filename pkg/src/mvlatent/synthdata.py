"""Synthetic latent datasets with known sensor (shared) and source (private) factors.

Each frame of a clip is ``c[sensor] + sum(p[l] for l in labels) + sigma * noise``
with unit-norm Gaussian prototypes ``c`` and ``p``. The factor model is linear
so that recovering both factors from frame-averaged latents is a solvable
problem and downstream probe numbers have a known ceiling.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import DTYPE, EmbeddingMatrix, MVLatentError, digest, make_rng
from .ingest import ClipRecord, write_latent, write_manifest


class InvalidSpecError(MVLatentError, ValueError):
    pass


class DegenerateSplitError(MVLatentError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_sensors: int = 12
    n_sources: int = 8
    d: int = 32
    n_frames: int = 8
    clips_per_sensor: int = 200
    max_labels_per_clip: int = 3
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_sensors < 2 or self.n_sources < 2:
            raise InvalidSpecError("need at least 2 sensors and 2 sources")
        if self.clips_per_sensor < 2:
            raise InvalidSpecError("clips_per_sensor must be >= 2 for pairing")
        if self.d < 2 or self.d % 2:
            raise InvalidSpecError(f"d must be even and >= 2, got {self.d}")
        if self.n_frames < 1:
            raise InvalidSpecError("n_frames must be >= 1")
        if not 1 <= self.max_labels_per_clip <= self.n_sources:
            raise InvalidSpecError("max_labels_per_clip must lie in [1, n_sources]")
        if not self.noise_sigma >= 0:
            raise InvalidSpecError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise InvalidSpecError("seed must be non-negative")
        return self


@dataclass
class SynthDataset:
    spec: SynthSpec
    manifest: list[ClipRecord]
    latents: dict[str, EmbeddingMatrix]
    sensor_prototypes: np.ndarray
    source_prototypes: np.ndarray

    def sensor_index(self, sensor_id: str) -> int:
        return int(sensor_id[1:])

    def source_index(self, label: str) -> int:
        return int(label[3:])

    def digest(self) -> str:
        h = digest({"spec": asdict(self.spec),
                    "manifest": [r.to_json() for r in self.manifest]})
        m = hashlib.sha256(h.encode())
        for r in self.manifest:
            m.update(np.ascontiguousarray(self.latents[r.clip_id].values, "<f4").tobytes())
        return m.hexdigest()


def sensor_name(k: int) -> str:
    return f"s{k:02d}"


def source_name(l: int) -> str:
    return f"src{l}"


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate(spec: SynthSpec) -> SynthDataset:
    spec.validate()
    proto_rng = make_rng(spec.seed, 10)
    label_rng = make_rng(spec.seed, 11)
    noise_rng = make_rng(spec.seed, 12)
    sensors = _unit_rows(proto_rng, spec.n_sensors, spec.d)
    sources = _unit_rows(proto_rng, spec.n_sources, spec.d)

    manifest, latents = [], {}
    for k in range(spec.n_sensors):
        for t in range(spec.clips_per_sensor):
            n_labels = label_rng.integers(1, spec.max_labels_per_clip + 1)
            labels = np.sort(label_rng.choice(spec.n_sources, size=n_labels, replace=False))
            mean = sensors[k] + sources[labels].sum(axis=0)
            frames = mean + spec.noise_sigma * noise_rng.standard_normal((spec.n_frames, spec.d))
            clip_id = f"{sensor_name(k)}_c{t:04d}"
            manifest.append(ClipRecord(clip_id, sensor_name(k), t,
                                       frozenset(source_name(l) for l in labels)))
            latents[clip_id] = EmbeddingMatrix(frames.astype(DTYPE), clip_id)
    return SynthDataset(spec, manifest, latents, sensors.astype(DTYPE), sources.astype(DTYPE))


def write_dataset(ds: SynthDataset, out_dir) -> Path:
    """Write ``manifest.jsonl`` plus one latent file per clip; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "latents").mkdir(parents=True, exist_ok=True)
    records = []
    for r in ds.manifest:
        rel = f"latents/{r.clip_id}.mvlt"
        write_latent(out_dir / rel, ds.latents[r.clip_id].values)
        records.append(ClipRecord(r.clip_id, r.sensor_id, r.segment_index, r.source_labels, rel))
    path = out_dir / "manifest.jsonl"
    write_manifest(path, records)
    return path


def _lstsq_readout(x_tr, y_tr, x_te):
    a = np.hstack([x_tr, np.ones((len(x_tr), 1))])
    w, *_ = np.linalg.lstsq(a, y_tr, rcond=None)
    return np.hstack([x_te, np.ones((len(x_te), 1))]) @ w


def recoverability_check(ds: SynthDataset, shuffle_seed: int | None = None) -> tuple[float, float]:
    """Held-out linear readout of both factors from frame-averaged latents.

    Even-numbered clips of each sensor train a least-squares readout, odd ones
    are scored. ``shuffle_seed`` permutes the sensor labels first (chance
    baseline). Returns ``(sensor_accuracy, source_jaccard)``.
    """
    from .evaluation import jaccard_multilabel

    spec = ds.spec
    x = np.stack([ds.latents[r.clip_id].values.mean(axis=0) for r in ds.manifest]).astype(np.float64)
    sensor = np.array([ds.sensor_index(r.sensor_id) for r in ds.manifest])
    if shuffle_seed is not None:
        sensor = make_rng(shuffle_seed, 13).permutation(sensor)
    multi = np.zeros((len(ds.manifest), spec.n_sources))
    for i, r in enumerate(ds.manifest):
        multi[i, [ds.source_index(l) for l in r.source_labels]] = 1.0
    train = np.array([r.segment_index % 2 == 0 for r in ds.manifest])
    test = ~train
    if len(np.unique(sensor[train])) < spec.n_sensors or np.any(multi[train].sum(axis=0) == 0):
        raise DegenerateSplitError("a class is absent from the readout train half")

    onehot = np.eye(spec.n_sensors)[sensor]
    pred_sensor = _lstsq_readout(x[train], onehot[train], x[test]).argmax(axis=1)
    sensor_acc = float(np.mean(pred_sensor == sensor[test]))

    pred_multi = _lstsq_readout(x[train], multi[train], x[test]) > 0.5
    to_sets = lambda m: [frozenset(np.flatnonzero(row).tolist()) for row in m]
    jac = jaccard_multilabel(to_sets(pred_multi), to_sets(multi[test] > 0.5))
    return sensor_acc, jac
