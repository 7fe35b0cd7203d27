"""Domain types shared by every module.

Latents are stored as float32 ``(n_frames, d)`` matrices. The encoder output is
split along the feature axis: the first ``d/2`` columns form the private
subspace, the last ``d/2`` the shared subspace.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class MVLatentError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(MVLatentError, ValueError):
    pass


class NonFiniteError(MVLatentError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    values: np.ndarray
    clip_id: str

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class LatentBundle:
    z_p: np.ndarray
    z_s: np.ndarray
    clip_id: str = ""

    def __post_init__(self):
        if self.z_p.shape != self.z_s.shape:
            raise DimensionError(
                f"subspace shapes differ: {self.z_p.shape} vs {self.z_s.shape}")

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.z_p, self.z_s], axis=-1)


@dataclass(frozen=True, eq=False)
class ViewPair:
    view1: EmbeddingMatrix
    view2: EmbeddingMatrix
    shared_key: str

    def __post_init__(self):
        if self.view1.clip_id == self.view2.clip_id:
            raise MVLatentError(f"a pair needs two distinct clips, got {self.view1.clip_id!r} twice")

    def swapped(self) -> "ViewPair":
        return ViewPair(self.view2, self.view1, self.shared_key)


def validate_embedding(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Check shape and finiteness of ``m`` and return it unchanged."""
    v = m.values
    if v.ndim != 2:
        raise DimensionError(f"{m.clip_id}: expected a 2-D matrix, got shape {v.shape}")
    n, d = v.shape
    if n < 1:
        raise DimensionError(f"{m.clip_id}: need at least one frame")
    if d < 2 or d % 2:
        raise DimensionError(f"{m.clip_id}: feature dim must be even and >= 2, got {d}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{m.clip_id}: matrix contains non-finite values")
    return m


def split_subspaces(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = z.shape[-1] // 2
    return z[..., :half], z[..., half:]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator keyed by ``seed`` plus an optional stream path.

    Distinct stream tuples give statistically independent generators, so one
    master seed can drive pairing, shuffling, init and masking separately.
    """
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def digest(obj) -> str:
    """Stable sha256 of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
