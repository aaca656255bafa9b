"""Synthetic embedding caches with controllable difficulty.

Classes are random unit directions on the sphere; samples are the class
mean plus isotropic Gaussian noise, re-normalized. Two independent draws
form the training pool and the evaluation set; the evaluation draw can be
rotated inside a random 2-plane to create a train/test discrepancy, and
prototypes can be perturbed away from the true means so the zero-shot
head starts imperfect. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .datamodel import EmbeddingCache
from .validation import ValidationError


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs. noise_sigma is per-coordinate; shift_angle rotates
    the evaluation draw; proto_sigma perturbs prototypes off the means."""

    d: int = 64
    n_classes: int = 10
    per_class: int = 20
    noise_sigma: float = 0.05
    shift_angle: float = 0.0
    proto_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValidationError(f"d must be >= 2, got {self.d}")
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.per_class < 1:
            raise ValidationError(f"per_class must be >= 1, got {self.per_class}")
        if self.noise_sigma < 0 or self.proto_sigma < 0:
            raise ValidationError("noise levels must be non-negative")
        if not (0.0 <= self.shift_angle < np.pi):
            raise ValidationError(f"shift_angle must be in [0, pi), got {self.shift_angle}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        return cls(**obj)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


def _rotate_in_plane(x: np.ndarray, e1: np.ndarray, e2: np.ndarray,
                     angle: float) -> np.ndarray:
    """Rotate rows of x by `angle` inside span(e1, e2), identity elsewhere.

    Rank-2 update instead of a dense d x d rotation; norms are preserved.
    """
    c1 = x @ e1
    c2 = x @ e2
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    return (
        x
        + np.outer((cos_a - 1.0) * c1 - sin_a * c2, e1)
        + np.outer(sin_a * c1 + (cos_a - 1.0) * c2, e2)
    )


def generate(config: SynthConfig) -> tuple[EmbeddingCache, EmbeddingCache, EmbeddingCache]:
    """Return (train, test, prototypes) caches for one seed.

    The training pool and the evaluation set are independent draws around
    the same class means; only the evaluation draw is rotated. Labels cover
    every class; callers carve shift-specific subsets out of these caches.
    """
    rng = np.random.default_rng(config.seed)
    c, d, per = config.n_classes, config.d, config.per_class
    names = tuple(f"class_{i:03d}" for i in range(c))

    means = _unit_rows(rng.standard_normal((c, d)))

    # Orthonormal plane for the evaluation-domain rotation.
    basis = rng.standard_normal((d, 2))
    q, _ = np.linalg.qr(basis)
    e1, e2 = q[:, 0], q[:, 1]

    labels = np.repeat(np.arange(c, dtype=np.int64), per)

    def draw() -> np.ndarray:
        noise = rng.standard_normal((c * per, d)) * config.noise_sigma
        return _unit_rows(means[labels] + noise)

    train_feats = draw()
    test_feats = draw()
    if config.shift_angle > 0.0:
        test_feats = _rotate_in_plane(test_feats, e1, e2, config.shift_angle)

    protos = means
    if config.proto_sigma > 0.0:
        protos = _unit_rows(means + rng.standard_normal((c, d)) * config.proto_sigma)

    train = EmbeddingCache(train_feats, labels, names,
                           source=f"synth:train:seed={config.seed}", normalized=True)
    test = EmbeddingCache(test_feats, labels.copy(), names,
                          source=f"synth:test:seed={config.seed}", normalized=True)
    prototypes = EmbeddingCache(protos, np.arange(c, dtype=np.int64), names,
                                source=f"synth:prototypes:seed={config.seed}",
                                normalized=True)
    return train, test, prototypes


def save_synth_config(path, config: SynthConfig) -> None:
    Path(path).write_text(json.dumps(config.to_json(), sort_keys=True) + "\n")


def load_synth_config(path) -> SynthConfig:
    return SynthConfig.from_json(json.loads(Path(path).read_text()))
