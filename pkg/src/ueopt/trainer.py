"""Mini-batch SGD over the adapter parameters.

Two model states live side by side during a run: the current state, whose
parameters move, and the frozen reference, a zero-initialized snapshot of
the same head. Confidence weights always come from the reference so the
weighting cannot chase the model it is supposed to supervise. The oracle
method is the exception: its binary weights are precomputed outside from
ground-truth labels and passed in whole.

Runs are bit-reproducible: shuffling derives from the config seed, the
context projection from the same seed, and all math is float64.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datamodel import EmbeddingCache
from .model import AdapterParams, ModelState, build_head, forward_cache
from .objectives import LossConfig, grad
from .validation import ValidationError, check_vector

PARAM_GROUPS = ("prompt", "affine_scale", "affine_shift")
_GROUP_ATTR = {"prompt": "context", "affine_scale": "scale", "affine_shift": "shift"}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings plus the head hyperparameters.

    `param_groups` selects which blocks move; the rest stay at their
    initialization. `context_dim` of None means d // prompt_len.
    """

    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    param_groups: tuple[str, ...] = PARAM_GROUPS
    loss: LossConfig = field(default_factory=LossConfig)
    shuffle: bool = True
    momentum: float = 0.0
    prompt_len: int = 4
    context_dim: int | None = None
    tau: float = 0.01

    def __post_init__(self):
        if not (self.lr > 0.0):
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        groups = tuple(self.param_groups)
        if not groups:
            raise ValidationError("at least one parameter group must be enabled")
        unknown = set(groups) - set(PARAM_GROUPS)
        if unknown:
            raise ValidationError(f"unknown parameter groups {sorted(unknown)}")
        if len(set(groups)) != len(groups):
            raise ValidationError("duplicate parameter groups")
        object.__setattr__(self, "param_groups", groups)
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_json(self.loss))

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "epochs": self.epochs, "batch_size": self.batch_size,
            "seed": self.seed, "param_groups": list(self.param_groups),
            "loss": self.loss.to_json(), "shuffle": self.shuffle,
            "momentum": self.momentum, "prompt_len": self.prompt_len,
            "context_dim": self.context_dim, "tau": self.tau,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "param_groups" in obj:
            obj["param_groups"] = tuple(obj["param_groups"])
        return cls(**obj)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 toward 0 at total_steps."""
    if total_steps < 1:
        raise ValidationError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step <= total_steps):
        raise ValidationError(f"step must be in [0, {total_steps}], got {step}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


_LOG_COLUMNS = ("step", "epoch", "lr", "loss", "mean_w", "mean_entropy")


@dataclass
class TrainLog:
    """One row per optimizer step."""

    rows: list[tuple] = field(default_factory=list)

    def append(self, step: int, epoch: int, lr: float, loss: float,
               mean_w: float, mean_entropy: float) -> None:
        self.rows.append((step, epoch, lr, loss, mean_w, mean_entropy))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_LOG_COLUMNS)
            for step, epoch, lr, loss, mean_w, mean_h in self.rows:
                writer.writerow([
                    step, epoch, f"{lr:.10g}", f"{loss:.10g}",
                    f"{mean_w:.10g}", f"{mean_h:.10g}",
                ])

    def column(self, name: str) -> np.ndarray:
        idx = _LOG_COLUMNS.index(name)
        return np.asarray([row[idx] for row in self.rows])


def train(train_cache: EmbeddingCache, prototypes: EmbeddingCache,
          cfg: TrainConfig, sample_weights=None) -> tuple[ModelState, TrainLog]:
    """Adapt the head on an unlabeled pool; returns (state, log).

    `prototypes` must hold exactly the predefined classes, one row each.
    Labels in `train_cache` are never read; the oracle method instead takes
    its per-row binary weights through `sample_weights`, aligned with the
    cache rows. epochs=0 returns the identity-initialized state untouched.
    """
    if train_cache.d != prototypes.d:
        raise ValidationError(
            f"feature width mismatch: pool d={train_cache.d}, prototypes d={prototypes.d}"
        )
    head = build_head(prototypes, m=cfg.prompt_len, k=cfg.context_dim,
                      tau=cfg.tau, seed=cfg.seed)
    m, k = cfg.prompt_len, head.projection.shape[1] // max(cfg.prompt_len, 1)
    state = ModelState.initial(head, m=m, k=k)
    reference = state.reference()

    n = train_cache.n
    if cfg.loss.method == "ueo_oracle":
        if sample_weights is None:
            raise ValidationError("ueo_oracle needs precomputed sample_weights")
        sample_weights = check_vector(sample_weights, size=n, lo=0.0, hi=1.0,
                                      name="sample_weights")
    elif sample_weights is not None:
        sample_weights = check_vector(sample_weights, size=n, lo=0.0, hi=1.0,
                                      name="sample_weights")

    log = TrainLog()
    if cfg.epochs == 0:
        return state, log

    x = train_cache.features
    batches_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * batches_per_epoch
    rng = np.random.default_rng(cfg.seed)
    adapter = state.adapter
    velocity = {name: np.zeros_like(getattr(adapter, attr))
                for name, attr in _GROUP_ATTR.items()}

    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = x[idx]
            if sample_weights is not None:
                w = sample_weights[idx]
            else:
                # weights come from the frozen reference, not the moving state
                ref = forward_cache(reference, batch)
                w = ref.probs.max(axis=1)
            result = grad(cfg.loss, replace(state, adapter=adapter,
                                            frozen_reference=False), batch, w)
            if not math.isfinite(result.loss):
                raise ValidationError(f"non-finite loss at step {step}")
            lr = cosine_lr(step, total_steps, cfg.lr)
            updates = {}
            for group in cfg.param_groups:
                attr = _GROUP_ATTR[group]
                g = getattr(result, attr)
                if cfg.momentum > 0.0:
                    velocity[group] = cfg.momentum * velocity[group] + g
                    g = velocity[group]
                updates[attr] = getattr(adapter, attr) - lr * g
            adapter = replace(adapter, **updates)
            log.append(step, epoch, lr, result.loss, float(np.mean(w)),
                       result.mean_entropy)
            step += 1
    return replace(state, adapter=adapter), log
