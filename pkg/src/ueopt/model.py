"""Lightweight trainable surface over a frozen dual-encoder's cached outputs.

The backbone never appears here. Images are represented by their cached
embeddings x; the trainable image path is a channel-wise affine map
followed by unit normalization:

    I(x) = normalize(scale * x + shift)

Class prototypes play the role of encoded prompts. A shared context block
(m vectors of width k, initialized to zero) is projected into embedding
space by a frozen random matrix with orthonormal columns and added to
every base prototype before normalization:

    T_c = normalize(b_c + U @ flatten(context))

Predictions are a temperature softmax over cosine similarities. With the
identity adapter (unit scale, zero shift, zero context) the head output
matches the frozen encoder pair exactly, which is what makes the
zero-initialized snapshot usable as a confidence reference during training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import ValidationError, check_features, check_probs

DEFAULT_TAU = 0.01
_NORM_FLOOR = 1e-12


class DegenerateVectorError(ValueError):
    """A vector collapsed to (numerically) zero before normalization."""


def projection_matrix(d: int, n_cols: int, seed: int) -> np.ndarray:
    """Frozen random d x n_cols matrix with orthonormal columns.

    Drawn once from the given seed and regenerated on load rather than
    stored. Requires n_cols <= d.
    """
    if n_cols < 0 or n_cols > d:
        raise ValidationError(f"projection needs 0 <= n_cols <= d, got {n_cols} x {d}")
    if n_cols == 0:
        return np.zeros((d, 0))
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, n_cols)))
    # Fix signs so the factorization is unique and platform-stable.
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


@dataclass(frozen=True)
class AdapterParams:
    """Trainable state: image affine (scale, shift) and prompt context."""

    scale: np.ndarray
    shift: np.ndarray
    context: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=np.float64)
        shift = np.asarray(self.shift, dtype=np.float64)
        context = np.asarray(self.context, dtype=np.float64)
        if scale.ndim != 1 or shift.shape != scale.shape:
            raise ValidationError("scale and shift must be 1-D with equal length")
        if context.ndim != 2:
            raise ValidationError("context must be 2-D (prompt length x width)")
        for name, arr in (("scale", scale), ("shift", shift), ("context", context)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "context", context)

    @property
    def d(self) -> int:
        return self.scale.shape[0]

    @property
    def m(self) -> int:
        return self.context.shape[0]

    @property
    def k(self) -> int:
        return self.context.shape[1]

    @classmethod
    def identity(cls, d: int, m: int, k: int) -> "AdapterParams":
        return cls(np.ones(d), np.zeros(d), np.zeros((m, k)))

    def is_identity(self) -> bool:
        return (
            bool(np.all(self.scale == 1.0))
            and bool(np.all(self.shift == 0.0))
            and bool(np.all(self.context == 0.0))
        )


@dataclass(frozen=True)
class ClassHead:
    """Frozen per-class prototypes plus the frozen context projection."""

    base_prototypes: np.ndarray
    projection: np.ndarray
    tau: float = DEFAULT_TAU
    seed_u: int = 0

    def __post_init__(self):
        protos = check_features(self.base_prototypes, name="base_prototypes")
        if protos.shape[0] < 2:
            raise ValidationError("a class head needs at least 2 prototypes")
        proj = np.asarray(self.projection, dtype=np.float64)
        if proj.ndim != 2 or proj.shape[0] != protos.shape[1]:
            raise ValidationError("projection must be d x (m*k)")
        if proj.shape[1] > proj.shape[0]:
            raise ValidationError("projection cannot have more columns than rows")
        if not np.all(np.isfinite(proj)):
            raise ValidationError("projection contains non-finite entries")
        if not (self.tau > 0.0):
            raise ValidationError(f"tau must be positive, got {self.tau}")
        protos.flags.writeable = False
        proj.flags.writeable = False
        object.__setattr__(self, "base_prototypes", protos)
        object.__setattr__(self, "projection", proj)

    @property
    def n_classes(self) -> int:
        return self.base_prototypes.shape[0]

    @property
    def d(self) -> int:
        return self.base_prototypes.shape[1]


def build_head(prototypes, *, m: int = 4, k: int | None = None,
               tau: float = DEFAULT_TAU, seed: int = 0) -> ClassHead:
    """Assemble a head from a prototype matrix (or cache exposing .features).

    k defaults to d // m so the context projection spans the full embedding
    space; m=0 disables the prompt surface entirely.
    """
    feats = getattr(prototypes, "features", prototypes)
    protos = check_features(feats, name="prototypes")
    d = protos.shape[1]
    if m < 0:
        raise ValidationError("prompt length m must be >= 0")
    if k is None:
        k = d // m if m > 0 else 0
    if m > 0 and k < 1:
        raise ValidationError(f"context width k must be >= 1 when m > 0 (d={d}, m={m})")
    if m * k > d:
        raise ValidationError(f"m*k must not exceed d, got {m}*{k} > {d}")
    proj = projection_matrix(d, m * k, seed)
    return ClassHead(protos, proj, tau=tau, seed_u=seed)


@dataclass(frozen=True)
class ModelState:
    """A head plus adapter parameters. The frozen reference flag marks the
    zero-initialized snapshot used for confidence weighting; such a state
    must keep the identity adapter."""

    head: ClassHead
    adapter: AdapterParams
    frozen_reference: bool = False

    def __post_init__(self):
        if self.adapter.d != self.head.d:
            raise ValidationError("adapter dimension does not match head")
        if self.head.projection.shape[1] != self.adapter.m * self.adapter.k:
            raise ValidationError("context shape does not match projection")
        if self.frozen_reference and not self.adapter.is_identity():
            raise ValidationError("frozen reference state must keep the identity adapter")

    @classmethod
    def initial(cls, head: ClassHead, *, m: int, k: int) -> "ModelState":
        return cls(head, AdapterParams.identity(head.d, m, k))

    def reference(self) -> "ModelState":
        """The frozen confidence reference sharing this state's head."""
        a = self.adapter
        return ModelState(self.head, AdapterParams.identity(a.d, a.m, a.k),
                          frozen_reference=True)


def _normalize_rows(mat: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    if float(norms.min()) < _NORM_FLOOR:
        raise DegenerateVectorError(f"degenerate {what}: zero vector before normalization")
    return mat / norms, norms


def text_prototypes(head: ClassHead, adapter: AdapterParams) -> np.ndarray:
    """Unit-norm class prototypes after applying the shared context offset."""
    offset = head.projection @ adapter.context.reshape(-1)
    protos, _ = _normalize_rows(head.base_prototypes + offset, "prototype")
    return protos


def image_forward(adapter: AdapterParams, x) -> np.ndarray:
    """Adapted, unit-normalized image embedding(s). Accepts a vector or a
    matrix of row vectors."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    batch = check_features(arr[None, :] if squeeze else arr,
                           n_features=adapter.d, name="embeddings")
    out, _ = _normalize_rows(batch * adapter.scale + adapter.shift, "image embedding")
    return out[0] if squeeze else out


def _softmax_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return np.exp(logp), logp


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates of one batched forward pass, kept for the backward pass."""

    images: np.ndarray        # adapted unit image embeddings, (n, d)
    image_norms: np.ndarray   # pre-normalization norms, (n, 1)
    prototypes: np.ndarray    # adapted unit prototypes, (C, d)
    proto_norms: np.ndarray   # pre-normalization norms, (C, 1)
    logits: np.ndarray        # cosine / tau, (n, C)
    probs: np.ndarray         # softmax rows, (n, C)
    log_probs: np.ndarray     # stable log of probs, (n, C)


def forward_cache(state: ModelState, batch) -> ForwardCache:
    x = check_features(batch, n_features=state.head.d, name="batch")
    pre_img = x * state.adapter.scale + state.adapter.shift
    images, img_norms = _normalize_rows(pre_img, "image embedding")
    offset = state.head.projection @ state.adapter.context.reshape(-1)
    protos, proto_norms = _normalize_rows(state.head.base_prototypes + offset, "prototype")
    logits = (images @ protos.T) / state.head.tau
    probs, log_probs = _softmax_rows(logits)
    return ForwardCache(images, img_norms, protos, proto_norms, logits, probs, log_probs)


def predict_probs(state: ModelState, batch) -> np.ndarray:
    """Per-class probabilities: softmax over cosine similarity / tau."""
    return forward_cache(state, batch).probs


def mcm_score(probs) -> np.ndarray:
    """Maximum softmax probability per row, the confidence used both for
    weighting and for flagging out-of-distribution samples."""
    arr = check_probs(probs)
    if arr.ndim == 1:
        return float(arr.max())  # type: ignore[return-value]
    return arr.max(axis=1)


def predict_class(probs) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest index."""
    arr = check_probs(probs)
    if arr.ndim == 1:
        return int(arr.argmax())  # type: ignore[return-value]
    return arr.argmax(axis=1).astype(np.int64)


def save_adapter(path, adapter: AdapterParams, seed_u: int) -> None:
    """Persist trainable parameters. The projection is regenerated from
    seed_u on load, never stored."""
    obj = {
        "scale": adapter.scale.tolist(),
        "shift": adapter.shift.tolist(),
        "context": adapter.context.tolist(),
        "m": adapter.m,
        "k": adapter.k,
        "seed_U": int(seed_u),
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_adapter(path) -> tuple[AdapterParams, int]:
    obj = json.loads(Path(path).read_text())
    try:
        context = np.asarray(obj["context"], dtype=np.float64).reshape(obj["m"], obj["k"])
        adapter = AdapterParams(np.asarray(obj["scale"]), np.asarray(obj["shift"]), context)
        return adapter, int(obj["seed_U"])
    except KeyError as err:
        raise ValidationError(f"adapter file missing key {err}") from err
