"""Embedding caches, the EMB1 file format, and category-shift label splits.

EMB1 layout (all integers little-endian):

    bytes 0..3    magic b"EMB1"
    bytes 4..7    u32 format version, currently 1
    bytes 8..11   u32 n, number of rows
    bytes 12..15  u32 d, feature dimension
    then          n*d float32, row-major
    then          n int32 labels

Feature payloads are stored in single precision; in memory we keep float64
so downstream math runs in doubles. A sidecar JSON next to the cache
(`<stem>.meta.json`) carries class names and provenance:

    {"class_names": [...], "source": "...", "normalized": true}

The sidecar is required: label range validation needs the class list.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .validation import ValidationError, check_labels

MAGIC = b"EMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class CacheFormatError(ValueError):
    """Raised when an EMB1 payload or its sidecar is malformed."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class EmbeddingCache:
    """Immutable bundle of feature rows, integer labels, and class names.

    `features` is float64 (n, d), `labels` int64 (n,) with every label a
    valid index into `class_names`. Instances are safe to share read-only.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    source: str = ""
    normalized: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValidationError(f"features must be a non-empty 2-D array, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite entries")
        if len(self.class_names) < 1:
            raise ValidationError("class_names must be non-empty")
        labels = check_labels(self.labels, size=feats.shape[0],
                              n_classes=len(self.class_names))
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "EmbeddingCache":
        """Row subset in the given order; class names and metadata carry over."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValidationError("row subset must be a non-empty index vector")
        return EmbeddingCache(self.features[idx], self.labels[idx],
                              self.class_names, self.source, self.normalized)


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_cache(path, cache: EmbeddingCache) -> None:
    """Write an EMB1 file plus its `<stem>.meta.json` sidecar.

    Features are quantized to float32 on disk; values already representable
    in single precision round-trip bit-exactly.
    """
    path = Path(path)
    if cache.n > 0xFFFFFFFF or cache.d > 0xFFFFFFFF:
        raise CacheFormatError("cache too large for u32 header fields")
    if int(cache.labels.max()) > np.iinfo(np.int32).max:
        raise CacheFormatError("labels exceed int32 range")
    feats32 = cache.features.astype(np.float32)
    if not np.all(np.isfinite(feats32)):
        raise CacheFormatError("features overflow float32 storage")
    blob = bytearray()
    blob += _HEADER.pack(MAGIC, FORMAT_VERSION, cache.n, cache.d)
    blob += feats32.tobytes(order="C")
    blob += cache.labels.astype(np.int32).tobytes(order="C")
    path.write_bytes(bytes(blob))
    meta = {
        "class_names": list(cache.class_names),
        "source": cache.source,
        "normalized": bool(cache.normalized),
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_cache(path) -> EmbeddingCache:
    """Read an EMB1 file and its sidecar, validating the full layout."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheFormatError(f"{path.name}: truncated header ({len(raw)} bytes)")
    magic, version, n, d = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CacheFormatError(f"{path.name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CacheFormatError(f"{path.name}: unsupported version {version}")
    if n < 1 or d < 1:
        raise CacheFormatError(f"{path.name}: invalid dimensions n={n} d={d}")
    expected = _HEADER.size + 4 * n * d + 4 * n
    if len(raw) != expected:
        raise CacheFormatError(
            f"{path.name}: payload size {len(raw)} does not match header (expected {expected})"
        )
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=off)
    if not np.all(np.isfinite(feats)):
        raise CacheFormatError(f"{path.name}: non-finite features")
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise CacheFormatError(f"{path.name}: missing sidecar {sidecar.name}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as err:
        raise CacheFormatError(f"{sidecar.name}: invalid JSON ({err})") from err
    names = meta.get("class_names")
    if not isinstance(names, list) or not names:
        raise CacheFormatError(f"{sidecar.name}: class_names missing or empty")
    if labels.size and (int(labels.min()) < 0 or int(labels.max()) >= len(names)):
        raise CacheFormatError(
            f"{path.name}: label out of range for {len(names)} class names"
        )
    return EmbeddingCache(
        feats.astype(np.float64),
        labels.astype(np.int64),
        tuple(str(c) for c in names),
        source=str(meta.get("source", "")),
        normalized=bool(meta.get("normalized", False)),
    )


class ShiftKind(str, Enum):
    """Relation between the training label space and the predefined list."""

    CLOSED = "closed"
    PARTIAL = "partial"
    OPEN = "open"
    OPEN_PARTIAL = "open-partial"


@dataclass(frozen=True)
class ShiftSpec:
    """Label-space triple for one adaptation scenario.

    L_p: predefined (prompt) classes, L_u: classes present in the unlabeled
    training pool, L_e: classes present at evaluation. L_p and L_u are both
    subsets of L_e and each overlaps the other.
    """

    L_p: tuple[int, ...]
    L_u: tuple[int, ...]
    L_e: tuple[int, ...]

    def __post_init__(self):
        for name in ("L_p", "L_u", "L_e"):
            vals = tuple(int(v) for v in getattr(self, name))
            if not vals:
                raise ValidationError(f"{name} must be non-empty")
            if len(set(vals)) != len(vals):
                raise ValidationError(f"{name} contains duplicate labels")
            if min(vals) < 0:
                raise ValidationError(f"{name} contains negative labels")
            object.__setattr__(self, name, vals)
        e = set(self.L_e)
        if not set(self.L_p) <= e:
            raise ValidationError("L_p must be a subset of L_e")
        if not set(self.L_u) <= e:
            raise ValidationError("L_u must be a subset of L_e")
        if not (set(self.L_p) & set(self.L_u)):
            raise ValidationError("L_p and L_u must overlap")

    def kind(self) -> ShiftKind:
        p, u = set(self.L_p), set(self.L_u)
        if p == u:
            return ShiftKind.CLOSED
        if u < p:
            return ShiftKind.PARTIAL
        if p < u:
            return ShiftKind.OPEN
        return ShiftKind.OPEN_PARTIAL

    def to_json(self) -> dict:
        return {"L_p": list(self.L_p), "L_u": list(self.L_u), "L_e": list(self.L_e)}

    @classmethod
    def from_json(cls, obj: dict) -> "ShiftSpec":
        try:
            return cls(tuple(obj["L_p"]), tuple(obj["L_u"]), tuple(obj["L_e"]))
        except KeyError as err:
            raise ValidationError(f"shift spec missing key {err}") from err


def save_shift_spec(path, spec: ShiftSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), sort_keys=True) + "\n")


def load_shift_spec(path) -> ShiftSpec:
    return ShiftSpec.from_json(json.loads(Path(path).read_text()))


def make_shift_spec(kind: ShiftKind | str, n_p: int, n_e: int,
                    n_extra_train: int = 0, n_drop_train: int = 0) -> ShiftSpec:
    """Build the canonical contiguous split for one shift kind.

    L_p is always [0, n_p) and L_e is [0, n_e). The training label space:

        closed        L_u = [0, n_p)
        partial       L_u = [0, n_p - n_drop_train)
        open          L_u = [0, n_p + n_extra_train)
        open-partial  L_u = [0, n_p - n_drop_train) + [n_p, n_p + n_extra_train)

    Extra classes must fit inside L_e; drops must leave L_u non-empty.
    """
    kind = ShiftKind(kind)
    if n_p < 1 or n_e < n_p:
        raise ValidationError(f"need 1 <= n_p <= n_e, got n_p={n_p} n_e={n_e}")
    if n_extra_train < 0 or n_drop_train < 0:
        raise ValidationError("class counts must be non-negative")
    wants_extra = kind in (ShiftKind.OPEN, ShiftKind.OPEN_PARTIAL)
    wants_drop = kind in (ShiftKind.PARTIAL, ShiftKind.OPEN_PARTIAL)
    if wants_extra and n_extra_train < 1:
        raise ValidationError(f"{kind.value} shift needs n_extra_train >= 1")
    if wants_drop and n_drop_train < 1:
        raise ValidationError(f"{kind.value} shift needs n_drop_train >= 1")
    if not wants_extra and n_extra_train:
        raise ValidationError(f"{kind.value} shift does not take extra train classes")
    if not wants_drop and n_drop_train:
        raise ValidationError(f"{kind.value} shift does not drop train classes")
    if wants_drop and n_drop_train >= n_p:
        raise ValidationError("n_drop_train must leave at least one shared class")
    if wants_extra and n_p + n_extra_train > n_e:
        raise ValidationError("extra train classes must fit inside L_e")

    kept = n_p - n_drop_train if wants_drop else n_p
    l_u = list(range(kept))
    if wants_extra:
        l_u += list(range(n_p, n_p + n_extra_train))
    return ShiftSpec(tuple(range(n_p)), tuple(l_u), tuple(range(n_e)))


def filter_by_labels(cache: EmbeddingCache, labels) -> EmbeddingCache:
    """Rows whose label is in `labels`, original order preserved."""
    keep = set(int(v) for v in labels)
    mask = np.fromiter((int(l) in keep for l in cache.labels),
                       dtype=bool, count=cache.n)
    if not mask.any():
        raise ValidationError("label filter selects no rows")
    return cache.take(np.nonzero(mask)[0])


def select_training_subset(cache: EmbeddingCache, spec: ShiftSpec) -> EmbeddingCache:
    """Training pool for a shift: rows with label in L_u, order preserved.

    Labels stay attached for bookkeeping but the trainer never reads them.
    """
    try:
        return filter_by_labels(cache, spec.L_u)
    except ValidationError as err:
        raise ValidationError("no training samples in L_u") from err


def select_prototypes(cache: EmbeddingCache, labels) -> EmbeddingCache:
    """Prototype rows for the given labels, ordered to match `labels`.

    The result's row i is the prototype of labels[i]; every requested label
    must appear exactly once in the cache.
    """
    order = {int(l): i for i, l in enumerate(cache.labels)}
    if len(order) != cache.n:
        raise ValidationError("prototype cache has duplicate labels")
    try:
        idx = np.array([order[int(v)] for v in labels], dtype=np.int64)
    except KeyError as err:
        raise ValidationError(f"prototype cache missing class {err}") from err
    return cache.take(idx)
