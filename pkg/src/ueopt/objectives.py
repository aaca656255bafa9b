"""Entropy objectives for unsupervised adaptation with unknown outliers.

The training pool may mix samples from the predefined classes with
samples from classes the head cannot express. Plain entropy minimization
makes the model confident on everything, outliers included. The remedy
implemented here weights each sample by the frozen reference model's
confidence w (its maximum softmax probability) and pulls in two
directions at once:

    minimize   sum_i  wt_i * H(p_i)              confident samples sharpen
    maximize   H( sum_i rt_i * p_i )             doubtful samples diversify

where wt is w normalized to sum 1 and rt applies a decreasing transform
(see WEIGHT_FNS) before the same normalization, so low-confidence samples
dominate the second term. With all weights equal the objective reduces
exactly to information maximization: mean entropy minus entropy of the
mean prediction.

`loss_ueo_sample` is the sample-level variant that subtracts the weighted
mean of individual entropies instead of the entropy of the weighted mean
prediction; it is kept for ablations.

Entropies use natural log. Weights are treated as constants: gradients
flow through predictions only, never through w.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import xlogy

from .model import (AdapterParams, ClassHead, ForwardCache, ModelState,
                    forward_cache, projection_matrix)
from .validation import ValidationError, check_probs, check_vector

METHODS = ("ueo", "ueo_sample", "entmin", "infomax", "ueo_oracle")

# Decreasing transforms of confidence, applied before reverse-direction
# normalization. Keys are the wire names used in configs.
WEIGHT_FNS = {
    "inv": lambda w: 1.0 / w,
    "inv_sqrt": lambda w: np.sqrt(1.0 / w),
    "inv_sq": lambda w: (1.0 / w) ** 2,
    "one_minus": lambda w: 1.0 - w,
    "one_minus_sqrt": lambda w: np.sqrt(1.0 - w),
    "one_minus_sq": lambda w: (1.0 - w) ** 2,
}


class NumericalError(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


@dataclass(frozen=True)
class LossConfig:
    """Objective selection: method, confidence transform, trade-off beta,
    and the clip epsilon keeping weight transforms finite."""

    method: str = "ueo"
    weight_fn: str = "inv"
    beta: float = 1.0
    eps_w: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.weight_fn not in WEIGHT_FNS:
            raise ValidationError(
                f"unknown weight_fn {self.weight_fn!r}, expected one of {tuple(WEIGHT_FNS)}"
            )
        if not (self.beta >= 0.0):
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not (0.0 < self.eps_w <= 0.5):
            raise ValidationError(f"eps_w must be in (0, 0.5], got {self.eps_w}")

    def to_json(self) -> dict:
        return {"method": self.method, "weight_fn": self.weight_fn,
                "beta": self.beta, "eps_w": self.eps_w}

    @classmethod
    def from_json(cls, obj: dict) -> "LossConfig":
        known = {"method", "weight_fn", "beta", "eps_w"}
        extra = set(obj) - known
        if extra:
            raise ValidationError(f"unknown loss config keys {sorted(extra)}")
        return cls(**obj)


def entropy(p) -> float | np.ndarray:
    """Shannon entropy in nats; rows of a matrix are treated independently.

    Zero probabilities contribute zero (the 0*log(0) convention).
    """
    arr = check_probs(p)
    h = -xlogy(arr, arr).sum(axis=-1)
    return float(h) if arr.ndim == 1 else h


def clip_weights(w, eps_w: float = 1e-6) -> np.ndarray:
    """Clip confidences into [eps_w, 1 - eps_w].

    The upper clip matters for the one_minus family, where a batch of
    exactly-saturated confidences would otherwise zero the normalizer.
    """
    arr = check_vector(w, lo=0.0, hi=1.0, name="weights")
    if arr.size < 1:
        raise ValidationError("weights must be non-empty")
    return np.clip(arr, eps_w, 1.0 - eps_w)


def normalized_weights(w, weight_fn: str = "inv", direction: str = "forward",
                       eps_w: float = 1e-6) -> np.ndarray:
    """Normalize confidences to a distribution over the batch.

    direction="forward" returns w / sum(w); direction="reverse" applies the
    decreasing transform first, so low-confidence samples get large mass.
    """
    if direction not in ("forward", "reverse"):
        raise ValidationError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    arr = clip_weights(w, eps_w)
    if direction == "reverse":
        arr = WEIGHT_FNS[weight_fn](arr)
    return arr / arr.sum()


def oracle_weights(labels, predefined) -> np.ndarray:
    """Binary confidence from ground truth: 1 inside the predefined label
    list, 0 outside. Used only by the oracle upper-bound method."""
    keep = set(int(v) for v in predefined)
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1:
        raise ValidationError("labels must be 1-D")
    return np.array([1.0 if int(l) in keep else 0.0 for l in lab])


def _weighted_pair(w, cfg: LossConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    wv = check_vector(w, size=n, lo=0.0, hi=1.0, name="weights")
    if n == 1:
        warnings.warn("batch of size 1: both weightings collapse to the same sample",
                      RuntimeWarning, stacklevel=3)
    forward = normalized_weights(wv, cfg.weight_fn, "forward", cfg.eps_w)
    reverse = normalized_weights(wv, cfg.weight_fn, "reverse", cfg.eps_w)
    return forward, reverse


def loss_entmin(probs) -> float:
    """Mean per-sample entropy."""
    arr = check_probs(probs)
    arr = arr[None, :] if arr.ndim == 1 else arr
    return float(np.mean(-xlogy(arr, arr).sum(axis=1)))


def loss_infomax(probs) -> float:
    """Mean entropy minus entropy of the mean prediction (lower is better:
    confident individually, diverse collectively)."""
    arr = check_probs(probs)
    arr = arr[None, :] if arr.ndim == 1 else arr
    mean_h = float(np.mean(-xlogy(arr, arr).sum(axis=1)))
    marginal = arr.mean(axis=0)
    return mean_h - float(-xlogy(marginal, marginal).sum())


def loss_ueo(probs, w, cfg: LossConfig) -> float:
    """Confidence-weighted entropy minus beta times the entropy of the
    reverse-weighted marginal prediction."""
    arr = check_probs(probs)
    arr = arr[None, :] if arr.ndim == 1 else arr
    forward, reverse = _weighted_pair(w, cfg, arr.shape[0])
    h = -xlogy(arr, arr).sum(axis=1)
    marginal = reverse @ arr
    return float(forward @ h) - cfg.beta * float(-xlogy(marginal, marginal).sum())


def loss_ueo_sample(probs, w, cfg: LossConfig) -> float:
    """Sample-level variant: subtracts the reverse-weighted mean of
    individual entropies rather than the entropy of a pooled prediction."""
    arr = check_probs(probs)
    arr = arr[None, :] if arr.ndim == 1 else arr
    forward, reverse = _weighted_pair(w, cfg, arr.shape[0])
    h = -xlogy(arr, arr).sum(axis=1)
    return float((forward - cfg.beta * reverse) @ h)


def loss_value(probs, w, cfg: LossConfig) -> float:
    """Dispatch on cfg.method. The oracle method shares the main objective;
    it differs only in where its weights come from."""
    if cfg.method == "entmin":
        return loss_entmin(probs)
    if cfg.method == "infomax":
        return loss_infomax(probs)
    if cfg.method == "ueo_sample":
        return loss_ueo_sample(probs, w, cfg)
    return loss_ueo(probs, w, cfg)


def _safe_log(x: np.ndarray) -> np.ndarray:
    # Floor at the smallest normal double: columns with zero mass keep a
    # finite log and are silenced later by multiplication with p = 0.
    return np.log(np.maximum(x, np.finfo(np.float64).tiny))


def _dloss_dprobs(fc: ForwardCache, w, cfg: LossConfig) -> np.ndarray:
    """Partial derivatives of the selected loss w.r.t. each probability.

    Uses the cached stable log-probabilities so saturated rows stay finite.
    """
    p, logp = fc.probs, fc.log_probs
    n = p.shape[0]
    if cfg.method == "entmin":
        return -(logp + 1.0) / n
    if cfg.method == "infomax":
        marginal = p.mean(axis=0)
        return (_safe_log(marginal)[None, :] - logp) / n
    forward, reverse = _weighted_pair(w, cfg, n)
    if cfg.method == "ueo_sample":
        return -((forward - cfg.beta * reverse)[:, None]) * (logp + 1.0)
    marginal = reverse @ p
    return (
        -forward[:, None] * (logp + 1.0)
        + cfg.beta * reverse[:, None] * (_safe_log(marginal) + 1.0)[None, :]
    )


@dataclass(frozen=True)
class GradResult:
    """Loss value and its gradient w.r.t. each trainable block."""

    loss: float
    scale: np.ndarray
    shift: np.ndarray
    context: np.ndarray
    mean_entropy: float


def grad(cfg: LossConfig, state: ModelState, batch, w=None) -> GradResult:
    """Analytic gradient of the selected loss w.r.t. (scale, shift, context).

    The chain runs backwards through the softmax, the cosine logits, both
    unit normalizations, the image affine map, and the context projection.
    Weights w are constants; methods that need none accept w=None.
    """
    fc = forward_cache(state, batch)
    n = fc.probs.shape[0]
    if cfg.method in ("entmin", "infomax"):
        w = np.ones(n) if w is None else w
    elif w is None:
        raise ValidationError(f"method {cfg.method!r} requires confidence weights")

    x = np.asarray(batch, dtype=np.float64)
    loss = loss_value(fc.probs, w, cfg)
    mean_entropy = float(np.mean(-xlogy(fc.probs, fc.probs).sum(axis=1)))

    dprobs = _dloss_dprobs(fc, w, cfg)
    # softmax: dz = p * (dp - sum_j dp_j p_j)
    dlogits = fc.probs * (dprobs - (dprobs * fc.probs).sum(axis=1, keepdims=True))
    tau = state.head.tau
    dimages = (dlogits @ fc.prototypes) / tau
    dprotos = (dlogits.T @ fc.images) / tau
    # unit normalization: du = (dv - (v . dv) v) / |u|   with v = u / |u|
    dpre_img = (dimages - (dimages * fc.images).sum(axis=1, keepdims=True) * fc.images)
    dpre_img /= fc.image_norms
    g_scale = (dpre_img * x).sum(axis=0)
    g_shift = dpre_img.sum(axis=0)
    dpre_proto = (dprotos - (dprotos * fc.prototypes).sum(axis=1, keepdims=True) * fc.prototypes)
    dpre_proto /= fc.proto_norms
    # the context offset is shared by every class, so contributions add
    g_context = (state.head.projection.T @ dpre_proto.sum(axis=0)).reshape(
        state.adapter.context.shape
    )

    for name, g in (("scale", g_scale), ("shift", g_shift), ("context", g_context)):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter group {name!r}")
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss value")
    return GradResult(loss, g_scale, g_shift, g_context, mean_entropy)


def finite_diff_grad(cfg: LossConfig, state: ModelState, batch, w=None,
                     step: float = 1e-5) -> GradResult:
    """Central finite differences through the full forward pass.

    Independent of `grad`: evaluates the loss at perturbed parameters only.
    Slow by construction; used as the correctness oracle.
    """
    n = np.asarray(batch).shape[0]
    if cfg.method in ("entmin", "infomax") and w is None:
        w = np.ones(n)

    def eval_at(adapter: AdapterParams) -> float:
        fc = forward_cache(replace(state, adapter=adapter, frozen_reference=False), batch)
        return loss_value(fc.probs, w, cfg)

    a = state.adapter
    grads = {}
    for name in ("scale", "shift", "context"):
        base = getattr(a, name)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for j in range(base.size):
            for sign in (1.0, -1.0):
                bumped = base.copy().reshape(-1)
                bumped[j] += sign * step
                adapter = replace(a, **{name: bumped.reshape(base.shape)})
                flat[j] += sign * eval_at(adapter)
        grads[name] = g / (2.0 * step)
    fc = forward_cache(state, batch)
    loss = loss_value(fc.probs, w, cfg)
    mean_entropy = float(np.mean(-xlogy(fc.probs, fc.probs).sum(axis=1)))
    return GradResult(loss, grads["scale"], grads["shift"], grads["context"], mean_entropy)


@dataclass(frozen=True)
class GradCheckEntry:
    method: str
    weight_fn: str
    trials: int
    max_rel_err: float


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    tol: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def ok(self) -> bool:
        return all(e.max_rel_err < self.tol for e in self.entries)


def _relative_errors(a: GradResult, b: GradResult, fd_step: float = 1e-5) -> float:
    """Worst per-coordinate relative error between two gradients.

    Two floors keep the comparison meaningful. Coordinates far below the
    gradient's overall scale are measured against 1e-3 of that scale, since
    finite differences on them carry truncation noise from the dominant
    coordinates. Everything is additionally measured against the resolution
    of the central-difference oracle itself: each loss evaluation carries
    rounding of order eps * |loss|, so differences below eps * |loss| / (2h)
    are indistinguishable from zero. On a saturated low-temperature instance
    the whole gradient sits under that noise and the comparison reports
    agreement instead of amplifying rounding jitter.
    """
    pairs = [(a.scale, b.scale), (a.shift, b.shift), (a.context, b.context)]
    gmax = max(
        (max(float(np.abs(x).max()), float(np.abs(y).max()))
         for x, y in pairs if x.size),
        default=0.0,
    )
    eps = float(np.finfo(np.float64).eps)
    lscale = max(1.0, abs(a.loss), abs(b.loss))
    fd_noise = eps * lscale / (2.0 * fd_step)
    # 1e5: headroom so discrepancies a few times the noise still read as
    # well under the 1e-4 tolerance
    floor = max(1e-3 * gmax, 1e5 * fd_noise, 1e-10)
    worst = 0.0
    for x, y in pairs:
        if not x.size:
            continue
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float((np.abs(x - y) / denom).max()))
    return worst


def check_gradients(seed: int = 0, trials: int = 20, *, methods=METHODS,
                    weight_fns=tuple(WEIGHT_FNS), fd_step: float = 1e-5,
                    tol: float = 1e-4, grad_fn=grad) -> GradCheckReport:
    """Compare `grad_fn` against finite differences on random small problems.

    Every method is crossed with every weight transform even though two of
    the methods ignore the transform; the redundancy is cheap and catches
    dispatch mistakes. `grad_fn` is injectable so the check itself can be
    shown to fail on a corrupted gradient.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for method in methods:
        for weight_fn in weight_fns:
            worst = 0.0
            for _ in range(trials):
                n = int(rng.integers(2, 9))
                n_classes = int(rng.integers(2, 6))
                d = int(rng.integers(4, 17))
                m = int(rng.integers(0, 4))
                k = int(rng.integers(1, d // m + 1)) if m > 0 else 0
                tau = float(rng.choice([0.01, 0.02, 0.05, 0.1]))
                protos = rng.standard_normal((n_classes, d))
                protos /= np.linalg.norm(protos, axis=1, keepdims=True)
                head = ClassHead(protos, projection_matrix(d, m * k, int(rng.integers(1 << 31))),
                                 tau=tau)
                adapter = AdapterParams(
                    rng.uniform(0.5, 1.5, size=d),
                    rng.normal(0.0, 0.3, size=d),
                    rng.normal(0.0, 0.3, size=(m, k)),
                )
                state = ModelState(head, adapter)
                batch = rng.normal(0.0, 1.0, size=(n, d))
                if method == "ueo_oracle":
                    w = rng.integers(0, 2, size=n).astype(np.float64)
                else:
                    w = rng.uniform(0.05, 0.95, size=n)
                cfg = LossConfig(method=method, weight_fn=weight_fn,
                                 beta=float(rng.choice([0.5, 1.0, 2.0])))
                analytic = grad_fn(cfg, state, batch, w)
                numeric = finite_diff_grad(cfg, state, batch, w, step=fd_step)
                worst = max(worst, _relative_errors(analytic, numeric, fd_step))
            entries.append(GradCheckEntry(method, weight_fn, trials, worst))
    return GradCheckReport(tuple(entries), tol)


def save_loss_config(path, cfg: LossConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), sort_keys=True) + "\n")


def load_loss_config(path) -> LossConfig:
    return LossConfig.from_json(json.loads(Path(path).read_text()))
