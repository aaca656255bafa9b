"""Evaluation: closed-set accuracy, outlier detection, and joint curves.

The evaluation set mixes classes the head knows (labels in the predefined
list) with classes it cannot express. Accuracy is macro-averaged over
known classes present in the set; detection quality is the exact
Mann-Whitney AUC of the confidence score with ties credited 0.5. The
OS/HOS curves scan a threshold: samples scoring below it are predicted
"unknown", giving C known per-class accuracies plus one unknown-class
accuracy per threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .datamodel import EmbeddingCache, ShiftSpec
from .model import ModelState, mcm_score, predict_class, predict_probs
from .validation import ValidationError, check_labels, check_vector


def split_eval(cache: EmbeddingCache, spec: ShiftSpec) -> tuple[np.ndarray, np.ndarray]:
    """Partition evaluation rows into (known, outlier) index arrays.

    Known rows carry labels in both L_e and L_p; outlier rows carry labels
    in L_e but not L_p. Labels outside L_e are a caller error.
    """
    in_e = set(spec.L_e)
    in_p = set(spec.L_p)
    labels = [int(l) for l in cache.labels]
    bad = sorted(set(labels) - in_e)
    if bad:
        raise ValidationError(f"evaluation cache has labels outside L_e: {bad[:5]}")
    id_idx = np.array([i for i, l in enumerate(labels) if l in in_p], dtype=np.int64)
    ood_idx = np.array([i for i, l in enumerate(labels) if l not in in_p], dtype=np.int64)
    return id_idx, ood_idx


def per_class_accuracy(preds, labels, classes) -> tuple[dict[int, float], float]:
    """Accuracy per class and its macro average.

    Classes absent from `labels` are skipped rather than counted as zero;
    an entirely disjoint class list is an error.
    """
    preds = check_labels(preds, name="preds")
    labels = check_labels(labels, size=preds.shape[0], name="labels")
    out: dict[int, float] = {}
    for c in classes:
        c = int(c)
        mask = labels == c
        if not mask.any():
            continue
        out[c] = float(np.mean(preds[mask] == c))
    if not out:
        raise ValidationError("no requested class appears in labels")
    return out, float(np.mean(list(out.values())))


def auc(id_scores, ood_scores) -> float:
    """Exact probability that a known sample outscores an outlier.

    Rank-based Mann-Whitney statistic; tied pairs count half. Equals the
    brute-force pair count exactly, in O(n log n).
    """
    pos = check_vector(id_scores, name="id_scores")
    neg = check_vector(ood_scores, name="ood_scores")
    if pos.size < 1 or neg.size < 1:
        raise ValidationError("AUC undefined: needs at least one score on each side")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    r_pos = float(ranks[: pos.size].sum())
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def detect(scores, threshold: float) -> np.ndarray:
    """Known-class flag per sample: score >= threshold."""
    arr = check_vector(scores, name="scores")
    return arr >= threshold


def default_lambda_grid(scores, n: int = 101) -> np.ndarray:
    """Evenly spaced quantiles of the pooled scores."""
    arr = check_vector(scores, name="scores")
    return np.quantile(arr, np.linspace(0.0, 1.0, n))


def os_hos_curve(preds, labels, scores, spec: ShiftSpec,
                 lambdas) -> tuple[list[tuple[float, float]], list[tuple[float, float]]]:
    """OS and HOS as functions of the detection threshold.

    At each threshold, below-threshold samples are predicted "unknown".
    OS averages the per-class accuracies of the known classes present in
    the known partition together with the unknown-class accuracy (C+1
    terms). HOS is the harmonic mean of the known-class average and the
    unknown accuracy, zero when either side is zero.
    """
    preds = check_labels(preds, name="preds")
    labels = check_labels(labels, size=preds.shape[0], name="labels")
    scores = check_vector(scores, size=preds.shape[0], name="scores")
    lambdas = check_vector(lambdas, name="lambdas")

    in_p = set(spec.L_p)
    id_mask = np.fromiter((int(l) in in_p for l in labels), dtype=bool,
                          count=labels.shape[0])
    ood_mask = ~id_mask
    if not ood_mask.any():
        raise ValidationError("OS/HOS needs outlier samples in the evaluation set")
    known = sorted(set(int(l) for l in labels[id_mask]))
    if not known:
        raise ValidationError("OS/HOS needs known samples in the evaluation set")

    os_points: list[tuple[float, float]] = []
    hos_points: list[tuple[float, float]] = []
    for lam in lambdas:
        flag = scores >= lam
        accs = []
        for c in known:
            mask = labels == c
            accs.append(float(np.mean(flag[mask] & (preds[mask] == c))))
        unk = float(np.mean(~flag[ood_mask]))
        os_val = (sum(accs) + unk) / (len(known) + 1)
        known_avg = sum(accs) / len(known)
        hos_val = 0.0 if known_avg == 0.0 or unk == 0.0 else (
            2.0 * known_avg * unk / (known_avg + unk)
        )
        os_points.append((float(lam), os_val))
        hos_points.append((float(lam), hos_val))
    return os_points, hos_points


@dataclass(frozen=True)
class EvalReport:
    """Everything one evaluation produces, JSON-serializable."""

    per_class_acc: dict[int, float]
    acc: float
    global_acc: float
    auc: float | None
    counts: dict[str, int]
    os_curve: list[tuple[float, float]] = field(default_factory=list)
    hos_curve: list[tuple[float, float]] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["per_class_acc"] = {str(k): v for k, v in self.per_class_acc.items()}
        obj["os_curve"] = [list(p) for p in self.os_curve]
        obj["hos_curve"] = [list(p) for p in self.hos_curve]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(
            per_class_acc={int(k): float(v) for k, v in obj["per_class_acc"].items()},
            acc=float(obj["acc"]),
            global_acc=float(obj["global_acc"]),
            auc=None if obj["auc"] is None else float(obj["auc"]),
            counts={str(k): int(v) for k, v in obj["counts"].items()},
            os_curve=[(float(a), float(b)) for a, b in obj.get("os_curve", [])],
            hos_curve=[(float(a), float(b)) for a, b in obj.get("hos_curve", [])],
            provenance=dict(obj.get("provenance", {})),
        )


def save_report(path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")


def load_report(path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text()))


def curves_to_csv(path, os_curve, hos_curve) -> None:
    lines = ["lambda,os,hos"]
    for (lam, os_val), (_, hos_val) in zip(os_curve, hos_curve):
        lines.append(f"{lam:.10g},{os_val:.10g},{hos_val:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate(state: ModelState, test: EmbeddingCache, spec: ShiftSpec, *,
             include_curves: bool = False, lambdas=None,
             provenance: dict | None = None) -> EvalReport:
    """Score a model state on an evaluation cache under a shift spec.

    The head must hold one prototype per predefined class in L_p order;
    predicted head indices are mapped back through L_p so they live in the
    cache's label space. AUC and curves are skipped (None / empty) when the
    evaluation set has no outlier side.
    """
    if state.head.n_classes != len(spec.L_p):
        raise ValidationError(
            f"head has {state.head.n_classes} classes but L_p lists {len(spec.L_p)}"
        )
    id_idx, ood_idx = split_eval(test, spec)
    if id_idx.size == 0:
        raise ValidationError("evaluation cache has no known-class samples")

    probs = predict_probs(state, test.features)
    preds = np.asarray(spec.L_p, dtype=np.int64)[predict_class(probs)]
    scores = mcm_score(probs)
    labels = test.labels

    known_classes = sorted(set(spec.L_p) & set(int(l) for l in labels[id_idx]))
    per_class, macro = per_class_accuracy(preds[id_idx], labels[id_idx], known_classes)
    global_acc = float(np.mean(preds[id_idx] == labels[id_idx]))

    auc_val: float | None = None
    os_curve: list[tuple[float, float]] = []
    hos_curve: list[tuple[float, float]] = []
    if ood_idx.size > 0:
        auc_val = auc(scores[id_idx], scores[ood_idx])
        if include_curves:
            grid = default_lambda_grid(scores) if lambdas is None else np.asarray(lambdas)
            os_curve, hos_curve = os_hos_curve(preds, labels, scores, spec, grid)

    return EvalReport(
        per_class_acc=per_class,
        acc=macro,
        global_acc=global_acc,
        auc=auc_val,
        counts={"id": int(id_idx.size), "ood": int(ood_idx.size)},
        os_curve=os_curve,
        hos_curve=hos_curve,
        provenance=provenance or {},
    )
