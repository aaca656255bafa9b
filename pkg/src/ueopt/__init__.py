"""Unsupervised fine-tuning of frozen dual-encoder heads over cached embeddings.

The package adapts a lightweight surface (per-channel affine on image
embeddings plus a projected prompt-context offset on class prototypes) by
entropy optimization on an unlabeled pool that may contain samples from
classes outside the predefined list, then evaluates closed-set accuracy
and outlier detection under the four canonical label-space shifts.
"""

from .datamodel import (CacheFormatError, EmbeddingCache, ShiftKind, ShiftSpec,
                        filter_by_labels, load_cache, load_shift_spec,
                        make_shift_spec, save_cache, save_shift_spec,
                        select_prototypes, select_training_subset)
from .estimator import UEOClassifier
from .metrics import (EvalReport, auc, detect, evaluate, os_hos_curve,
                      per_class_accuracy, split_eval)
from .model import (AdapterParams, ClassHead, DegenerateVectorError, ModelState,
                    build_head, image_forward, load_adapter, mcm_score,
                    predict_class, predict_probs, save_adapter, text_prototypes)
from .objectives import (METHODS, WEIGHT_FNS, GradResult, LossConfig,
                         NumericalError, check_gradients, entropy,
                         finite_diff_grad, grad, loss_entmin, loss_infomax,
                         loss_ueo, loss_ueo_sample, loss_value,
                         normalized_weights, oracle_weights)
from .synth import SynthConfig, generate
from .trainer import PARAM_GROUPS, TrainConfig, TrainLog, cosine_lr, train
from .validation import ValidationError

__version__ = "0.1.0"

__all__ = [
    "AdapterParams", "CacheFormatError", "ClassHead", "DegenerateVectorError",
    "EmbeddingCache", "EvalReport", "GradResult", "LossConfig", "METHODS",
    "ModelState", "NumericalError", "PARAM_GROUPS", "ShiftKind", "ShiftSpec",
    "SynthConfig", "TrainConfig", "TrainLog", "UEOClassifier", "ValidationError",
    "WEIGHT_FNS", "auc", "build_head", "check_gradients", "cosine_lr", "detect",
    "entropy", "evaluate", "filter_by_labels", "finite_diff_grad", "generate",
    "grad", "image_forward", "load_adapter", "load_cache", "load_shift_spec",
    "loss_entmin", "loss_infomax", "loss_ueo", "loss_ueo_sample", "loss_value",
    "make_shift_spec", "mcm_score", "normalized_weights", "oracle_weights",
    "os_hos_curve", "per_class_accuracy", "predict_class", "predict_probs",
    "save_adapter", "save_cache", "save_shift_spec", "select_prototypes",
    "select_training_subset", "split_eval", "text_prototypes", "train",
]
