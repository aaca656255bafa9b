"""Estimator facade following the scikit-learn conventions.

The functional core (trainer, objectives, metrics) stays importable on its
own; this wrapper exists so the adapter drops into sklearn-style
pipelines: `fit` consumes an unlabeled feature matrix, `predict` /
`predict_proba` / `score_samples` run the adapted head, and `transform`
exposes the adapted image embeddings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import EmbeddingCache
from .model import image_forward, mcm_score, predict_class, predict_probs
from .objectives import LossConfig
from .trainer import PARAM_GROUPS, TrainConfig, train
from .validation import ValidationError, check_features


class UEOClassifier(TransformerMixin, BaseEstimator):
    """Unsupervised adapter over cached dual-encoder embeddings.

    Fitting runs universal entropy optimization: confidence-weighted
    entropy minimization plus reverse-weighted marginal entropy
    maximization, with confidences taken from the frozen initial head.
    The fitted model predicts one of the prototype classes per row and
    scores each row's maximum softmax probability for outlier detection.

    Parameters mirror TrainConfig / LossConfig; `prototypes` is the (C, d)
    matrix of class anchors (or an EmbeddingCache holding them).
    """

    def __init__(self, prototypes=None, method: str = "ueo",
                 weight_fn: str = "inv", beta: float = 1.0, eps_w: float = 1e-6,
                 lr: float = 1e-4, epochs: int = 50, batch_size: int = 64,
                 momentum: float = 0.0, shuffle: bool = True,
                 param_groups: tuple = PARAM_GROUPS, prompt_len: int = 4,
                 context_dim: int | None = None, tau: float = 0.01,
                 seed: int = 0):
        self.prototypes = prototypes
        self.method = method
        self.weight_fn = weight_fn
        self.beta = beta
        self.eps_w = eps_w
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.shuffle = shuffle
        self.param_groups = param_groups
        self.prompt_len = prompt_len
        self.context_dim = context_dim
        self.tau = tau
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.seed, param_groups=tuple(self.param_groups),
            loss=LossConfig(method=self.method, weight_fn=self.weight_fn,
                            beta=self.beta, eps_w=self.eps_w),
            shuffle=self.shuffle, momentum=self.momentum,
            prompt_len=self.prompt_len, context_dim=self.context_dim,
            tau=self.tau,
        )

    def _prototype_cache(self, d: int) -> EmbeddingCache:
        if self.prototypes is None:
            raise ValidationError("prototypes are required to fit")
        if isinstance(self.prototypes, EmbeddingCache):
            return self.prototypes
        protos = check_features(self.prototypes, n_features=d, name="prototypes")
        names = tuple(f"class_{i:03d}" for i in range(protos.shape[0]))
        return EmbeddingCache(protos, np.arange(protos.shape[0]), names,
                              source="estimator:prototypes")

    def fit(self, X, y=None, sample_weight=None):
        """Adapt on unlabeled rows X. y is accepted for pipeline
        compatibility and ignored; `sample_weight` carries the precomputed
        binary confidences required by the oracle method."""
        X = check_features(X, name="X")
        protos = self._prototype_cache(X.shape[1])
        pool = EmbeddingCache(X, np.zeros(X.shape[0], dtype=np.int64),
                              ("unlabeled",), source="estimator:pool")
        self.state_, self.log_ = train(pool, protos, self._train_config(),
                                       sample_weights=sample_weight)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.arange(protos.n, dtype=np.int64)
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise ValidationError("estimator is not fitted")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_features(X, n_features=self.n_features_in_, name="X")
        return predict_probs(self.state_, X)

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[predict_class(proba)]

    def score_samples(self, X) -> np.ndarray:
        """Confidence per row; higher means more in-distribution."""
        return mcm_score(self.predict_proba(X))

    def transform(self, X) -> np.ndarray:
        """Adapted unit-normalized embeddings."""
        self._check_fitted()
        X = check_features(X, n_features=self.n_features_in_, name="X")
        return image_forward(self.state_.adapter, X)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)
