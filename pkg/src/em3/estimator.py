"""scikit-learn style wrapper around the model and trainer.

``X`` is an :class:`~em3.data.ExampleSet` (a view of examples in one
generated dataset) because each example is a user, a candidate item, a
behaviour sequence and context, not a flat feature row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cache import build_offline_cache
from .data import ExampleSet
from .encoders import StubEncoder
from .exceptions import DataError
from .metrics import auc
from .model import EM3Model, ModelConfig
from .training import Trainer, TrainConfig, predict


def check_examples(X) -> ExampleSet:
    if not isinstance(X, ExampleSet):
        raise TypeError(f"X must be an ExampleSet, got {type(X).__name__}")
    if len(X) == 0:
        raise DataError("X holds no examples")
    return X


def check_labels(X: ExampleSet, y) -> np.ndarray:
    labels = X.labels
    if y is None:
        return labels
    y = np.asarray(y)
    if y.shape != labels.shape:
        raise DataError(f"y has shape {y.shape} but X has {labels.shape[0]} examples")
    if not np.array_equal(y, labels):
        raise DataError("y disagrees with the labels stored alongside X")
    return labels


class EM3Ranker(ClassifierMixin, BaseEstimator):
    """Click-through ranker with fused multimodal item content.

    Every hyperparameter is a flat constructor argument so that
    ``get_params``/``set_params``/``clone`` work unchanged.
    """

    def __init__(self, d=32, n_queries=2, n_layers=1, n_heads=4, fusion_mode="standard", visual_mode="video",
                 use_text=True, use_item_content=True, use_user_interest=True, alpha=0.1, tau=0.1,
                 n_negatives=None, lora_rank=4, batch_size=256, lr=1e-3, epochs=2, max_steps=None,
                 n_warm=20, n_long=50, lora_switch=0.5, encoder_seed=0, random_state=0):
        self.d = d
        self.n_queries = n_queries
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.fusion_mode = fusion_mode
        self.visual_mode = visual_mode
        self.use_text = use_text
        self.use_item_content = use_item_content
        self.use_user_interest = use_user_interest
        self.alpha = alpha
        self.tau = tau
        self.n_negatives = n_negatives
        self.lora_rank = lora_rank
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.max_steps = max_steps
        self.n_warm = n_warm
        self.n_long = n_long
        self.lora_switch = lora_switch
        self.encoder_seed = encoder_seed
        self.random_state = random_state

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        mc = ModelConfig(d=self.d, n_queries=self.n_queries, n_layers=self.n_layers, n_heads=self.n_heads,
                         fusion_mode=self.fusion_mode, visual_mode=self.visual_mode, use_text=self.use_text,
                         use_item_content=self.use_item_content, use_user_interest=self.use_user_interest,
                         alpha=self.alpha, tau=self.tau, n_negatives=self.n_negatives, lora_rank=self.lora_rank)
        tc = TrainConfig(batch_size=self.batch_size, lr=self.lr, epochs=self.epochs, max_steps=self.max_steps,
                         n_warm=self.n_warm, n_long=self.n_long, lora_switch=self.lora_switch,
                         seed=int(self.random_state))
        return mc, tc

    def fit(self, X, y=None):
        X = check_examples(X)
        check_labels(X, y)
        ds = X.dataset
        mc, tc = self._configs()
        encoder = StubEncoder(self.encoder_seed, ds.encoder_dims)
        self.features_ = build_offline_cache(ds.raw_items(), encoder, ds.config.m_max, ds.config.k_max)
        self.model_ = EM3Model(mc, ds.n_users, ds.n_items, ds.n_categories, ds.config.context_dim,
                               ds.encoder_dims, seed=int(self.random_state))
        trainer = Trainer(self.model_, self.features_, tc)
        self.history_ = trainer.fit(X)
        self.seq_len_ = trainer.seq_len
        self.dataset_ = ds
        self.classes_ = np.array([0, 1])
        return self

    def _check_same_dataset(self, X: ExampleSet) -> None:
        if X.dataset is not self.dataset_:
            raise DataError("X must come from the dataset the ranker was fitted on")

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_examples(X)
        self._check_same_dataset(X)
        p = predict(self.model_, X, self.features_, self.seq_len_)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X) -> np.ndarray:
        p = np.clip(self.predict_proba(X)[:, 1], 1e-15, 1 - 1e-15)
        return np.log(p) - np.log1p(-p)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def score(self, X, y=None, sample_weight=None) -> float:
        """Test AUC (the ranking metric), not accuracy."""
        X = check_examples(X)
        labels = check_labels(X, y)
        return auc(self.predict_proba(X)[:, 1], labels)
