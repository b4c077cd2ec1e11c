"""Scikit-learn style estimators wrapping the training regimes.

`TripletEmbedder` fits the contrastive encoder and exposes embeddings via
`transform`; `QualityRegressor` predicts quality scores either end-to-end
(L2) or with the two-step frozen-encoder recipe. Both follow the sklearn
init/get_params contract so they compose with pipelines and model selection.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import LabeledSample
from .losses import MarginSpec
from .model import EncoderConfig, QualityModel, ReferenceSet, nmr_scores
from .training import (
    TrainConfig,
    train_l2_baseline,
    train_nr_head,
    train_offline,
    train_triplet_encoder,
)
from .validation import as_sequences, check_labels

__all__ = ["TripletEmbedder", "QualityRegressor"]


def _as_samples(xs, y) -> list[LabeledSample]:
    return [
        LabeledSample(id=f"s{i:06d}", features=x, mos=float(v), degradation="unknown")
        for i, (x, v) in enumerate(zip(xs, y))
    ]


def _holdout_split(xs, y, fraction: float, seed: int):
    n = len(xs)
    n_val = max(int(round(fraction * n)), 1)
    if n_val >= n:
        raise ValueError("validation fraction leaves no training data")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    tr = [i for i in range(n) if i not in val_idx]
    va = [i for i in range(n) if i in val_idx]
    return [xs[i] for i in tr], y[tr], [xs[i] for i in va], y[va]


def _default_refs(xs, y, count: int = 20) -> list[np.ndarray]:
    # highest-rated training samples stand in for unpaired clean references
    order = np.argsort(y)[::-1]
    return [xs[i] for i in order[: max(1, min(count, len(xs)))]]


class _FitMixin:
    """Shared fit plumbing: resolves sequences, splits and reference samples."""

    def _prepare(self, X, y, refs, X_val, y_val):
        xs = as_sequences(X)
        y = check_labels(y, len(xs))
        if (X_val is None) != (y_val is None):
            raise ValueError("pass X_val and y_val together")
        if X_val is not None:
            xs_val = as_sequences(X_val, input_dim=xs[0].shape[1])
            y_val = check_labels(y_val, len(xs_val))
        else:
            xs, y, xs_val, y_val = _holdout_split(xs, y, self.val_fraction, self.random_state)
        ref_xs = (as_sequences(refs, input_dim=xs[0].shape[1]) if refs is not None
                  else _default_refs(xs, y))
        return xs, y, xs_val, y_val, ref_xs

    def _margin_spec(self, mode: str) -> MarginSpec:
        return MarginSpec(
            mode=mode, m=self.margin, kappa=self.kappa, sign_mode=self.sign_mode
        )

    def _train_config(self, loss_mode: str) -> TrainConfig:
        mode = "adaptive" if loss_mode == "triplet_adaptive" else "fixed"
        return TrainConfig(
            loss_mode=loss_mode,
            batch_size=self.batch_size,
            lr_encoder=self.lr_encoder,
            lr_head=self.lr_head,
            decay_factor=self.decay_factor,
            decay_patience_epochs=self.decay_patience_epochs,
            early_stop_patience=self.early_stop_patience,
            max_epochs=self.max_epochs,
            seed=self.random_state,
            margin=self._margin_spec(mode),
            reduction=self.reduction,
            max_frames=self.max_frames,
            anchors_per_epoch=self.anchors_per_epoch,
            per_anchor=self.per_anchor,
        )

    def _encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(
            input_dim=input_dim,
            hidden_dims=tuple(self.hidden_dims),
            embed_dim=self.embed_dim,
        )

    def _check_fitted(self):
        if getattr(self, "model_", None) is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")


class TripletEmbedder(_FitMixin, TransformerMixin, BaseEstimator):
    """Quality-ordered embeddings trained with a batch-all triplet loss.

    Parameters mirror `TrainConfig`; defaults are sized for small from-scratch
    encoders rather than finetuning. `transform` returns projection-layer
    embeddings; `score_samples` returns the mean distance to the fitted
    reference set (lower = closer to clean).
    """

    def __init__(self, hidden_dims=(32, 32), embed_dim=16, loss_mode="triplet_adaptive",
                 margin=0.5, kappa=4.0, sign_mode="intuitive", reduction="mean_active",
                 batch_size=128, lr_encoder=1e-3, lr_head=1e-3, max_epochs=60,
                 early_stop_patience=15, decay_factor=0.99, decay_patience_epochs=10,
                 max_frames=None, val_fraction=0.15, anchors_per_epoch=200,
                 per_anchor=10, random_state=0):
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.loss_mode = loss_mode
        self.margin = margin
        self.kappa = kappa
        self.sign_mode = sign_mode
        self.reduction = reduction
        self.batch_size = batch_size
        self.lr_encoder = lr_encoder
        self.lr_head = lr_head
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.decay_factor = decay_factor
        self.decay_patience_epochs = decay_patience_epochs
        self.max_frames = max_frames
        self.val_fraction = val_fraction
        self.anchors_per_epoch = anchors_per_epoch
        self.per_anchor = per_anchor
        self.random_state = random_state

    def fit(self, X, y, refs=None, X_val=None, y_val=None):
        if self.loss_mode not in ("triplet_adaptive", "triplet_fixed", "offline_triplet"):
            raise ValueError(f"unsupported loss_mode {self.loss_mode!r}")
        xs, y, xs_val, y_val, ref_xs = self._prepare(X, y, refs, X_val, y_val)
        config = dataclasses.replace(
            self._train_config(self.loss_mode),
            batch_size=min(self.batch_size, len(xs)),
        )
        enc_cfg = self._encoder_config(xs[0].shape[1])
        train = _as_samples(xs, y)
        val = _as_samples(xs_val, y_val)
        ref_samples = [
            LabeledSample(id=f"r{i:04d}", features=x, mos=5.0, degradation="clean")
            for i, x in enumerate(ref_xs)
        ]
        if self.loss_mode == "offline_triplet":
            result = train_offline(train, val, ref_samples, config, enc_cfg)
        else:
            result = train_triplet_encoder(train, val, ref_samples, config, enc_cfg)
        self.model_ = result.best_model
        self.train_result_ = result
        self.refs_ = ReferenceSet.from_model(self.model_, ref_xs, layer="projection")
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        xs = as_sequences(X, input_dim=self.model_.config.input_dim)
        return self.model_.embed(xs, layer="projection")

    def score_samples(self, X) -> np.ndarray:
        self._check_fitted()
        xs = as_sequences(X, input_dim=self.model_.config.input_dim)
        return nmr_scores(self.model_, xs, self.refs_)


class QualityRegressor(_FitMixin, RegressorMixin, BaseEstimator):
    """Continuous quality prediction from feature sequences.

    loss_mode "l2" trains encoder + score head end-to-end; the triplet modes
    pretrain the encoder contrastively, then fit the head on the frozen
    representations.
    """

    def __init__(self, hidden_dims=(32, 32), embed_dim=16, loss_mode="triplet_adaptive",
                 margin=0.5, kappa=4.0, sign_mode="intuitive", reduction="mean_active",
                 batch_size=128, lr_encoder=1e-3, lr_head=1e-3, max_epochs=60,
                 head_max_epochs=None, early_stop_patience=15, decay_factor=0.99,
                 decay_patience_epochs=10, max_frames=None, val_fraction=0.15,
                 anchors_per_epoch=200, per_anchor=10, random_state=0):
        self.hidden_dims = hidden_dims
        self.embed_dim = embed_dim
        self.loss_mode = loss_mode
        self.margin = margin
        self.kappa = kappa
        self.sign_mode = sign_mode
        self.reduction = reduction
        self.batch_size = batch_size
        self.lr_encoder = lr_encoder
        self.lr_head = lr_head
        self.max_epochs = max_epochs
        self.head_max_epochs = head_max_epochs
        self.early_stop_patience = early_stop_patience
        self.decay_factor = decay_factor
        self.decay_patience_epochs = decay_patience_epochs
        self.max_frames = max_frames
        self.val_fraction = val_fraction
        self.anchors_per_epoch = anchors_per_epoch
        self.per_anchor = per_anchor
        self.random_state = random_state

    def fit(self, X, y, refs=None, X_val=None, y_val=None):
        xs, y, xs_val, y_val, ref_xs = self._prepare(X, y, refs, X_val, y_val)
        train = _as_samples(xs, y)
        val = _as_samples(xs_val, y_val)
        enc_cfg = self._encoder_config(xs[0].shape[1])

        if self.loss_mode == "l2":
            config = dataclasses.replace(
                self._train_config("l2"), batch_size=min(self.batch_size, len(xs))
            )
            result = train_l2_baseline(train, val, config, enc_cfg)
            self.model_ = result.best_model
            self.pretrain_result_ = None
            self.head_result_ = result
        else:
            embedder = TripletEmbedder(**{
                k: v for k, v in self.get_params().items() if k != "head_max_epochs"
            })
            embedder.fit(X, y, refs=refs, X_val=X_val, y_val=y_val)
            head_cfg = dataclasses.replace(
                self._train_config(embedder.loss_mode if embedder.loss_mode != "offline_triplet"
                                   else "triplet_fixed"),
                batch_size=min(self.batch_size, len(xs)),
                max_epochs=self.head_max_epochs or self.max_epochs,
            )
            result = train_nr_head(embedder.model_, train, val, head_cfg)
            self.model_ = result.best_model
            self.pretrain_result_ = embedder.train_result_
            self.head_result_ = result
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        xs = as_sequences(X, input_dim=self.model_.config.input_dim)
        return self.model_.predict_mos_batch(xs, trainable=False).data[:, 0]
