"""scikit-learn compatible wrapper around the two-pathway trainer."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_labels, check_min_classes
from .backbone import BackboneConfig
from .data import AugmentConfig, Benchmark, DatasetManifest, LabeledSample
from .model import Components, LossWeights
from .sda import DEFAULT_GRID_SIDE, DEFAULT_SIGMA
from .trainer import TrainConfig, predict_logits, train


def _manifest(X: np.ndarray, y: np.ndarray, k: int, split: str) -> DatasetManifest:
    samples = [LabeledSample(X[i], int(y[i]), k) for i in range(len(y))]
    per_class = int(np.bincount(y, minlength=k).min()) if len(y) else 0
    return DatasetManifest(split, samples, k, max(per_class, 1), [str(c) for c in range(k)])


class GAEorClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Image classifier trained with saliency amplification and polar self-supervision.

    ``X`` is an image batch of shape (N, 3, S, S) (channels-last and uint8
    are accepted). Only the classification branch runs at predict time.
    ``transform`` returns the globally pooled backbone features.

    Parameters mirror :class:`~gaeor.trainer.TrainConfig`; the boolean
    ``sda``, ``gae``, ``gat`` and ``aux_warped_ce`` switches select the
    ablation variant (all False gives the plain classifier).
    """

    def __init__(
        self,
        epochs=60,
        batch_size=16,
        lr=0.05,
        momentum=0.9,
        weight_decay=1e-4,
        lr_decay=0.9,
        decay_interval_epochs=5,
        alpha=0.3,
        beta=0.5,
        gamma=0.5,
        aux_weight=1.0,
        sda=True,
        gae=True,
        gat=True,
        aux_warped_ce=True,
        cam_feedback=False,
        masked=True,
        sd_mode=True,
        cartesian_mode=False,
        gat_bidirectional=False,
        sigma=DEFAULT_SIGMA,
        grid_side=DEFAULT_GRID_SIDE,
        generator_lr_scale=0.03,
        stage_channels=(32, 64, 128, 256),
        stride_per_stage=(2, 2, 2, 2),
        augment=None,
        random_state=0,
        deterministic=True,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay = lr_decay
        self.decay_interval_epochs = decay_interval_epochs
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.aux_weight = aux_weight
        self.sda = sda
        self.gae = gae
        self.gat = gat
        self.aux_warped_ce = aux_warped_ce
        self.cam_feedback = cam_feedback
        self.masked = masked
        self.sd_mode = sd_mode
        self.cartesian_mode = cartesian_mode
        self.gat_bidirectional = gat_bidirectional
        self.sigma = sigma
        self.grid_side = grid_side
        self.generator_lr_scale = generator_lr_scale
        self.stage_channels = stage_channels
        self.stride_per_stage = stride_per_stage
        self.augment = augment
        self.random_state = random_state
        self.deterministic = deterministic

    def _train_config(self, image_size: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_decay=self.lr_decay,
            decay_interval_epochs=self.decay_interval_epochs,
            seed=int(self.random_state or 0),
            deterministic=self.deterministic,
            weights=LossWeights(self.alpha, self.beta, self.gamma, self.aux_weight),
            components=Components(
                sda=self.sda,
                gae=self.gae,
                gat=self.gat,
                aux_warped_ce=self.aux_warped_ce,
                cam_feedback=self.cam_feedback,
                masked=self.masked,
                sd_mode=self.sd_mode,
                cartesian_mode=self.cartesian_mode,
                gat_bidirectional=self.gat_bidirectional,
            ),
            backbone=BackboneConfig(
                stage_channels=tuple(self.stage_channels),
                stride_per_stage=tuple(self.stride_per_stage),
                image_size=image_size,
            ),
            augment=self.augment if self.augment is not None else AugmentConfig(),
            sigma=self.sigma,
            grid_side=self.grid_side,
            generator_lr_scale=self.generator_lr_scale,
        )

    def fit(self, X, y, eval_set=None):
        """Train from scratch. ``eval_set=(X_val, y_val)`` adds per-epoch test accuracy to ``history_``."""
        X = check_images(X)
        y = check_labels(y, len(X))
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        check_min_classes(self.classes_)
        k = len(self.classes_)
        self.image_size_ = X.shape[-1]
        config = self._train_config(self.image_size_)
        train_m = _manifest(X, y_enc, k, "train")
        if eval_set is not None:
            Xv = check_images(eval_set[0], self.image_size_)
            yv = check_labels(eval_set[1], len(Xv))
            unknown = np.setdiff1d(yv, self.classes_)
            if len(unknown):
                raise ValueError(f"eval_set has labels unseen in training: {unknown.tolist()}")
            test_m = _manifest(Xv, np.searchsorted(self.classes_, yv), k, "test")
        else:
            test_m = DatasetManifest("test", [], k, 1)
        result = train(config, Benchmark(train_m, test_m, train_m.class_names))
        self.model_ = result.model
        self.history_ = result.history
        self.config_ = config
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X, self.image_size_)
        return predict_logits(self.model_, X).numpy()

    def predict_proba(self, X) -> np.ndarray:
        return torch.softmax(torch.from_numpy(self.decision_function(X)), dim=1).numpy()

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        # argmax returns the first maximum, so ties go to the lowest class index
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Pooled classification-branch features, shape (N, C)."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.image_size_)
        model = self.model_
        was_training = model.training
        model.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(X), 64):
                feats = model.backbone.encode(torch.from_numpy(X[i : i + 64]))
                out.append(feats.mean(dim=(2, 3)))
        model.train(was_training)
        return torch.cat(out).numpy()

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ValueError("GAEorClassifier.fit_transform needs labels")
        return self.fit(X, y, **fit_params).transform(X)
