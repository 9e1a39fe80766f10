"""scikit-learn compatible wrappers.

These compose with :class:`sklearn.pipeline.Pipeline`, e.g. ::

    make_pipeline(ZNormalizer(), SelfSupervisedEncoder(epochs=200), OneNearestNeighbor())

Inputs are (N, T) or (N, C, T) arrays; see :func:`mixcl.validation.check_panel`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from mixcl import models
from mixcl.data import TimeSeriesDataset, handcrafted_features, znormalize
from mixcl.evaluation import one_nn_classify
from mixcl.pipeline import TrainConfig, encode, train_classifier, train_representation
from mixcl.rng import Rng
from mixcl.validation import check_panel, check_panel_shape

__all__ = [
    "ZNormalizer",
    "HandcraftedFeatures",
    "RawFeatures",
    "SelfSupervisedEncoder",
    "OneNearestNeighbor",
    "FCNClassifier",
]


def _as_dataset(X: np.ndarray, y=None, split: str = "train") -> TimeSeriesDataset:
    labels = np.zeros(X.shape[0], dtype=np.int64) if y is None else np.asarray(y, dtype=np.int64)
    vocab = {str(k): int(k) for k in np.unique(labels)}
    return TimeSeriesDataset("array", split, X, labels, vocab, np.full(X.shape[0], X.shape[2]))


class ZNormalizer(TransformerMixin, BaseEstimator):
    """Per-sample, per-channel z-normalization (stateless)."""

    def fit(self, X, y=None):
        X = check_panel(X)
        self.n_channels_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return znormalize(_as_dataset(check_panel(X))).samples


class HandcraftedFeatures(TransformerMixin, BaseEstimator):
    """Max, min, population variance and mean of every channel."""

    def fit(self, X, y=None):
        X = check_panel(X)
        self.n_channels_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_panel(X)
        check_panel_shape(X, self.n_channels_in_)
        return handcrafted_features(_as_dataset(X))


class RawFeatures(TransformerMixin, BaseEstimator):
    """Flatten (N, C, T) to (N, C*T); 1NN on these is the ED baseline."""

    def fit(self, X, y=None):
        X = check_panel(X)
        self.n_channels_in_, self.length_in_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_panel(X)
        check_panel_shape(X, self.n_channels_in_, self.length_in_)
        return X.reshape(X.shape[0], -1).copy()


class SelfSupervisedEncoder(TransformerMixin, BaseEstimator):
    """Learn an FCN encoder without labels and emit its 128-d representations.

    Parameters
    ----------
    method : {"mcl", "cl-gauss", "cl-drop", "ae"}
        Mixup contrastive learning, SimCLR-style contrastive learning with
        gaussian or dropout noise, or an autoencoder.
    alpha : float
        Beta(alpha, alpha) concentration for the mixing weight (mcl).
    tau : float
        Contrastive temperature.
    noise : float
        Gaussian variance (cl-gauss) or drop rate (cl-drop).
    epochs : int or None
        None selects 1000 for contrastive methods and 250 for ae.
    batch_size, lr : training settings.
    random_state : int
        Master seed; the fit is bit-for-bit reproducible.
    """

    def __init__(
        self,
        method="mcl",
        alpha=0.2,
        tau=0.5,
        noise=0.25,
        epochs=None,
        batch_size=64,
        lr=1e-3,
        random_state=0,
        per_sample_lambda=False,
    ):
        self.method = method
        self.alpha = alpha
        self.tau = tau
        self.noise = noise
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state
        self.per_sample_lambda = per_sample_lambda

    def _config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            alpha=self.alpha,
            tau=self.tau,
            noise=self.noise,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.random_state,
            per_sample_lambda=self.per_sample_lambda,
        )

    def fit(self, X, y=None):
        X = check_panel(X, min_length=max(models.KERNELS))
        result = train_representation(self._config(), X)
        self.params_ = result.params
        self.loss_history_ = result.loss_history
        self.n_channels_in_, self.length_in_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_panel(X, min_length=max(models.KERNELS))
        check_panel_shape(X, self.n_channels_in_)
        return encode(self.params_, X)

    def save_encoder(self, path) -> None:
        """Write the encoder weights (projection head / decoder excluded)."""
        check_is_fitted(self, "params_")
        models.save_weights(models.select(self.params_, "encoder."), path)


class OneNearestNeighbor(ClassifierMixin, BaseEstimator):
    """Euclidean 1NN; exact ties go to the earliest training sample."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X.reshape(X.shape[0], -1)
        y = np.asarray(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} samples but {y.shape[0]} labels")
        self.X_ = X
        self.y_ = y
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "X_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X.reshape(X.shape[0], -1)
        return one_nn_classify(self.X_, self.y_, X)


class FCNClassifier(ClassifierMixin, BaseEstimator):
    """Supervised FCN: encoder plus a linear softmax head, trained end to end.

    ``encoder_weights`` (a weight-file path or parameter dict) initializes
    the encoder for transfer learning; otherwise it is He-initialized.
    Passing ``eval_set=(X_test, y_test)`` to :meth:`fit` records the test
    accuracy after every epoch in ``test_curve_``.
    """

    def __init__(self, encoder_weights=None, epochs=100, batch_size=64, lr=1e-3, random_state=0):
        self.encoder_weights = encoder_weights
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X = check_panel(X, min_length=max(models.KERNELS))
        y = np.asarray(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        rng = Rng(self.random_state)
        params = models.init_encoder(rng.substream("init"), X.shape[1])
        if self.encoder_weights is not None:
            source = self.encoder_weights
            if not isinstance(source, dict):
                source = models.load_weights(source)
            models.assign_weights(params, source, prefix="encoder.")
        params.update(models.init_classifier(rng.substream("head"), len(self.classes_)))
        test = None
        if eval_set is not None:
            X_te = check_panel(eval_set[0], min_length=max(models.KERNELS))
            lookup = {c: i for i, c in enumerate(self.classes_)}
            y_te = np.array([lookup.get(c, -1) for c in np.asarray(eval_set[1])])
            test = _as_dataset(X_te, None, "test")
            test = TimeSeriesDataset("array", "test", X_te, y_te, test.label_vocabulary, test.lengths)
        train = _as_dataset(X, codes)
        train = TimeSeriesDataset("array", "train", X, codes, {str(i): i for i in range(len(self.classes_))}, train.lengths)
        self.loss_history_, self.test_curve_ = train_classifier(
            params, train, self.epochs, rng.substream("shuffle"), lr=self.lr, batch_size=self.batch_size, test=test
        )
        self.params_ = params
        self.n_channels_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_panel(X, min_length=max(models.KERNELS))
        check_panel_shape(X, self.n_channels_in_)
        h = encode(self.params_, X)
        return models.classify(self.params_, h).data

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
