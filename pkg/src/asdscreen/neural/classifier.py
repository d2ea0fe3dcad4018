"""scikit-learn style wrapper around the dense-connectivity image network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from ..datamodel import Dataset
from ..errors import ValidationError
from .network import CallbackConfig, NetConfig, default_layers
from .training import TrainedNet, train_net


class DenseNetClassifier(BaseEstimator, ClassifierMixin):
    """Binary image classifier built on dense-connectivity conv blocks.

    ``fit`` accepts a channel-last (n, h, w, c) image batch.  A validation
    split is carved from the training data unless one is passed explicitly
    via ``fit(..., X_val=..., y_val=...)``; the kept parameters are those of
    the epoch with the best validation accuracy.

    Parameters
    ----------
    layers : layer spec tuple, or None for the default two-block stack.
    epochs, batch_size, initial_lr : plain mini-batch gradient descent knobs.
    lr_decay_factor, patience, min_lr : validation-plateau callback policy.
    val_fraction : share of the training data carved off for validation
        when no explicit validation set is given.
    seed : drives initialization, batch shuffling and the internal split.
    """

    def __init__(
        self,
        layers=None,
        epochs: int = 20,
        batch_size: int = 32,
        initial_lr: float = 0.05,
        lr_decay_factor: float = 0.5,
        patience: int = 3,
        min_lr: float = 1e-4,
        val_fraction: float = 0.2,
        seed: int = 0,
    ):
        self.layers = layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.initial_lr = initial_lr
        self.lr_decay_factor = lr_decay_factor
        self.patience = patience
        self.min_lr = min_lr
        self.val_fraction = val_fraction
        self.seed = seed

    def _as_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 4:
            raise ValidationError(f"expected (n, h, w, c) images, got shape {X.shape}")
        return X

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._as_images(X)
        y = np.asarray(y, dtype=np.int8)
        if (X_val is None) != (y_val is None):
            raise ValidationError("pass X_val and y_val together or neither")
        config = NetConfig(
            layers=tuple(self.layers) if self.layers is not None else default_layers(),
            input_shape=X.shape[1:],
            init_seed=self.seed,
            batch_size=self.batch_size,
            epochs=self.epochs,
            initial_lr=self.initial_lr,
            callback=CallbackConfig(
                lr_decay_factor=self.lr_decay_factor,
                patience=self.patience,
                min_lr=self.min_lr,
            ),
        )
        ids = tuple(f"i{k}" for k in range(len(X)))
        if X_val is None:
            if not 0.0 < self.val_fraction < 1.0:
                raise ValidationError("val_fraction must lie in (0, 1)")
            from ..datamodel import split_dataset

            full = Dataset("image", X, y, ids)
            pair = split_dataset(full, 1.0 - self.val_fraction, self.seed)
            train, val = pair.train, pair.test
        else:
            X_val = self._as_images(X_val)
            y_val = np.asarray(y_val, dtype=np.int8)
            train = Dataset("image", X, y, ids)
            val = Dataset(
                "image", X_val, y_val, tuple(f"v{k}" for k in range(len(X_val)))
            )
        self.trained_ = train_net(train, val, config)
        self.provenance_ = self.trained_.provenance
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check_fitted(self):
        if getattr(self, "trained_", None) is None:
            raise NotFittedError("DenseNetClassifier is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        p = self.trained_.predict_proba(self._as_images(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int8)

    @property
    def classes_(self) -> np.ndarray:
        self._check_fitted()
        return np.array([0, 1], dtype=np.int8)

    @property
    def history_(self):
        self._check_fitted()
        return self.trained_.history
