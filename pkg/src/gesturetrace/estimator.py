"""scikit-learn compatible front end for the recurrent gesture classifier."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import InvalidInputError, NumericInputError, SchemaError
from .network import (TWO_BRANCH, NetConfig, TraceSeqModel, init_network,
                      predict_proba_batched, train)


def check_sequences(X, width: int | None = None) -> np.ndarray:
    """Validate a batch of equal-length sequences as a float64 ``(n, T, D)`` array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise SchemaError(f"expected an (n_samples, T, D) array, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise InvalidInputError(f"empty sequence batch of shape {X.shape}")
    if width is not None and X.shape[2] != width:
        raise SchemaError(f"expected {width} feature columns, got {X.shape[2]}")
    if not np.all(np.isfinite(X)):
        raise NumericInputError("sequence batch contains NaN or infinity")
    return X


def check_sequence_labels(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_sequences(X)
    y = np.asarray(y).reshape(-1)
    if len(y) != len(X):
        raise InvalidInputError(f"{len(X)} sequences but {len(y)} labels")
    return X, y


class TraceSeqClassifier(ClassifierMixin, BaseEstimator):
    """Two-branch LSTM classifier over fixed-length motion-feature sequences.

    Parameters
    ----------
    hidden : int, default=64
        Recurrent state width of each branch.
    dropout : float, default=0.2
        Dropout rate on the concatenated final hidden states.
    lr : float, default=0.004
        Adam learning rate.
    epochs : int, default=60
    batch_size : int, default=32
    mode : {'two-branch', 'single-branch', 'box'}, default='two-branch'
        'two-branch' splits every frame into a velocity block (the first
        ``velocity_width`` columns) and a shape block.
    velocity_width : int or None, default=None
        Required in two-branch mode.
    n_classes : int or None, default=None
        Size of the label set; inferred from ``y`` when None.
    fc_hidden : int, default=0
        Width of an optional tanh layer before the output layer.
    layers : int, default=1
        Stacked recurrent layers per branch.
    random_state : int, default=0

    Attributes
    ----------
    model_ : TraceSeqModel
    classes_ : ndarray of shape (n_classes,)
    history_ : list of EpochRecord
    """

    def __init__(self, hidden=64, dropout=0.2, lr=0.004, epochs=60, batch_size=32,
                 mode=TWO_BRANCH, velocity_width=None, n_classes=None, fc_hidden=0, layers=1,
                 random_state=0):
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.mode = mode
        self.velocity_width = velocity_width
        self.n_classes = n_classes
        self.fc_hidden = fc_hidden
        self.layers = layers
        self.random_state = random_state

    def _config(self, width: int, n_classes: int) -> NetConfig:
        vw = self.velocity_width or 0
        if self.mode == TWO_BRANCH and not vw:
            raise SchemaError("two-branch mode needs velocity_width")
        return NetConfig(input_width=width, velocity_width=vw if self.mode == TWO_BRANCH else 0,
                         hidden=self.hidden, classes=n_classes, dropout=self.dropout,
                         mode=self.mode, fc_hidden=self.fc_hidden, layers=self.layers)

    def fit(self, X, y, X_val=None, y_val=None, callback=None):
        X, y = check_sequence_labels(X, y)
        if self.n_classes is not None:
            self.classes_ = np.arange(self.n_classes)
        else:
            self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise InvalidInputError("need at least two classes")
        y_idx = np.searchsorted(self.classes_, y)
        if np.any(y_idx >= len(self.classes_)) or np.any(self.classes_[y_idx] != y):
            raise InvalidInputError("labels outside the declared classes")
        cfg = self._config(X.shape[2], len(self.classes_))
        seed = int(self.random_state or 0)
        model = init_network(cfg, seed)
        if X_val is not None:
            X_val = check_sequences(X_val, X.shape[2])
            y_val = np.searchsorted(self.classes_, np.asarray(y_val))
        self.model_, self.history_ = train(model, X, y_idx, epochs=self.epochs,
                                           batch_size=self.batch_size, seed=seed, lr=self.lr,
                                           X_val=X_val, y_val=y_val, callback=callback)
        self.n_features_in_ = X.shape[2]
        return self

    @classmethod
    def from_model(cls, model: TraceSeqModel, classes=None) -> "TraceSeqClassifier":
        cfg = model.config
        est = cls(hidden=cfg.hidden, dropout=cfg.dropout, mode=cfg.mode,
                  velocity_width=cfg.velocity_width or None, n_classes=cfg.classes,
                  fc_hidden=cfg.fc_hidden, layers=cfg.layers, random_state=model.seed)
        est.model_ = model
        est.classes_ = np.arange(cfg.classes) if classes is None else np.asarray(classes)
        est.history_ = []
        est.n_features_in_ = cfg.input_width
        return est

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, self.model_.config.input_width)
        return predict_proba_batched(self.model_, X)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

