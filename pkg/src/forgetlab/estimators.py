"""Estimator-style front door for the flat-vector MLP.

Wraps spec construction, initialization and the mini-batch loop behind
the usual fit/predict/predict_proba surface so the model slots into
generic tooling. The functional API in model/training stays the
workhorse; this is a convenience shell over it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .model import ModelSpec, build_model, forward_batch
from .training import TrainConfig, train
from .validation import as_float_matrix, as_label_vector


class MLPClassifier(BaseEstimator, ClassifierMixin):
    """Small ReLU network trained with mini-batch SGD or Adam.

    Labels must be integer class indices; the output width is
    max(label) + 1. All arithmetic is float64 and seeded, so fits are
    reproducible bit for bit.
    """

    def __init__(self, hidden_layer_sizes=(32, 16), epochs=50, batch_size=32,
                 learning_rate=0.05, optimizer="sgd", random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.random_state = random_state

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_label_vector(y)
        if len(X) != len(y):
            raise ValueError("X and y must have matching length")
        n_classes = int(y.max()) + 1
        if n_classes < 2:
            raise ValueError("need at least two classes")
        hidden = tuple(int(h) for h in self.hidden_layer_sizes)
        self.spec_ = ModelSpec(layer_sizes=(X.shape[1], *hidden, n_classes),
                               seed=int(self.random_state))
        config = TrainConfig(epochs=int(self.epochs),
                             batch_size=int(self.batch_size),
                             learning_rate=float(self.learning_rate),
                             optimizer=self.optimizer,
                             shuffle_seed=int(self.random_state))
        self.params_ = train(build_model(self.spec_), self.spec_, config, X, y)
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this MLPClassifier instance is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        return forward_batch(self.params_, self.spec_, X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
