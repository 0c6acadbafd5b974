"""scikit-learn compatible wrappers around the functional training and SOM code."""
from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, check_random_state

from .data import Dataset, channel_stats
from .layers import softmax
from .model import DEFAULT_VGG, build_model
from .neighborhood import LgnnPolicy, SomDims
from .optim import SGD, LrSchedule
from .som import SomGrid, find_winner, topographic_ratio, train_som
from .training import fit as fit_loop
from .training import predict_logits
from .validation import check_grid, check_images, check_labels, check_vectors


class LGNNClassifier(ClassifierMixin, BaseEstimator):
    """Small CNN trained with SGD and optional gradient smoothing over the filter grid.

    ``selection="off"`` trains the plain baseline. ``X`` may be ``(n, 3, 32, 32)``
    images in ``[0, 1]`` or flat ``(n, 3072)`` rows. Inputs are standardised
    per channel with statistics from the training set.
    """

    def __init__(self, arch=None, epochs=20, batch_size=32, lr=0.05, momentum=0.9,
                 weight_decay=5e-4, milestones=(), lr_factor=0.2, selection="all",
                 sigma_mode="constant", sigma=0.5, kernel_size=3, som_dims=None,
                 augment=False, random_state=0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.milestones = milestones
        self.lr_factor = lr_factor
        self.selection = selection
        self.sigma_mode = sigma_mode
        self.sigma = sigma
        self.kernel_size = kernel_size
        self.som_dims = som_dims
        self.augment = augment
        self.random_state = random_state

    def _input_shape(self):
        arch = self.arch or DEFAULT_VGG
        return tuple(arch.get("input_shape", DEFAULT_VGG["input_shape"]))

    def fit(self, X, y):
        X = check_images(X, self._input_shape())
        y = check_labels(y, len(X))
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples from at least two classes")
        self.n_features_in_ = int(np.prod(X.shape[1:]))

        seeds = check_random_state(self.random_state).randint(0, 2**31 - 1, size=3)
        dims = SomDims.default() if self.som_dims is None else SomDims(dict(self.som_dims))
        arch = {**copy.deepcopy(self.arch or DEFAULT_VGG), "num_classes": len(self.classes_)}
        self.model_ = build_model(arch, dims, seed=int(seeds[0]))
        train = Dataset(X, codes, np.zeros_like(codes))
        self.mean_, self.std_ = channel_stats(train)
        policy = LgnnPolicy(self.selection, self.sigma_mode, self.kernel_size, self.sigma)
        state = fit_loop(self.model_, train, None, epochs=self.epochs, batch_size=self.batch_size,
                         sgd=SGD(self.lr, self.momentum, self.weight_decay),
                         schedule=LrSchedule(self.lr, tuple(self.milestones), self.lr_factor),
                         policy=policy, dims=dims, data_seed=int(seeds[1]),
                         dropout_seed=int(seeds[2]), augment=self.augment,
                         mean=self.mean_, std=self.std_)
        self.history_ = state.history
        self.dims_ = dims
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X, self._input_shape())
        return predict_logits(self.model_, X, self.mean_, self.std_)

    def predict_proba(self, X):
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X):
        scores = self.decision_function(X)
        # argmax ties go to the first class
        return self.classes_[scores.argmax(axis=1)]


class SelfOrganizingMap(TransformerMixin, BaseEstimator):
    """Online Kohonen map on an ``m x n`` grid.

    ``transform`` gives Euclidean distances to every prototype, ``predict`` the
    winning cell index (row-major).
    """

    def __init__(self, m=8, n=8, epochs=10, alpha=(0.5, 0.01), sigma=None, random_state=0):
        self.m = m
        self.n = n
        self.epochs = epochs
        self.alpha = alpha
        self.sigma = sigma
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_vectors(X)
        m, n = check_grid(self.m, self.n)
        rs = check_random_state(self.random_state)
        init = rs.uniform(X.min(axis=0), X.max(axis=0), size=(m * n, X.shape[1]))
        grid = SomGrid(m, n, init)
        self.grid_ = train_som(grid, X, self.epochs, self.alpha, self.sigma,
                               seed=int(rs.randint(0, 2**31 - 1)))
        self.n_features_in_ = X.shape[1]
        self.topographic_ratio_ = topographic_ratio(self.grid_)
        return self

    @property
    def cluster_centers_(self):
        check_is_fitted(self, "grid_")
        return self.grid_.weights

    def _checked(self, X):
        check_is_fitted(self, "grid_")
        X = check_vectors(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def transform(self, X):
        X = self._checked(X)
        w = self.grid_.weights
        return np.sqrt(np.maximum(((X[:, None, :] - w[None]) ** 2).sum(axis=-1), 0.0))

    def predict(self, X):
        X = self._checked(X)
        return np.array([find_winner(self.grid_, x) for x in X], dtype=np.int64)
