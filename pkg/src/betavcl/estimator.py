"""scikit-learn compatible front end for multi-head beta-weighted VCL."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bnn import HyperParams, NetworkArchitecture, add_head, init_prior, train_task
from .inference import sample_probs, uncertainty_scores
from .numerics import RandomStream


class VCLClassifier(ClassifierMixin, BaseEstimator):
    """Bayesian multi-head network learned one task at a time.

    Each call to :meth:`partial_fit` with a new task adds a head and trains it
    together with the shared trunk, anchored at the posterior left by the
    previous task. :meth:`fit` discards all state and learns a single task.

    Parameters
    ----------
    hidden_sizes : tuple of int, default=(512, 512, 512)
        Widths of the shared hidden layers.
    learning_rate : float, default=0.001
    beta : float, default=0.1
        Weight of the KL term in the ELBO, in [0, 1]. Larger values favour
        remembering earlier tasks; smaller values favour learning new ones.
    epochs : int, default=120
    batch_size : int, default=128
    s_train : int, default=10
        Monte Carlo draws per example during training.
    s_test : int, default=100
        Monte Carlo draws per example at prediction time.
    prior_sigma : float, default=1.0
    init_log_sigma : float, default=-6.0
    random_state : int, default=0

    Attributes
    ----------
    posterior_ : VariationalPosterior
    classes_per_task_ : list of ndarray
        Original labels of each task, indexed by head.
    classes_ : ndarray
        Labels of the most recently trained task.
    n_tasks_ : int
    """

    def __init__(
        self,
        hidden_sizes=(512, 512, 512),
        learning_rate=0.001,
        beta=0.1,
        epochs=120,
        batch_size=128,
        s_train=10,
        s_test=100,
        prior_sigma=1.0,
        init_log_sigma=-6.0,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.s_train = s_train
        self.s_test = s_test
        self.prior_sigma = prior_sigma
        self.init_log_sigma = init_log_sigma
        self.random_state = random_state

    def _hyper(self) -> HyperParams:
        return HyperParams(
            learning_rate=self.learning_rate,
            beta=self.beta,
            epochs=self.epochs,
            batch_size=self.batch_size,
            s_train=self.s_train,
            s_test=self.s_test,
            prior_sigma=self.prior_sigma,
            init_log_sigma=self.init_log_sigma,
        )

    def fit(self, X, y):
        for attr in ("posterior_", "classes_per_task_", "classes_", "n_tasks_", "n_features_in_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X, y)

    def partial_fit(self, X, y, task=None):
        """Train on one task; ``task=None`` starts a new head."""
        X, y = check_X_y(X, y, dtype=np.float64)
        classes, y_enc = np.unique(y, return_inverse=True)
        hyper = self._hyper()
        if not hasattr(self, "posterior_"):
            self.n_features_in_ = X.shape[1]
            arch = NetworkArchitecture(X.shape[1], tuple(self.hidden_sizes), ())
            self.posterior_ = init_prior(arch, hyper.prior_sigma)
            self.classes_per_task_ = []
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if task is None:
            if classes.size < 2:
                raise ValueError("a task needs at least two classes")
            self.posterior_, task = add_head(self.posterior_, classes.size, hyper.prior_sigma)
            self.classes_per_task_.append(classes)
        else:
            if not 0 <= task < len(self.classes_per_task_):
                raise ValueError(f"unknown task {task}")
            known = self.classes_per_task_[task]
            if not np.all(np.isin(classes, known)):
                raise ValueError(f"labels {classes} not all in task {task} classes {known}")
            y_enc = np.searchsorted(known, y)
        stream = RandomStream(self.random_state, 0).child(len(self.posterior_.trained_heads), task)
        self.posterior_ = train_task(self.posterior_, X, y_enc, task, hyper, stream)
        self.n_tasks_ = len(self.classes_per_task_)
        self.classes_ = self.classes_per_task_[task]
        self._last_task = task
        return self

    def _resolve_task(self, task):
        check_is_fitted(self, "posterior_")
        task = self._last_task if task is None else task
        if not 0 <= task < self.n_tasks_:
            raise ValueError(f"unknown task {task}")
        return task

    def _sample(self, X, task):
        task = self._resolve_task(task)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        noise = RandomStream(self.random_state, 1).child(task)
        return task, sample_probs(self.posterior_, task, X, self.s_test, noise)

    def predict_proba(self, X, task=None):
        """Monte Carlo mean of the per-draw softmax outputs."""
        _, probs = self._sample(X, task)
        return probs.mean(axis=1)

    def predict(self, X, task=None):
        task, probs = self._sample(X, task)
        return self.classes_per_task_[task][np.argmax(probs.mean(axis=1), axis=1)]

    def predict_uncertainty(self, X, task=None):
        """Predictive entropy and mutual information (nats) per row."""
        _, probs = self._sample(X, task)
        _, h, mi = uncertainty_scores(probs)
        return h, mi

    def score(self, X, y, task=None, sample_weight=None):
        from sklearn.metrics import accuracy_score

        return accuracy_score(y, self.predict(X, task=task), sample_weight=sample_weight)
