"""Scikit-learn style classifier trained with an optional pair-consistency penalty.

The estimator owns the optimization loop: plain mini-batch SGD over a labeled
set, optionally regularized by one of the pair penalties evaluated on a
stream of (original, augmented, label) pairs passed to :meth:`fit`.  It
follows the usual conventions (``get_params`` round-trips, ``fit`` returns
``self``, fitted attributes carry a trailing underscore), so it composes with
pipelines, ``clone`` and cross-validation when used without pairs.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import network
from .penalties import VALID_KINDS, PairPenalty, combined_objective

# Sub-stream indices spawned from random_state: weight init, labeled-batch
# order, pair-batch order.  Keeping the pair stream separate means a run with
# a zero-weight penalty consumes exactly the same random numbers as plain ERM.
_INIT_STREAM, _BATCH_STREAM, _PAIR_STREAM = 0, 1, 2


def _seed_sequence(random_state) -> np.random.SeedSequence:
    if isinstance(random_state, np.random.SeedSequence):
        return random_state
    if random_state is None:
        return np.random.SeedSequence()
    return np.random.SeedSequence(int(random_state))


class PairConsistencyClassifier(BaseEstimator, ClassifierMixin):
    """MLP classifier with a consistency penalty on example pairs.

    Parameters
    ----------
    reg_kind : str or None
        Penalty kind, one of ``kl, js, lm, fm, tpm, tlm, lam, groupvar_lm,
        groupvar_fm``; None trains with cross-entropy alone.
    lam : float
        Penalty weight; zero disables the penalty even when pairs are given.
    epochs, learning_rate, batch_size, pair_batch_size
        Optimization schedule; batches are drawn with replacement and an
        epoch is ``ceil(n_samples / batch_size)`` steps.
    lp_epochs, lp_learning_rate
        Optional warm-up phase that updates only the head while the extractor
        stays frozen, before the full fine-tuning epochs.  The penalty weight
        applies in both phases.
    hidden_units, feature_units, init_scale, momentum, detach_augmented
        Architecture and optimizer knobs; ``detach_augmented`` stops
        gradients through the augmented side of each pair.
    n_classes : int or None
        Fix the class set to ``0..n_classes-1`` (useful when a small sample
        may miss a class); None infers classes from ``y``.
    steps_per_epoch : int or None
        Number of optimization steps per epoch; None means
        ``ceil(n_samples / batch_size)``.  Letting the caller fix it keeps
        the per-epoch work comparable when training sets differ in size.
    random_state : int, SeedSequence, or None
        Seeds initialization and batch order; fits are bitwise reproducible.
    """

    def __init__(
        self,
        reg_kind: str | None = None,
        lam: float = 0.0,
        epochs: int = 30,
        learning_rate: float = 0.3,
        batch_size: int = 64,
        pair_batch_size: int = 64,
        lp_epochs: int = 0,
        lp_learning_rate: float | None = None,
        hidden_units: int = 64,
        feature_units: int = 32,
        init_scale: float = 0.1,
        momentum: float = 0.0,
        detach_augmented: bool = False,
        n_classes: int | None = None,
        steps_per_epoch: int | None = None,
        random_state=0,
    ):
        self.reg_kind = reg_kind
        self.lam = lam
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.pair_batch_size = pair_batch_size
        self.lp_epochs = lp_epochs
        self.lp_learning_rate = lp_learning_rate
        self.hidden_units = hidden_units
        self.feature_units = feature_units
        self.init_scale = init_scale
        self.momentum = momentum
        self.detach_augmented = detach_augmented
        self.n_classes = n_classes
        self.steps_per_epoch = steps_per_epoch
        self.random_state = random_state

    def _validate_hyperparameters(self):
        if self.reg_kind is not None and self.reg_kind not in VALID_KINDS:
            raise ValueError(
                f"reg_kind {self.reg_kind!r} is not recognized; valid kinds: {', '.join(VALID_KINDS)}"
            )
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam!r}")
        if self.epochs < 1 or self.lp_epochs < 0:
            raise ValueError("epochs must be >= 1 and lp_epochs >= 0")
        if self.batch_size < 1 or self.pair_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum!r}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1 when given")

    def _encode_pairs(self, pairs, n_features):
        x_orig = check_array(np.asarray(pairs[0], dtype=np.float64))
        x_aug = check_array(np.asarray(pairs[1], dtype=np.float64))
        y_pair = np.asarray(pairs[2])
        if x_orig.shape != x_aug.shape:
            raise ValueError(f"pair sides differ in shape: {x_orig.shape} vs {x_aug.shape}")
        if x_orig.shape[1] != n_features:
            raise ValueError(
                f"pairs have {x_orig.shape[1]} features, labeled data has {n_features}"
            )
        if y_pair.shape != (x_orig.shape[0],):
            raise ValueError("pair labels must be one per pair")
        encoded = np.searchsorted(self.classes_, y_pair)
        if np.any(encoded >= len(self.classes_)) or np.any(self.classes_[encoded] != y_pair):
            raise ValueError("pair labels contain classes absent from the training labels")
        return x_orig, x_aug, encoded

    def fit(self, X, y, pairs=None, epoch_hook=None):
        """Fit on labeled data, optionally with a pair batch stream.

        ``pairs`` is a (X_original, X_augmented, y_pair) triple of aligned
        arrays; required when ``reg_kind`` is set and ``lam > 0``.
        ``epoch_hook(estimator, epoch, phase)`` is invoked after every epoch
        with up-to-date fitted attributes.
        """
        self._validate_hyperparameters()
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.n_classes is not None:
            self.classes_ = np.arange(int(self.n_classes))
            if not np.isin(y, self.classes_).all():
                raise ValueError(f"labels must lie in [0, {self.n_classes}) when n_classes is set")
        else:
            self.classes_ = unique_labels(y)
        y_enc = np.searchsorted(self.classes_, y)
        n, d = X.shape
        self.n_features_in_ = d

        seed = _seed_sequence(self.random_state)
        init_rng, batch_rng, pair_rng = (
            np.random.default_rng(child) for child in seed.spawn(3)
        )

        active = self.reg_kind is not None and self.lam > 0.0
        term = PairPenalty(self.reg_kind, self.lam, self.detach_augmented) if active else None
        if active:
            if pairs is None:
                raise ValueError("reg_kind with lam > 0 requires a pairs argument")
            pair_arrays = self._encode_pairs(pairs, d)
            if pair_arrays[0].shape[0] == 0:
                raise ValueError("pairs must be non-empty when lam > 0")

        params = network.init_params(
            d, (self.hidden_units,), self.feature_units, len(self.classes_), self.init_scale, init_rng
        )
        self.params_ = params
        steps = self.steps_per_epoch if self.steps_per_epoch is not None else math.ceil(n / self.batch_size)
        self.steps_per_epoch_ = steps
        self.ce_curve_ = []
        self.loss_curve_ = []
        self.penalty_curve_ = []

        lp_lr = self.learning_rate if self.lp_learning_rate is None else self.lp_learning_rate
        phases = []
        if self.lp_epochs > 0:
            phases.append(("lp", self.lp_epochs, lp_lr, True))
        phases.append(("ft", self.epochs, self.learning_rate, False))

        epoch = 0
        for phase, n_epochs, lr, head_only in phases:
            velocity = network.zero_gradients(params)
            for _ in range(n_epochs):
                ce_sum = loss_sum = pen_sum = 0.0
                for _ in range(steps):
                    idx = batch_rng.integers(0, n, size=self.batch_size)
                    if active:
                        pidx = pair_rng.integers(0, pair_arrays[0].shape[0], size=self.pair_batch_size)
                        pair_batch = (pair_arrays[0][pidx], pair_arrays[1][pidx], pair_arrays[2][pidx])
                    else:
                        pair_batch = None
                    value = combined_objective(params, (X[idx], y_enc[idx]), pair_batch, term)
                    grads = value.gradients
                    if head_only:
                        grads = network.ParamGradients(
                            layers=network.zero_gradients(params).layers, head=grads.head
                        )
                    if self.momentum > 0.0:
                        velocity = network.add_gradients(
                            network.scale_gradients(velocity, self.momentum), grads
                        )
                        params = network.sgd_step(params, velocity, lr)
                    else:
                        params = network.sgd_step(params, grads, lr)
                    ce_sum += value.cross_entropy
                    loss_sum += value.loss
                    pen_sum += value.penalty
                epoch += 1
                self.params_ = params
                self.ce_curve_.append(ce_sum / steps)
                self.loss_curve_.append(loss_sum / steps)
                self.penalty_curve_.append(pen_sum / steps)
                if epoch_hook is not None:
                    epoch_hook(self, epoch, phase)
        return self

    def _forward(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return network.forward(self.params_, X)

    def predict_proba(self, X):
        return self._forward(X).probabilities

    def decision_function(self, X):
        return self._forward(X).logits

    def features(self, X):
        """Feature-extractor outputs, one row per sample."""
        return self._forward(X).features

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


__all__ = ["PairConsistencyClassifier"]
