"""scikit-learn compatible wrapper around the sequence models.

``X`` is a list of sequences (see :func:`birnode.validation.check_sequences`);
predictions come back as one array per sequence.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import make_batch
from .models import ModelConfig, build_model
from .ode import SolverConfig
from .training import TrainConfig, predict_proba, train
from .validation import check_feature_width, check_sequences


class SequenceClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Per-post classifier for timed sequences.

    ``transform`` returns the representation each post's head sees (the
    aggregated forward/backward state for bidirectional models), which is
    what one would project with t-SNE.

    >>> from birnode.data import GapTaskSpec, generate_synthetic
    >>> seqs = generate_synthetic(GapTaskSpec(n_sequences=20, length=5), seed=0)
    >>> clf = SequenceClassifier(hidden_width=8, dynamics_layers=(8,), epochs=1).fit(seqs)
    >>> len(clf.predict(seqs[:2])[0])
    5
    """

    def __init__(
        self,
        arch="RNODE",
        hidden_width=64,
        dynamics_layers=(64,),
        dynamics_activation="tanh",
        solver="euler",
        steps_per_unit_time=20,
        min_steps=1,
        rtol=1e-3,
        atol=1e-4,
        aggregation="concat",
        time_channel="absolute",
        cell="vanilla",
        head_layers=None,
        num_classes=None,
        epochs=50,
        learning_rate=0.01,
        batch_size=50,
        dropout=0.2,
        random_state=0,
    ):
        self.arch = arch
        self.hidden_width = hidden_width
        self.dynamics_layers = dynamics_layers
        self.dynamics_activation = dynamics_activation
        self.solver = solver
        self.steps_per_unit_time = steps_per_unit_time
        self.min_steps = min_steps
        self.rtol = rtol
        self.atol = atol
        self.aggregation = aggregation
        self.time_channel = time_channel
        self.cell = cell
        self.head_layers = head_layers
        self.num_classes = num_classes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.dropout = dropout
        self.random_state = random_state

    def _model_config(self, input_width, num_classes) -> ModelConfig:
        return ModelConfig(
            arch=self.arch,
            input_width=input_width,
            hidden_width=self.hidden_width,
            num_classes=num_classes,
            dynamics_layers=tuple(self.dynamics_layers),
            dynamics_activation=self.dynamics_activation,
            solver=SolverConfig(
                method=self.solver,
                steps_per_unit_time=self.steps_per_unit_time,
                min_steps=self.min_steps,
                rtol=self.rtol,
                atol=self.atol,
            ),
            aggregation=self.aggregation,
            dropout_rate=self.dropout,
            time_channel=self.time_channel,
            cell=self.cell,
            head_layers=self.head_layers,
        )

    def fit(self, X, y=None, validation=None):
        """Train on ``X``; ``validation`` (sequences) drives checkpoint selection."""
        seqs = check_sequences(X, y, require_labels=True)
        labels = np.concatenate([s.y for s in seqs])
        n_classes = self.num_classes or max(2, int(labels.max()) + 1)
        val = check_sequences(validation, require_labels=True) if validation is not None else None
        self.model_ = build_model(
            self._model_config(seqs[0].feature_width, n_classes), seed=self.random_state
        )
        result = train(
            self.model_,
            seqs,
            val,
            TrainConfig(
                epochs=self.epochs,
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                dropout=self.dropout,
                seed=self.random_state,
            ),
        )
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = seqs[0].feature_width
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X)
        check_feature_width(seqs, self.n_features_in_)
        return seqs

    def predict_proba(self, X) -> list[np.ndarray]:
        seqs = self._checked(X)
        return predict_proba(self.model_, seqs)

    def predict(self, X) -> list[np.ndarray]:
        return [np.argmax(p, axis=1) for p in self.predict_proba(X)]

    def transform(self, X) -> list[np.ndarray]:
        seqs = self._checked(X)
        batch = make_batch(seqs)
        H, Hb = self.model_.hidden_trace(batch)
        if H is None:
            raise ValueError(f"{self.arch} has no hidden representation")
        if Hb is not None:
            if self.aggregation == "concat":
                H = np.concatenate([H, Hb], axis=2)
            else:
                H = 0.5 * (H + Hb)
        return [H[b, : len(s)] for b, s in enumerate(seqs)]

    def score(self, X, y=None, sample_weight=None) -> float:
        """Accuracy over all posts."""
        seqs = check_sequences(X, y, require_labels=True)
        pred = np.concatenate(self.predict(seqs))
        return float(np.mean(pred == np.concatenate([s.y for s in seqs])))

    def count_parameters(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.count_parameters()
