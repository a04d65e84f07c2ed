"""Cross-entropy training with Adam, validation-based model selection, evaluation."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch, TimedSequence, iter_batches, make_batch
from .exceptions import ContractError, DivergenceError, NumericalError
from .metrics import EvalReport, classification_report
from .models import MajorityModel, SequenceModel, _flat_positions


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    batch_size: int = 50
    dropout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("invalid Adam constants")

    def to_dict(self) -> dict:
        return asdict(self)


def cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the positions where ``mask`` is set.

    ``logits`` is ``(n, classes)``; ``labels`` and ``mask`` have ``n`` entries.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("cross_entropy: every position is masked")
    if logits.shape[0] != labels.size:
        raise ContractError(f"cross_entropy: {logits.shape[0]} logits for {labels.size} labels")
    pick = np.zeros(logits.shape)
    rows = np.nonzero(mask)[0]
    pick[rows, labels[rows]] = 1.0
    ll = ad.sum_(ad.mul(ad.log_softmax(logits), pick))
    return ad.scale(ll, -1.0 / count)


def batch_loss(model: SequenceModel, batch: Batch, training=False, rng=None, dropout=None) -> Tensor:
    res = model.forward(batch, training=training, rng=rng, dropout=dropout)
    return cross_entropy(res.logits, _flat_positions(batch.y), _flat_positions(batch.mask))


class Adam:
    """Bias-corrected Adam over a name -> Tensor parameter map."""

    def __init__(self, params: dict[str, Tensor], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        adam_step(self.params, {k: p.grad for k, p in self.params.items()}, self)


def adam_step(params: dict[str, Tensor], grads: dict, state: Adam) -> Adam:
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def _snapshot(model: SequenceModel) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.parameters().items()}


def _restore(model: SequenceModel, snap: dict[str, np.ndarray]) -> None:
    for k, p in model.parameters().items():
        p.data = snap[k].copy()


def predict_proba(model: SequenceModel, seqs, batch_size: int = 256) -> list[np.ndarray]:
    """Per-sequence ``(n_posts, classes)`` softmax scores."""
    out = []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        logits = model.predict_logits(make_batch(chunk))
        z = logits - logits.max(axis=-1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        out.extend(p[b, : len(s)] for b, s in enumerate(chunk))
    return out


def evaluate(model: SequenceModel, seqs, batch_size: int = 256) -> EvalReport:
    if not seqs:
        raise ContractError("evaluate: empty dataset")
    probs = predict_proba(model, seqs, batch_size)
    y = np.concatenate([s.y for s in seqs])
    scores = np.concatenate(probs, axis=0)
    return classification_report(y, scores, model.config.num_classes, model.count_parameters())


@dataclass
class TrainResult:
    checkpoint: dict[str, np.ndarray]
    history: list[dict]
    timings: list[float]
    best_epoch: int


def train(
    model: SequenceModel,
    train_seqs,
    val_seqs=None,
    config: TrainConfig | None = None,
    log=None,
) -> TrainResult:
    """Fit ``model`` in place and leave it holding the best-validation weights.

    Selection uses validation weighted F1 (ties keep the earlier epoch); with
    no validation data the final epoch wins.  ``history`` holds only
    deterministic quantities; wall-clock seconds per epoch go to ``timings``.
    """
    config = config or TrainConfig()
    train_seqs = list(train_seqs)
    if not train_seqs:
        raise ContractError("train: no training sequences")
    if isinstance(model, MajorityModel):
        model.fit_labels(np.concatenate([s.y for s in train_seqs]))
        hist = []
        if val_seqs:
            rep = evaluate(model, val_seqs)
            hist.append({"epoch": 0, "train_loss": None, "val_weighted_f1": rep.weighted_f1})
        return TrainResult({}, hist, [], 0)

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    best_f1, best_epoch, best = -np.inf, 0, _snapshot(model)
    history, timings = [], []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        losses, weights = [], []
        shuffle_rng = rng if config.shuffle else None
        for bi, batch in enumerate(iter_batches(train_seqs, config.batch_size, shuffle_rng)):
            ad.zero_grads(params.values())
            loss = batch_loss(model, batch, training=True, rng=rng, dropout=config.dropout)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"loss diverged at epoch {epoch}, batch {bi}", epoch=epoch, batch=bi
                )
            ad.backward(loss)
            try:
                opt.step()
            except NumericalError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {bi}", epoch, bi) from None
            losses.append(float(loss.data))
            weights.append(int(batch.mask.sum()))
        rec = {"epoch": epoch, "train_loss": float(np.average(losses, weights=weights))}
        if val_seqs:
            rep = evaluate(model, val_seqs)
            rec["val_weighted_f1"] = rep.weighted_f1
            rec["val_accuracy"] = rep.accuracy
            if rep.weighted_f1 > best_f1:
                best_f1, best_epoch, best = rep.weighted_f1, epoch, _snapshot(model)
        else:
            best_epoch, best = epoch, _snapshot(model)
        history.append(rec)
        timings.append(time.perf_counter() - start)
        if log is not None:
            log(rec)
    _restore(model, best)
    return TrainResult(best, history, timings, best_epoch)
