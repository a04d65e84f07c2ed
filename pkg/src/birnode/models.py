"""Sequence classifiers over timed posts.

Every model maps a padded :class:`~birnode.data.Batch` to one logit row per
post.  Logits come back flattened position-major: row ``i * batch + b``
belongs to post ``i`` of sequence ``b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import CellParams, cell_step
from .data import Batch
from .exceptions import ContractError
from .ode import DynamicsNet, SolverConfig, ode_solve

ARCHS = ("RNODE", "BiRNODE", "LSTM", "GRU", "BiLSTM", "BiGRU", "LSTMTimeGap", "Majority")
BIDIRECTIONAL = {"BiRNODE", "BiLSTM", "BiGRU"}
CHECKPOINT_FORMAT = "birnode-checkpoint/1"


@dataclass
class ModelConfig:
    arch: str = "RNODE"
    input_width: int = 1
    hidden_width: int = 64
    num_classes: int = 2
    dynamics_layers: tuple = (64,)
    dynamics_activation: str = "tanh"
    solver: SolverConfig = field(default_factory=SolverConfig)
    aggregation: str = "concat"
    dropout_rate: float = 0.2
    time_channel: str = "absolute"
    cell: str = "vanilla"
    head_layers: tuple | None = None

    def __post_init__(self):
        canon = {a.lower(): a for a in ARCHS}
        key = str(self.arch).replace("-", "").replace("_", "").lower()
        if key not in canon:
            raise ContractError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        self.arch = canon[key]
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.input_width < 1 or self.hidden_width < 1:
            raise ContractError("input_width and hidden_width must be positive")
        if self.aggregation not in ("concat", "average"):
            raise ContractError("aggregation must be 'concat' or 'average'")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")
        if self.time_channel not in ("absolute", "gap", "none"):
            raise ContractError("time_channel must be absolute, gap or none")
        if self.cell not in ("vanilla", "gru"):
            raise ContractError("RNODE cell must be 'vanilla' or 'gru'")
        self.dynamics_layers = tuple(int(w) for w in self.dynamics_layers)
        if self.head_layers is None:
            self.head_layers = (self.hidden_width,)
        self.head_layers = tuple(int(w) for w in self.head_layers)

    @property
    def bidirectional(self) -> bool:
        return self.arch in BIDIRECTIONAL

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dynamics_layers"] = list(self.dynamics_layers)
        d["head_layers"] = list(self.head_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardResult:
    logits: Tensor
    hidden: np.ndarray | None = None
    hidden_b: np.ndarray | None = None


class Head:
    """Tanh MLP applied to every post's representation."""

    def __init__(self, in_width: int, layers, num_classes: int, rng):
        widths = (in_width, *layers, num_classes)
        self.weights, self.biases = [], []
        for a, b in zip(widths[:-1], widths[1:]):
            k = 1.0 / math.sqrt(a)
            self.weights.append(ad.parameter(rng.uniform(-k, k, size=(a, b))))
            self.biases.append(ad.parameter(np.zeros(b)))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def __call__(self, z: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = ad.add(ad.matmul(z, w), b)
            if i < last:
                z = ad.tanh(z)
        return z


def _flat_positions(x: np.ndarray) -> np.ndarray:
    """(batch, length, ...) -> (length * batch, ...) position-major."""
    return np.swapaxes(x, 0, 1).reshape(x.shape[0] * x.shape[1], *x.shape[2:])


def _unflatten(flat: np.ndarray, batch: int) -> np.ndarray:
    return np.swapaxes(flat.reshape(-1, batch, *flat.shape[1:]), 0, 1)


class SequenceModel:
    """Shared plumbing: parameters, dropout, bidirectional aggregation."""

    arch: str

    def __init__(self, config: ModelConfig):
        self.config = config
        self.modules: dict = {}

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, mod in self.modules.items():
            for name, p in mod.parameters().items():
                out[f"{prefix}.{name}"] = p
        return out

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def _encode(self, direction: str, x: np.ndarray, t: np.ndarray, gaps: np.ndarray):
        raise NotImplementedError

    def represent(self, batch: Batch):
        """Per-post head inputs ``(Z, H, H_b)`` with ``Z`` flattened position-major.

        ``H_b`` is the backward trace re-aligned to original post order, or
        ``None`` for unidirectional models.
        """
        B, L = batch.size, batch.length
        H = ad.concat(self._encode("", batch.x, batch.t, batch.gaps()), axis=0)
        if not self.config.bidirectional:
            return H, H, None
        rev = batch.reverse_index()
        xr = np.take_along_axis(batch.x, rev[:, :, None], axis=1)
        tr = batch.reversed_t()
        prev = np.concatenate([np.zeros((B, 1)), tr[:, :-1]], axis=1)
        gr = (tr - prev) * batch.mask
        hb = ad.concat(self._encode("_b", xr, tr, gr), axis=0)
        # row (i, b) takes reversed step rev[b, i] of sequence b
        idx = rev.T.reshape(-1) * B + np.tile(np.arange(B), L)
        Hb = ad.take(hb, idx)
        if self.config.aggregation == "concat":
            return ad.concat([H, Hb], axis=1), H, Hb
        return ad.scale(ad.add(H, Hb), 0.5), H, Hb

    def forward(self, batch: Batch, training: bool = False, rng=None, dropout=None) -> ForwardResult:
        """Logits for every post; ``dropout`` overrides the configured rate."""
        Z, H, Hb = self.represent(batch)
        p = self.config.dropout_rate if dropout is None else dropout
        if training and p > 0:
            if rng is None:
                raise ContractError("dropout during training needs an rng")
            keep = (rng.uniform(size=Z.shape) >= p) / (1.0 - p)
            Z = ad.mul(Z, keep)
        return ForwardResult(
            self.modules["head"](Z),
            _unflatten(H.data, batch.size),
            None if Hb is None else _unflatten(Hb.data, batch.size),
        )

    def hidden_trace(self, batch: Batch):
        """``(H, H_b)`` as ``(batch, length, hidden)`` arrays; ``H_b`` may be ``None``."""
        with ad.no_grad():
            _, H, Hb = self.represent(batch)
        return _unflatten(H.data, batch.size), (
            None if Hb is None else _unflatten(Hb.data, batch.size)
        )

    def predict_logits(self, batch: Batch) -> np.ndarray:
        """Inference logits shaped ``(batch, length, classes)``."""
        with ad.no_grad():
            res = self.forward(batch, training=False)
        return _unflatten(res.logits.data, batch.size)


class RNODEModel(SequenceModel):
    """Hidden state drifts by the learned ODE between posts, then a cell folds in each post."""

    def __init__(self, config: ModelConfig, rng):
        super().__init__(config)
        dirs = ["", "_b"] if config.bidirectional else [""]
        for d in dirs:
            self.modules[f"dynamics{d}"] = DynamicsNet(
                config.hidden_width,
                config.dynamics_layers,
                activation=config.dynamics_activation,
                time_channel=config.time_channel,
                rng=rng,
            )
            self.modules[f"cell{d}"] = CellParams(
                config.cell, config.input_width, config.hidden_width, rng=rng
            )
        width = config.hidden_width * (
            2 if config.bidirectional and config.aggregation == "concat" else 1
        )
        self.modules["head"] = Head(width, config.head_layers, config.num_classes, rng)

    def _encode(self, direction, x, t, gaps):
        B, L = t.shape
        dyn = self.modules[f"dynamics{direction}"]
        cell = self.modules[f"cell{direction}"]
        solver = self.config.solver
        h = Tensor(np.zeros((B, self.config.hidden_width)))
        t_prev = np.zeros(B)
        out = []
        for i in range(L):
            h = ode_solve(dyn, h, t_prev, t[:, i], solver)
            h, _ = cell_step(cell, h, Tensor(x[:, i]))
            out.append(h)
            t_prev = t[:, i]
        return out


class RecurrentModel(SequenceModel):
    """Discrete LSTM/GRU baselines, optionally bidirectional or gap-augmented."""

    def __init__(self, config: ModelConfig, rng):
        super().__init__(config)
        kind = "lstm" if "LSTM" in config.arch else "gru"
        in_width = config.input_width + (1 if config.arch == "LSTMTimeGap" else 0)
        dirs = ["", "_b"] if config.bidirectional else [""]
        for d in dirs:
            self.modules[f"cell{d}"] = CellParams(kind, in_width, config.hidden_width, rng=rng)
        width = config.hidden_width * (
            2 if config.bidirectional and config.aggregation == "concat" else 1
        )
        self.modules["head"] = Head(width, config.head_layers, config.num_classes, rng)

    def _encode(self, direction, x, t, gaps):
        B, L = t.shape
        cell = self.modules[f"cell{direction}"]
        if self.config.arch == "LSTMTimeGap":
            x = np.concatenate([x, gaps[:, :, None]], axis=2)
        h = Tensor(np.zeros((B, self.config.hidden_width)))
        c = Tensor(np.zeros((B, self.config.hidden_width))) if cell.kind == "lstm" else None
        out = []
        for i in range(L):
            h, c = cell_step(cell, h, Tensor(x[:, i]), c)
            out.append(h)
        return out


class MajorityModel(SequenceModel):
    """Predicts the most frequent training class everywhere; no trainable parameters."""

    def __init__(self, config: ModelConfig, rng=None):
        super().__init__(config)
        self.majority_class = 0

    def fit_labels(self, labels) -> None:
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=self.config.num_classes)
        self.majority_class = int(np.argmax(counts))

    def hidden_trace(self, batch: Batch):
        return None, None

    def forward(self, batch: Batch, training: bool = False, rng=None, dropout=None) -> ForwardResult:
        logits = np.zeros((batch.size * batch.length, self.config.num_classes))
        logits[:, self.majority_class] = 1.0
        return ForwardResult(Tensor(logits))


def build_model(config: ModelConfig, seed: int = 0) -> SequenceModel:
    rng = np.random.default_rng(seed)
    if config.arch in ("RNODE", "BiRNODE"):
        return RNODEModel(config, rng)
    if config.arch == "Majority":
        return MajorityModel(config)
    return RecurrentModel(config, rng)


def count_parameters(model: SequenceModel) -> int:
    return model.count_parameters()


# -- checkpoints -----------------------------------------------------------------


def checkpoint_dict(model: SequenceModel, extra: dict | None = None) -> dict:
    params = {
        name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
        for name, p in model.parameters().items()
    }
    state = {}
    if isinstance(model, MajorityModel):
        state["majority_class"] = model.majority_class
    return {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "params": params,
        "state": state,
        "extra": extra or {},
    }


def model_from_checkpoint(ckpt: dict) -> SequenceModel:
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"not a checkpoint: format {ckpt.get('format')!r}")
    model = build_model(ModelConfig.from_dict(ckpt["config"]))
    params = model.parameters()
    stored = ckpt["params"]
    if set(stored) != set(params):
        raise ContractError("checkpoint parameters do not match the model architecture")
    for name, p in params.items():
        arr = np.array(stored[name]["data"], dtype=np.float64).reshape(stored[name]["shape"])
        if arr.shape != p.shape:
            raise ContractError(f"checkpoint shape mismatch for {name}")
        p.data = arr
    if isinstance(model, MajorityModel):
        model.majority_class = int(ckpt["state"].get("majority_class", 0))
    return model


def save_checkpoint(model: SequenceModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, extra)) + "\n", encoding="utf-8")


def load_checkpoint(path, return_extra: bool = False):
    ckpt = json.loads(Path(path).read_text(encoding="utf-8"))
    model = model_from_checkpoint(ckpt)
    return (model, ckpt.get("extra", {})) if return_extra else model
