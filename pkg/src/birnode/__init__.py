"""Recurrent neural ODE classifiers for irregularly timed post sequences."""

from .autodiff import Tensor, backward, no_grad, zero_grads
from .data import (
    GapTaskSpec,
    SplitSpec,
    TimedSequence,
    generate_synthetic,
    load_jsonl,
    normalize_times,
    save_jsonl,
)
from .models import ModelConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .ode import DynamicsNet, SolverConfig, ode_solve
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
