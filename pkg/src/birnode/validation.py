"""Input checks that turn user data into validated :class:`TimedSequence` lists."""

from __future__ import annotations

import numpy as np

from .data import TimedSequence, check_timestamps
from .exceptions import ContractError, DataValidationError


def check_sequences(X, y=None, require_labels: bool = False) -> list[TimedSequence]:
    """Coerce ``X`` into a list of sequences, attaching ``y`` when given.

    Items may be :class:`TimedSequence` objects or ``(t, x)`` / ``(t, x, y)``
    tuples.  ``y``, if supplied, is one label array per sequence and replaces
    any labels already present.
    """
    if isinstance(X, TimedSequence):
        X = [X]
    X = list(X)
    if not X:
        raise ContractError("expected at least one sequence")
    if y is not None and len(y) != len(X):
        raise ContractError(f"got {len(y)} label arrays for {len(X)} sequences")
    out = []
    width = None
    for k, item in enumerate(X):
        if isinstance(item, TimedSequence):
            seq = item
        else:
            parts = tuple(item)
            if len(parts) not in (2, 3):
                raise ContractError("sequence tuples must be (t, x) or (t, x, y)")
            seq = TimedSequence(f"seq{k}", *parts)
        if y is not None:
            seq = TimedSequence(seq.event_id, seq.t, seq.x, np.asarray(y[k]))
        if len(seq) == 0:
            raise DataValidationError(f"sequence {k} is empty", field="t")
        check_timestamps(seq.t)
        seq.validate()
        if width is None:
            width = seq.feature_width
        elif seq.feature_width != width:
            raise DataValidationError(
                f"sequence {k} has feature width {seq.feature_width}, expected {width}", field="x"
            )
        if require_labels and seq.y is None:
            raise DataValidationError(f"sequence {k} has no labels", field="y")
        out.append(seq)
    return out


def check_feature_width(seqs, expected: int) -> None:
    got = seqs[0].feature_width
    if got != expected:
        raise DataValidationError(
            f"model expects {expected} features per post, data has {got}", field="x"
        )
