"""Timed event sequences: loading, normalisation, splitting and batching.

Dataset files are JSON Lines.  The first line is a header::

    {"header": true, "feature_width": 3, "num_classes": 4, "raw_time": false}

and every further line is one post::

    {"event": "ferguson", "i": 0, "t": 0.0, "x": [0.1, 0.2, 0.3], "y": 2}

Posts are grouped by ``event`` and ordered by ``i``.  When ``raw_time`` is
true, ``t`` holds epoch seconds that are min-max normalised per event at load
time.  A header with ``"labeled": false`` allows records without ``y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    ContractError,
    DataValidationError,
    NormalizationError,
    ParseError,
    SplitError,
    TimeOrderError,
)

SPLIT_MODES = ("seen-event", "unseen-event", "sequence")


class TimedSequence:
    """One event's posts in time order.

    ``t`` has shape ``(n,)``, ``x`` shape ``(n, feature_width)`` and ``y``
    shape ``(n,)`` (or ``None`` for unlabeled data).
    """

    __slots__ = ("event_id", "t", "x", "y")

    def __init__(self, event_id: str, t, x, y=None):
        self.event_id = str(event_id)
        self.t = np.asarray(t, dtype=np.float64).reshape(-1)
        x = np.asarray(x, dtype=np.float64)
        self.x = x.reshape(len(self.t), -1) if x.size else x.reshape(len(self.t), 0)
        self.y = None if y is None else np.asarray(y, dtype=np.int64).reshape(-1)

    def __len__(self):
        return len(self.t)

    @property
    def feature_width(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TimedSequence):
            return NotImplemented
        same_y = (self.y is None and other.y is None) or (
            self.y is not None and other.y is not None and np.array_equal(self.y, other.y)
        )
        return (
            self.event_id == other.event_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and same_y
        )

    def __repr__(self):
        return f"TimedSequence({self.event_id!r}, n={len(self)}, width={self.feature_width})"

    def subsequence(self, start: int, stop: int) -> "TimedSequence":
        y = None if self.y is None else self.y[start:stop]
        return TimedSequence(self.event_id, self.t[start:stop], self.x[start:stop], y)

    def validate(self, num_classes: int | None = None) -> None:
        if self.y is not None and len(self.y) != len(self.t):
            raise DataValidationError(f"{self.event_id}: y length differs from t", field="y")
        if len(self.x) != len(self.t):
            raise DataValidationError(f"{self.event_id}: x length differs from t", field="x")
        if not np.all(np.isfinite(self.t)):
            raise DataValidationError(f"{self.event_id}: non-finite timestamp", field="t")
        if len(self.t) and (self.t[0] < 0 or self.t[-1] > 1):
            raise DataValidationError(
                f"{self.event_id}: timestamps must lie in [0, 1]", field="t"
            )
        if np.any(np.diff(self.t) < 0):
            raise DataValidationError(f"{self.event_id}: timestamps not nondecreasing", field="t")
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError(f"{self.event_id}: non-finite feature", field="x")
        if self.y is not None and num_classes is not None:
            if np.any(self.y < 0) or np.any(self.y >= num_classes):
                raise DataValidationError(
                    f"{self.event_id}: label outside [0, {num_classes})", field="y"
                )


def check_timestamps(t: np.ndarray) -> None:
    """Raise if ``t`` is not a nondecreasing sequence inside [0, 1]."""
    t = np.asarray(t)
    if np.any(np.diff(t) < 0):
        raise TimeOrderError("timestamps must be nondecreasing")
    if t.size and (t.min() < 0 or t.max() > 1):
        raise NormalizationError("timestamps must be normalized to [0, 1]")


def normalize_times(raw: Sequence[float]) -> np.ndarray:
    """Min-max scale timestamps to [0, 1]; a constant input maps to zeros."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.size == 0:
        raise ContractError("normalize_times: empty input")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def reversed_times(t: Sequence[float]) -> np.ndarray:
    """Reverse-axis times ``t'_i = t_N - t_{N-i}`` for i = 1..N with ``t_0 = 0``.

    ``t`` holds ``t_1..t_N``; the result is aligned with the reversed posts,
    so entry ``i`` belongs to original post ``N - i``.

    >>> reversed_times([0.2, 0.5, 1.0]).tolist()
    [0.5, 0.8, 1.0]
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size == 0:
        return t.copy()
    padded = np.concatenate([[0.0], t])
    return t[-1] - padded[::-1][1:]


@dataclass
class SplitSpec:
    """How to carve data into train, validation and test.

    ``seen-event`` splits every event chronologically, ``unseen-event`` holds
    out one whole event, and ``sequence`` partitions whole sequences in
    their given order (used for many short synthetic sequences).
    """

    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    mode: str = "seen-event"
    held_out: str | None = None

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ContractError("split ratios must be three positive numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ContractError("split ratios must sum to 1")
        if self.mode not in SPLIT_MODES:
            raise ContractError(f"split mode must be one of {SPLIT_MODES}")
        if self.mode == "unseen-event" and not self.held_out:
            raise ContractError("unseen-event split needs a held-out event id")


def _boundaries(n: int, ratios) -> tuple[int, int]:
    a = math.floor(ratios[0] * n + 1e-9)
    b = math.floor((ratios[0] + ratios[1]) * n + 1e-9)
    return a, b


def chronological_split(seq: TimedSequence, spec: SplitSpec | None = None):
    """Contiguous train/val/test pieces of one time-sorted event."""
    spec = spec or SplitSpec()
    n = len(seq)
    if n < 5:
        raise SplitError(f"{seq.event_id}: need at least 5 posts to split, got {n}")
    if np.any(np.diff(seq.t) < 0):
        raise TimeOrderError(f"{seq.event_id}: posts are not time-sorted")
    a, b = _boundaries(n, spec.ratios)
    return seq.subsequence(0, a), seq.subsequence(a, b), seq.subsequence(b, n)


def unseen_event_split(events: Sequence[TimedSequence], held_out: str, val_fraction: float = 0.2):
    """Hold out one event for testing; the last posts of every other event validate."""
    if len(events) < 2:
        raise SplitError("unseen-event split needs at least two events")
    ids = [e.event_id for e in events]
    if held_out not in ids:
        raise KeyError(f"held-out event {held_out!r} not in {ids}")
    train, val, test = [], [], []
    for e in events:
        if e.event_id == held_out:
            test.append(e)
            continue
        cut = math.floor((1.0 - val_fraction) * len(e) + 1e-9)
        train.append(e.subsequence(0, cut))
        val.append(e.subsequence(cut, len(e)))
    return train, val, test


def sequence_split(seqs: Sequence[TimedSequence], spec: SplitSpec | None = None):
    """Partition whole sequences by count with floor boundaries."""
    spec = spec or SplitSpec(mode="sequence")
    n = len(seqs)
    if n < 3:
        raise SplitError(f"need at least 3 sequences to split, got {n}")
    a, b = _boundaries(n, spec.ratios)
    return list(seqs[:a]), list(seqs[a:b]), list(seqs[b:])


def split_dataset(seqs: Sequence[TimedSequence], spec: SplitSpec):
    """Apply ``spec`` to a list of sequences; returns three lists."""
    if spec.mode == "sequence":
        return sequence_split(seqs, spec)
    if spec.mode == "unseen-event":
        return unseen_event_split(seqs, spec.held_out, val_fraction=spec.ratios[1])
    train, val, test = [], [], []
    for s in seqs:
        a, b, c = chronological_split(s, spec)
        train.append(a)
        val.append(b)
        test.append(c)
    return train, val, test


# -- synthetic gap task ---------------------------------------------------------


def median_gap(length: int) -> float:
    """Median spacing of ``length`` sorted uniforms on [0, 1] (Beta(1, length))."""
    return 1.0 - 0.5 ** (1.0 / length)


@dataclass
class GapTaskSpec:
    """Parameters of the synthetic irregular-arrival task.

    Times are sorted uniform draws on [0, 1]; a post is labelled 1 when the
    gap since the previous post (or since 0) exceeds ``gamma``.  Features
    are standard normal noise independent of the times.  ``noise`` is the
    probability of flipping each label.
    """

    n_sequences: int = 1000
    length: int = 20
    feature_width: int = 4
    gamma: float | None = None
    noise: float = 0.0

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = median_gap(self.length)
        if not 0.0 < self.gamma < 1.0:
            raise ContractError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_sequences < 1 or self.length < 1 or self.feature_width < 1:
            raise ContractError("n_sequences, length and feature_width must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ContractError("noise must lie in [0, 1]")


def gap_labels(t: np.ndarray, gamma: float) -> np.ndarray:
    gaps = np.diff(np.concatenate([[0.0], t]))
    return (gaps > gamma).astype(np.int64)


def generate_synthetic(spec: GapTaskSpec, seed: int = 0) -> list[TimedSequence]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(spec.n_sequences):
        t = np.sort(rng.uniform(0.0, 1.0, size=spec.length))
        x = rng.standard_normal((spec.length, spec.feature_width))
        y = gap_labels(t, spec.gamma)
        if spec.noise > 0:
            flip = rng.uniform(size=spec.length) < spec.noise
            y = np.where(flip, 1 - y, y)
        out.append(TimedSequence(f"seq{k:05d}", t, x, y))
    return out


# -- JSONL ----------------------------------------------------------------------------


@dataclass
class DatasetInfo:
    feature_width: int
    num_classes: int
    raw_time: bool = False
    labeled: bool = True


def save_jsonl(seqs: Iterable[TimedSequence], path, num_classes: int | None = None) -> None:
    seqs = list(seqs)
    width = seqs[0].feature_width if seqs else 0
    labeled = all(s.y is not None for s in seqs)
    if num_classes is None:
        num_classes = max([int(s.y.max()) + 1 for s in seqs if s.y is not None and len(s)] + [2])
    header = {
        "header": True,
        "feature_width": width,
        "num_classes": int(num_classes),
        "raw_time": False,
        "labeled": labeled,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in seqs:
            for i in range(len(s)):
                rec = {"event": s.event_id, "i": i, "t": float(s.t[i]), "x": s.x[i].tolist()}
                if labeled:
                    rec["y"] = int(s.y[i])
                fh.write(json.dumps(rec) + "\n")


def read_jsonl_header(path) -> DatasetInfo:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return _parse_header(first)


def _parse_header(line: str) -> DatasetInfo:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line 1: invalid JSON header ({exc.msg})", line=1) from None
    if not isinstance(rec, dict) or not rec.get("header"):
        raise ParseError("line 1: first record must be a header", line=1)
    try:
        return DatasetInfo(
            feature_width=int(rec["feature_width"]),
            num_classes=int(rec["num_classes"]),
            raw_time=bool(rec.get("raw_time", False)),
            labeled=bool(rec.get("labeled", True)),
        )
    except KeyError as exc:
        raise ParseError(f"line 1: header missing {exc.args[0]!r}", line=1) from None


def load_jsonl(path, return_info: bool = False):
    """Read a dataset file into a list of sequences (in first-seen event order)."""
    path = Path(path)
    events: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise ParseError("line 1: missing header", line=1)
    info = _parse_header(lines[0])
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(rec, dict):
            raise ParseError(f"line {lineno}: record must be an object", line=lineno)
        required = ("event", "i", "t", "x") + (("y",) if info.labeled else ())
        for key in required:
            if key not in rec:
                raise ParseError(f"line {lineno}: missing field {key!r}", line=lineno)
        x = rec["x"]
        if not isinstance(x, list) or len(x) != info.feature_width:
            raise DataValidationError(
                f"line {lineno}: x must have {info.feature_width} numbers", field="x"
            )
        y = rec.get("y") if info.labeled else None
        events.setdefault(str(rec["event"]), []).append((int(rec["i"]), float(rec["t"]), x, y))
    seqs = []
    for event_id, rows in events.items():
        rows.sort(key=lambda r: r[0])
        raw_t = np.array([r[1] for r in rows], dtype=np.float64)
        if np.any(np.diff(raw_t) < 0):
            raise DataValidationError(f"{event_id}: timestamps not nondecreasing", field="t")
        t = normalize_times(raw_t) if info.raw_time else raw_t
        x = np.array([r[2] for r in rows], dtype=np.float64).reshape(len(rows), info.feature_width)
        y = np.array([r[3] for r in rows], dtype=np.int64) if info.labeled else None
        s = TimedSequence(event_id, t, x, y)
        s.validate(info.num_classes)
        seqs.append(s)
    return (seqs, info) if return_info else seqs


# -- batching ------------------------------------------------------------------------


@dataclass
class Batch:
    """Sequences padded to a common length.

    Arrays are ``(batch, length[, width])``; padded slots repeat the last
    valid timestamp, carry zero features and are excluded by ``mask``.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    event_ids: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.t.shape[0]

    @property
    def length(self) -> int:
        return self.t.shape[1]

    def gaps(self) -> np.ndarray:
        """Inter-arrival times with ``t_0 = 0``; zero on padding."""
        prev = np.concatenate([np.zeros((self.size, 1)), self.t[:, :-1]], axis=1)
        return (self.t - prev) * self.mask

    def reverse_index(self) -> np.ndarray:
        """Per-row position permutation reversing the valid prefix."""
        pos = np.arange(self.length)[None, :]
        n = self.lengths[:, None]
        return np.where(pos < n, n - 1 - pos, pos)

    def reversed_t(self) -> np.ndarray:
        out = np.empty_like(self.t)
        for b in range(self.size):
            n = int(self.lengths[b])
            out[b, :n] = reversed_times(self.t[b, :n])
            out[b, n:] = out[b, n - 1] if n else 0.0
        return out


def make_batch(seqs: Sequence[TimedSequence]) -> Batch:
    if not seqs:
        raise ContractError("make_batch: no sequences")
    if any(len(s) == 0 for s in seqs):
        raise ContractError("make_batch: empty sequence")
    width = seqs[0].feature_width
    L = max(len(s) for s in seqs)
    B = len(seqs)
    t = np.zeros((B, L))
    x = np.zeros((B, L, width))
    y = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    for b, s in enumerate(seqs):
        if s.feature_width != width:
            raise DataValidationError("sequences in a batch differ in feature width", field="x")
        check_timestamps(s.t)
        n = len(s)
        t[b, :n] = s.t
        t[b, n:] = s.t[-1]
        x[b, :n] = s.x
        if s.y is not None:
            y[b, :n] = s.y
        mask[b, :n] = True
        lengths[b] = n
    return Batch(t, x, y, mask, lengths, [s.event_id for s in seqs])


def chunk_sequences(seqs: Sequence[TimedSequence], max_length: int | None) -> list[TimedSequence]:
    """Cut long events into consecutive windows of at most ``max_length`` posts."""
    if not max_length:
        return list(seqs)
    out = []
    for s in seqs:
        for start in range(0, len(s), max_length):
            out.append(s.subsequence(start, min(start + max_length, len(s))))
    return out


def iter_batches(seqs: Sequence[TimedSequence], batch_size: int, rng=None):
    """Yield padded batches; shuffles sequence order when ``rng`` is given."""
    order = np.arange(len(seqs))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield make_batch([seqs[i] for i in order[start : start + batch_size]])
