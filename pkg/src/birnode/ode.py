"""Differentiable ODE integration of the hidden state between observation times.

All solvers operate on a batch of hidden states of shape ``(batch, hidden)``
and accept per-row interval endpoints, so every sequence in a minibatch
integrates over its own gap.  Every arithmetic step is recorded on the
gradient tape (discretize-then-optimize).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, NonConvergenceError, NumericalError, TimeOrderError

METHODS = ("euler", "rk4", "dopri5")
TIME_CHANNELS = ("absolute", "gap", "none")
ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid}

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


@dataclass
class SolverConfig:
    """Integration settings.

    Fixed-step methods take ``max(min_steps, ceil(gap * steps_per_unit_time))``
    steps over a positive gap; ``rtol``/``atol``/``max_adaptive_steps`` only
    affect ``dopri5``.
    """

    method: str = "euler"
    steps_per_unit_time: int = 20
    min_steps: int = 1
    rtol: float = 1e-3
    atol: float = 1e-4
    max_adaptive_steps: int = 1000

    def __post_init__(self):
        self.method = str(self.method).lower()
        if self.method not in METHODS:
            raise ContractError(f"solver method must be one of {METHODS}, got {self.method!r}")
        if int(self.steps_per_unit_time) < 1:
            raise ContractError("steps_per_unit_time must be >= 1")
        if int(self.min_steps) < 1:
            raise ContractError("min_steps must be >= 1")
        if not (self.rtol > 0 and self.atol > 0):
            raise ContractError("rtol and atol must be positive")
        if int(self.max_adaptive_steps) < 1:
            raise ContractError("max_adaptive_steps must be >= 1")
        self.steps_per_unit_time = int(self.steps_per_unit_time)
        self.min_steps = int(self.min_steps)
        self.max_adaptive_steps = int(self.max_adaptive_steps)


class DynamicsNet:
    """Feed-forward network ``f(h, t)`` giving dh/dt.

    The input is the hidden state, plus one time column unless
    ``time_channel == "none"``.  The time column carries the absolute time
    (``"absolute"``) or the length of the interval being integrated
    (``"gap"``).  Hidden layers use ``activation``; the output layer is
    linear.
    """

    def __init__(
        self,
        hidden_width: int,
        layer_widths=(64,),
        activation: str = "tanh",
        time_channel: str = "absolute",
        rng: np.random.Generator | None = None,
        init: str = "uniform",
    ):
        if time_channel not in TIME_CHANNELS:
            raise ContractError(f"time_channel must be one of {TIME_CHANNELS}")
        if activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {sorted(ACTIVATIONS)}")
        self.hidden_width = int(hidden_width)
        self.layer_widths = tuple(int(w) for w in layer_widths)
        self.activation = activation
        self.time_channel = time_channel
        in_width = self.hidden_width + (0 if time_channel == "none" else 1)
        widths = (in_width, *self.layer_widths, self.hidden_width)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            if init == "zero":
                w = np.zeros((a, b))
            else:
                k = 1.0 / math.sqrt(a)
                w = rng.uniform(-k, k, size=(a, b))
            self.weights.append(ad.parameter(w, name=f"W{i}"))
            self.biases.append(ad.parameter(np.zeros(b), name=f"b{i}"))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    @staticmethod
    def count_for(hidden_width: int, layer_widths, time_channel: str = "absolute") -> int:
        in_width = hidden_width + (0 if time_channel == "none" else 1)
        widths = (in_width, *layer_widths, hidden_width)
        return sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))

    def __call__(self, h: Tensor, t, gap=None) -> Tensor:
        batch = h.shape[0]
        if self.time_channel == "none":
            z = h
        else:
            col = t if self.time_channel == "absolute" else (0.0 if gap is None else gap)
            col = np.broadcast_to(np.asarray(col, dtype=np.float64), (batch,)).reshape(batch, 1)
            z = ad.concat([h, Tensor(col)], axis=1)
        act = ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = ad.add(ad.matmul(z, w), b)
            if i < last:
                z = act(z)
        return z


def fixed_step_count(gap, steps_per_unit_time: int, min_steps: int = 1) -> np.ndarray:
    """Steps taken over each gap; zero-length gaps take no steps."""
    gap = np.asarray(gap, dtype=np.float64)
    # round away float noise such as 0.05 * 20 == 1.0000000000000002
    n = np.ceil(np.round(gap * steps_per_unit_time, 9)).astype(np.int64)
    n = np.maximum(n, min_steps)
    return np.where(gap > 0, n, 0)


def _check_interval(t0, t1, batch):
    t0 = np.broadcast_to(np.asarray(t0, dtype=np.float64), (batch,))
    t1 = np.broadcast_to(np.asarray(t1, dtype=np.float64), (batch,))
    if np.any(t1 < t0):
        bad = int(np.argmax(t1 < t0))
        raise TimeOrderError(f"ode_solve: t1={t1[bad]} precedes t0={t0[bad]}")
    return t0, t1


def _check_finite(x: Tensor, what: str):
    if not np.all(np.isfinite(x.data)):
        raise NumericalError(f"non-finite value in {what}")


def _fixed_step_solve(f, h0: Tensor, t0, t1, cfg: SolverConfig) -> Tensor:
    gap = t1 - t0
    n = fixed_step_count(gap, cfg.steps_per_unit_time, cfg.min_steps)
    dt = np.where(n > 0, gap / np.maximum(n, 1), 0.0)
    h = h0
    for k in range(int(n.max(initial=0))):
        active = k < n
        step = np.where(active, dt, 0.0)
        col = step[:, None]
        t = t0 + k * dt
        if cfg.method == "euler":
            h = ad.add(h, ad.mul(col, f(h, t, gap)))
        else:
            half = col * 0.5
            k1 = f(h, t, gap)
            k2 = f(ad.add(h, ad.mul(half, k1)), t + 0.5 * step, gap)
            k3 = f(ad.add(h, ad.mul(half, k2)), t + 0.5 * step, gap)
            k4 = f(ad.add(h, ad.mul(col, k3)), t + step, gap)
            incr = ad.add(ad.add(k1, ad.scale(k2, 2.0)), ad.add(ad.scale(k3, 2.0), k4))
            h = ad.add(h, ad.mul(col / 6.0, incr))
        _check_finite(h, f"{cfg.method} step {k}")
    return h


def dopri5_step(f, h: Tensor, t: float, dt: float, rtol: float, atol: float):
    """One attempted Dormand-Prince 5(4) step of ``dh/dt = f(h, t)``.

    Returns ``(h_next, dt_next, accepted)``.  A rejected step returns ``h``
    itself so the caller can retry with ``dt_next``.
    """
    if not dt > 0:
        raise ContractError(f"dopri5_step: dt must be positive, got {dt}")
    ks: list[Tensor] = []
    for i in range(7):
        if i == 0:
            stage = h
        else:
            acc = None
            for a, k in zip(_A[i], ks):
                if a == 0.0:
                    continue
                term = ad.scale(k, a * dt)
                acc = term if acc is None else ad.add(acc, term)
            stage = ad.add(h, acc)
        k = f(stage, t + _C[i] * dt)
        if not np.all(np.isfinite(k.data)):
            raise NumericalError(f"dopri5_step: non-finite stage {i} at t={t}, dt={dt}")
        ks.append(k)
    # 7th stage evaluates at the 5th-order solution (FSAL)
    h5 = ad.add(h, _weighted(ks[:6], _B5[:6], dt))
    diff = sum((b5 - b4) * k.data for b5, b4, k in zip(_B5, _B4, ks)) * dt
    scale_ = atol + rtol * np.abs(h.data)
    err = float(np.max(np.abs(diff) / scale_)) if diff.size else 0.0
    if err == 0.0:
        factor = 5.0
    else:
        factor = min(5.0, max(0.2, 0.9 * err ** (-0.2)))
    accepted = err <= 1.0
    return (h5 if accepted else h), dt * factor, accepted


def _weighted(ks, coeffs, dt) -> Tensor:
    acc = None
    for c, k in zip(coeffs, ks):
        if c == 0.0:
            continue
        term = ad.scale(k, c * dt)
        acc = term if acc is None else ad.add(acc, term)
    return acc


def _initial_step(rhs, h: Tensor, rtol: float, atol: float) -> float:
    # Hairer-Norsett-Wanner starting step on the unit interval, order 5
    y = h.data
    f0 = rhs(Tensor(y), 0.0).data
    sc = atol + rtol * np.abs(y)
    d0 = float(np.sqrt(np.mean((y / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, 1.0)
    y1 = y + h0 * f0
    f1 = rhs(Tensor(y1), h0).data
    d2 = float(np.sqrt(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, 1.0)


def _dopri5_solve(f, h0: Tensor, t0, t1, cfg: SolverConfig, stats: dict | None) -> Tensor:
    gap = t1 - t0
    gap_col = Tensor(gap[:, None])

    # integrate every row over its own interval via s in [0, 1], t = t0 + s * gap
    def rhs(h, s):
        return ad.mul(gap_col, f(h, t0 + s * gap, gap))

    s = 0.0
    h = h0
    dt = _initial_step(rhs, h0, cfg.rtol, cfg.atol)
    attempts = accepted_steps = 0
    while s < 1.0:
        if attempts >= cfg.max_adaptive_steps:
            raise NonConvergenceError(
                f"dopri5 exceeded {cfg.max_adaptive_steps} steps", interval=(t0.copy(), t1.copy())
            )
        dt = min(dt, 1.0 - s)
        h_next, dt_next, ok = dopri5_step(rhs, h, s, dt, cfg.rtol, cfg.atol)
        attempts += 1
        if ok:
            accepted_steps += 1
            s = 1.0 if dt >= 1.0 - s else s + dt
            h = h_next
        dt = dt_next
    if stats is not None:
        stats["accepted"] = accepted_steps
        stats["attempts"] = attempts
    return h


def ode_solve(f, h0: Tensor, t0, t1, cfg: SolverConfig, stats: dict | None = None) -> Tensor:
    """Integrate ``dh/dt = f(h, t)`` from ``t0`` to ``t1`` for each batch row.

    ``t0`` and ``t1`` are scalars or arrays of shape ``(batch,)``.  Rows with
    ``t1 == t0`` come back unchanged.  ``f`` is called as ``f(h, t, gap)``
    where ``t`` and ``gap`` are per-row arrays.  If ``stats`` is a dict the
    adaptive solver records its accepted and attempted step counts there.
    """
    if h0.data.ndim != 2:
        raise ContractError(f"ode_solve: h0 must be (batch, hidden), got {h0.shape}")
    t0, t1 = _check_interval(t0, t1, h0.shape[0])
    if np.all(t1 == t0):
        return h0
    if cfg.method == "dopri5":
        return _dopri5_solve(f, h0, t0, t1, cfg, stats)
    return _fixed_step_solve(f, h0, t0, t1, cfg)
