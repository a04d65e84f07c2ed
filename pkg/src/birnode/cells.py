"""Single-step recurrent updates: vanilla tanh, GRU and LSTM."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError

GATES = {"vanilla": 1, "gru": 3, "lstm": 4}


class CellParams:
    """Weights of one recurrent cell.

    Gate blocks are stacked column-wise in ``Wx`` (input, G*hidden),
    ``Wh`` (hidden, G*hidden) and ``b`` (G*hidden) with G = 1, 3, 4 for
    vanilla, GRU, LSTM.  LSTM gate order is input, forget, candidate, output;
    GRU order is reset, update, candidate.
    """

    def __init__(self, kind: str, input_width: int, hidden_width: int, rng=None, init="uniform"):
        kind = kind.lower()
        if kind not in GATES:
            raise ContractError(f"cell kind must be one of {sorted(GATES)}, got {kind!r}")
        if int(input_width) < 1 or int(hidden_width) < 1:
            raise ContractError(
                f"cell widths must be positive, got input={input_width} hidden={hidden_width}"
            )
        self.kind = kind
        self.input_width = int(input_width)
        self.hidden_width = int(hidden_width)
        g = GATES[kind] * self.hidden_width
        rng = rng if rng is not None else np.random.default_rng(0)
        if init == "zero":
            wx = np.zeros((self.input_width, g))
            wh = np.zeros((self.hidden_width, g))
        else:
            k = 1.0 / math.sqrt(self.hidden_width)
            wx = rng.uniform(-k, k, size=(self.input_width, g))
            wh = rng.uniform(-k, k, size=(self.hidden_width, g))
        b = np.zeros(g)
        if kind == "lstm" and init != "zero":
            b[self.hidden_width : 2 * self.hidden_width] = 1.0
        self.Wx = ad.parameter(wx, name="Wx")
        self.Wh = ad.parameter(wh, name="Wh")
        self.b = ad.parameter(b, name="b")

    def parameters(self) -> dict[str, Tensor]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}


def param_count(cell: CellParams) -> int:
    return GATES[cell.kind] * (cell.input_width + cell.hidden_width + 1) * cell.hidden_width


def _gate(t: Tensor, i: int, width: int) -> Tensor:
    return ad.slice_(t, i * width, (i + 1) * width, axis=1)


def cell_step(cell: CellParams, h_prev: Tensor, x: Tensor, c_prev: Tensor | None = None):
    """Advance the cell by one observation; returns ``(h, c)``.

    ``c`` is ``None`` except for LSTM cells.
    """
    if x.data.ndim != 2 or x.shape[1] != cell.input_width:
        raise DimensionError(f"cell_step: input shape {x.shape} vs input width {cell.input_width}")
    if h_prev.data.ndim != 2 or h_prev.shape[1] != cell.hidden_width:
        raise DimensionError(
            f"cell_step: hidden shape {h_prev.shape} vs hidden width {cell.hidden_width}"
        )
    H = cell.hidden_width
    if cell.kind == "vanilla":
        z = ad.add(ad.add(ad.matmul(x, cell.Wx), ad.matmul(h_prev, cell.Wh)), cell.b)
        return ad.tanh(z), None
    if cell.kind == "lstm":
        if c_prev is None:
            raise ContractError("cell_step: LSTM requires c_prev")
        z = ad.add(ad.add(ad.matmul(x, cell.Wx), ad.matmul(h_prev, cell.Wh)), cell.b)
        i = ad.sigmoid(_gate(z, 0, H))
        f = ad.sigmoid(_gate(z, 1, H))
        g = ad.tanh(_gate(z, 2, H))
        o = ad.sigmoid(_gate(z, 3, H))
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
        return ad.mul(o, ad.tanh(c)), c
    gx = ad.add(ad.matmul(x, cell.Wx), cell.b)
    gh = ad.matmul(h_prev, cell.Wh)
    r = ad.sigmoid(ad.add(_gate(gx, 0, H), _gate(gh, 0, H)))
    u = ad.sigmoid(ad.add(_gate(gx, 1, H), _gate(gh, 1, H)))
    n = ad.tanh(ad.add(_gate(gx, 2, H), ad.mul(r, _gate(gh, 2, H))))
    # u -> 0 keeps the previous state
    return ad.add(h_prev, ad.mul(u, ad.sub(n, h_prev))), None
