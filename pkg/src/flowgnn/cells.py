"""Recurrent cell variants: plain RNN, GRU, and LSTM.

All three act on the concatenation ``[h_prev, x]`` with one fused weight
matrix of shape (hidden, input + hidden) per gate, so the trainable
parameter counts stand in exact ratio 1:3:4 for fixed dimensions.

Step equations:

    RNN     h = tanh(W_h.[h_prev, x] + b_h)

    GRU     z = sigmoid(W_z.[h_prev, x] + b_z)          update gate
            r = sigmoid(W_r.[h_prev, x] + b_r)          reset gate
            cand = tanh(W.[r*h_prev, x] + b)            candidate
            h = (1 - z)*h_prev + z*cand

    LSTM    f = sigmoid(W_f.[h_prev, x] + b_f)          forget gate
            i = sigmoid(W_i.[h_prev, x] + b_i)          input gate
            o = sigmoid(W_o.[h_prev, x] + b_o)          output gate
            cand = tanh(W_c.[h_prev, x] + b_c)          candidate cell
            c = f*c_prev + i*cand
            h = o*tanh(c)

Gates are evaluated in the order listed above so independent
re-implementations can be compared bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numcore as nc
from .errors import ShapeError
from .numcore import Tensor

__all__ = ["CellKind", "CellParams", "CellState", "cell_step", "param_count", "init_params"]


class CellKind(str, Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"

    @classmethod
    def parse(cls, name: str) -> "CellKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ShapeError(f"unknown cell kind {name!r}; expected rnn, gru, or lstm")


# weight/bias names per kind, in evaluation order; the GRU candidate keeps
# the bare names W / b
_GATE_NAMES: dict[CellKind, tuple[str, ...]] = {
    CellKind.RNN: ("h",),
    CellKind.GRU: ("z", "r", ""),
    CellKind.LSTM: ("f", "i", "o", "c"),
}


def _weight_key(gate: str) -> str:
    return f"W_{gate}" if gate else "W"


def _bias_key(gate: str) -> str:
    return f"b_{gate}" if gate else "b"


@dataclass
class CellParams:
    """Gate weights (hidden, input+hidden) and biases (hidden,) for one cell."""

    kind: CellKind
    input_dim: int
    hidden_dim: int
    weights: dict[str, Tensor] = field(default_factory=dict)
    biases: dict[str, Tensor] = field(default_factory=dict)

    def tensors(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in a stable order: per gate, weight then bias."""
        out = []
        for gate in _GATE_NAMES[self.kind]:
            out.append((_weight_key(gate), self.weights[_weight_key(gate)]))
            out.append((_bias_key(gate), self.biases[_bias_key(gate)]))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.tensors()]

    def count(self) -> int:
        return sum(t.values.size for t in self.parameters())


@dataclass
class CellState:
    """Hidden vector, plus the LSTM companion cell vector."""

    h: Tensor
    c: Tensor | None = None


def param_count(kind: CellKind, d: int, h: int) -> int:
    """Trainable scalar count: gates x (d*h + h^2 + h), gates = 1 / 3 / 4."""
    if d < 1 or h < 1:
        raise ShapeError(f"param_count: dimensions must be positive, got d={d}, h={h}")
    gates = len(_GATE_NAMES[CellKind(kind)])
    return gates * (d * h + h * h + h)


def init_params(kind: CellKind, d: int, h: int, seed: int) -> CellParams:
    """Glorot-style uniform init over the concatenated input.

    Weights are uniform in +-sqrt(6 / (d + 2h)); biases start at zero except
    the LSTM forget bias, which starts at 1.0 so the cell state survives
    early training.
    """
    kind = CellKind(kind)
    if d < 1 or h < 1:
        raise ShapeError(f"init_params: dimensions must be positive, got d={d}, h={h}")
    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (d + 2 * h))
    params = CellParams(kind=kind, input_dim=d, hidden_dim=h)
    for gate in _GATE_NAMES[kind]:
        w = rng.uniform(-bound, bound, size=(h, d + h))
        b = np.ones(h) if (kind is CellKind.LSTM and gate == "f") else np.zeros(h)
        params.weights[_weight_key(gate)] = Tensor(w, requires_grad=True)
        params.biases[_bias_key(gate)] = Tensor(b, requires_grad=True)
    return params


def _gate(params: CellParams, gate: str, x: Tensor) -> Tensor:
    return nc.add(nc.matmul(params.weights[_weight_key(gate)], x), params.biases[_bias_key(gate)])


def cell_step(kind: CellKind, params: CellParams, state: CellState, x_t: Tensor) -> CellState:
    """One recurrent step; differentiable end to end."""
    kind = CellKind(kind)
    if kind is not params.kind:
        raise ShapeError(f"cell_step: kind {kind.value} does not match params ({params.kind.value})")
    if x_t.shape != (params.input_dim,):
        raise ShapeError(
            f"cell_step: input shape {x_t.shape} does not match input_dim {params.input_dim}"
        )
    if state.h.shape != (params.hidden_dim,):
        raise ShapeError(
            f"cell_step: hidden shape {state.h.shape} does not match hidden_dim {params.hidden_dim}"
        )
    h_prev = state.h
    hx = nc.concat_last_axis(h_prev, x_t)

    if kind is CellKind.RNN:
        h = nc.tanh(_gate(params, "h", hx))
        return CellState(h=h)

    if kind is CellKind.GRU:
        z = nc.sigmoid(_gate(params, "z", hx))
        r = nc.sigmoid(_gate(params, "r", hx))
        gated = nc.concat_last_axis(nc.hadamard(r, h_prev), x_t)
        cand = nc.tanh(_gate(params, "", gated))
        ones = nc.constant(np.ones(params.hidden_dim))
        keep = nc.sub(ones, z)
        h = nc.add(nc.hadamard(keep, h_prev), nc.hadamard(z, cand))
        return CellState(h=h)

    # LSTM
    if state.c is None:
        raise ShapeError("cell_step: LSTM state is missing the cell vector c")
    if state.c.shape != (params.hidden_dim,):
        raise ShapeError(
            f"cell_step: cell-state shape {state.c.shape} does not match hidden_dim {params.hidden_dim}"
        )
    f = nc.sigmoid(_gate(params, "f", hx))
    i = nc.sigmoid(_gate(params, "i", hx))
    o = nc.sigmoid(_gate(params, "o", hx))
    cand = nc.tanh(_gate(params, "c", hx))
    c = nc.add(nc.hadamard(f, state.c), nc.hadamard(i, cand))
    h = nc.hadamard(o, nc.tanh(c))
    return CellState(h=h, c=c)


def zero_state(kind: CellKind, hidden_dim: int) -> CellState:
    c = Tensor(np.zeros(hidden_dim)) if CellKind(kind) is CellKind.LSTM else None
    return CellState(h=Tensor(np.zeros(hidden_dim)), c=c)
