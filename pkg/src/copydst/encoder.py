"""Shared bidirectional LSTM encoder over (system actions ; user utterance)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .embeddings import PAD, tokenize


@dataclass(frozen=True)
class SystemAct:
    act: str
    slot: str | None = None
    value: str | None = None

    def tokens(self) -> list[str]:
        out = tokenize(self.act)
        if self.slot:
            out += tokenize(self.slot)
        if self.value:
            out += tokenize(self.value)
        return out

    def __str__(self) -> str:
        if self.slot and self.value:
            return f"{self.act}({self.slot}={self.value})"
        if self.slot:
            return f"{self.act}({self.slot})"
        return f"{self.act}()"


def linearize_turn(
    system_actions: Sequence[SystemAct | tuple], utterance: Sequence[str]
) -> tuple[list[str], bool]:
    """Flatten actions then utterance into one token list.

    Returns ``(tokens, degenerate)``; a turn with neither actions nor words
    becomes a single padding token and is flagged degenerate.
    """
    tokens: list[str] = []
    for act in system_actions:
        if not isinstance(act, SystemAct):
            act = SystemAct(*act)
        tokens.extend(act.tokens())
    tokens.extend(utterance)
    if not tokens:
        return [PAD], True
    return tokens, False


class LstmCell:
    """Gate order in all stacked matrices: input, forget, cell, output."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator | None = None, prefix: str = "lstm"):
        self.input_dim = input_dim
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        rng = rng or np.random.default_rng(0)
        self.w_ih = ad.parameter(rng.uniform(-bound, bound, (4 * hidden, input_dim)), f"{prefix}.w_ih")
        self.w_hh = ad.parameter(rng.uniform(-bound, bound, (4 * hidden, hidden)), f"{prefix}.w_hh")
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        self.bias = ad.parameter(bias, f"{prefix}.bias")

    def parameters(self) -> list[Tensor]:
        return [self.w_ih, self.w_hh, self.bias]


def lstm_step(cell: LstmCell, prev_h: Tensor, prev_c: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    """One recurrence step composed from primitive ops."""
    h = cell.hidden
    x, prev_h, prev_c = ad.as_tensor(x), ad.as_tensor(prev_h), ad.as_tensor(prev_c)
    if x.shape != (cell.input_dim,) or prev_h.shape != (h,) or prev_c.shape != (h,):
        raise DimensionError(
            f"lstm_step: got x {x.shape}, h {prev_h.shape}, c {prev_c.shape} "
            f"for cell ({cell.input_dim} -> {h})"
        )
    z = cell.w_ih @ x + cell.w_hh @ prev_h + cell.bias
    i = ad.sigmoid(z[0:h])
    f = ad.sigmoid(z[h : 2 * h])
    g = ad.tanh(z[2 * h : 3 * h])
    o = ad.sigmoid(z[3 * h : 4 * h])
    c = f * prev_c + i * g
    return o * ad.tanh(c), c


def lstm_sequence(cell: LstmCell, inputs: Tensor, reverse: bool = False) -> Tensor:
    """Run ``cell`` over the rows of ``inputs`` from a zero state; one graph node.

    Output row ``t`` is the hidden state after consuming input row ``t``
    (scanning right to left when ``reverse``). Equivalent to chaining
    ``lstm_step`` but with a hand-written BPTT backward.
    """
    X = inputs.data
    if X.ndim != 2 or X.shape[1] != cell.input_dim:
        raise DimensionError(f"lstm_sequence: inputs {X.shape} vs input dim {cell.input_dim}")
    n, h = X.shape[0], cell.hidden
    if n == 0:
        raise ContractError("lstm_sequence: empty input")
    Wih, Whh, b = cell.w_ih.data, cell.w_hh.data, cell.bias.data
    order = range(n - 1, -1, -1) if reverse else range(n)
    proj = X @ Wih.T + b
    H = np.zeros((n, h))
    C = np.zeros((n, h))
    gates = np.zeros((n, 4 * h))
    h_prev = np.zeros((n, h))
    c_prev = np.zeros((n, h))
    hp, cp = np.zeros(h), np.zeros(h)
    for t in order:
        z = proj[t] + Whh @ hp
        ifo = ad._sigmoid(z)
        g = np.tanh(z[2 * h : 3 * h])
        i, f, o = ifo[:h], ifo[h : 2 * h], ifo[3 * h :]
        c = f * cp + i * g
        hn = o * np.tanh(c)
        gates[t, :h], gates[t, h : 2 * h], gates[t, 2 * h : 3 * h], gates[t, 3 * h :] = i, f, g, o
        h_prev[t], c_prev[t] = hp, cp
        H[t], C[t] = hn, c
        hp, cp = hn, c

    def backward(dH):
        DZ = np.zeros((n, 4 * h))
        dh_next, dc_next = np.zeros(h), np.zeros(h)
        for t in reversed(order):
            i, f, g, o = gates[t, :h], gates[t, h : 2 * h], gates[t, 2 * h : 3 * h], gates[t, 3 * h :]
            tc = np.tanh(C[t])
            dh = dH[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = DZ[t]
            dz[:h] = dc * g * i * (1.0 - i)
            dz[h : 2 * h] = dc * c_prev[t] * f * (1.0 - f)
            dz[2 * h : 3 * h] = dc * i * (1.0 - g * g)
            dz[3 * h :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = Whh.T @ dz
        return DZ @ Wih, DZ.T @ X, DZ.T @ h_prev, DZ.sum(axis=0)

    return ad.make(H, (inputs, cell.w_ih, cell.w_hh, cell.bias), backward)


@dataclass
class EncodedTurn:
    token_states: Tensor  # [n x 2h], row t = [forward_t ; backward_t]
    summary: Tensor  # [2h] = [forward_n ; backward_1]
    tokens: list[str]

    def __len__(self) -> int:
        return len(self.tokens)


class BiLstmEncoder:
    def __init__(self, input_dim: int, hidden: int, dropout: float = 0.0, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.input_dim = input_dim
        self.dropout = dropout
        self.forward_cell = LstmCell(input_dim, hidden, rng, "encoder.forward")
        self.backward_cell = LstmCell(input_dim, hidden, rng, "encoder.backward")

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def parameters(self) -> list[Tensor]:
        return self.forward_cell.parameters() + self.backward_cell.parameters()

    def encode(
        self,
        embedded: Tensor | np.ndarray | Sequence[np.ndarray],
        tokens: list[str] | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncodedTurn:
        if not isinstance(embedded, Tensor):
            arr = np.asarray(embedded, dtype=np.float64)
            if arr.size == 0:
                raise ContractError("encode: empty input sequence")
            embedded = Tensor(arr)
        n = embedded.shape[0]
        if n == 0:
            raise ContractError("encode: empty input sequence")
        x = ad.dropout(embedded, self.dropout, rng, training)
        fwd = lstm_sequence(self.forward_cell, x)
        bwd = lstm_sequence(self.backward_cell, x, reverse=True)
        states = ad.concat([fwd, bwd], axis=1)
        summary = ad.concat([fwd[n - 1], bwd[0]])
        states = ad.dropout(states, self.dropout, rng, training)
        summary = ad.dropout(summary, self.dropout, rng, training)
        return EncodedTurn(states, summary, list(tokens) if tokens is not None else [PAD] * n)
