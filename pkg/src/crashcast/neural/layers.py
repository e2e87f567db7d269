"""Recurrent and graph layers built on the autodiff engine.

Row vectors are (1, d); graph signals are (E, P). Transition matrices enter
the graph as constant leaves, so gradients flow only through signals and
parameters.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, maximum, tensor


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    bound = 1.0 / np.sqrt(rows)
    return tensor(rng.uniform(-bound, bound, (rows, cols)))


def init_bias(cols: int) -> Tensor:
    return tensor(np.zeros((1, cols)))


class Linear:
    def __init__(self, rng, d_in: int, d_out: int):
        self.W = init_matrix(rng, d_in, d_out)
        self.b = init_bias(d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b

    def params(self) -> list[Tensor]:
        return [self.W, self.b]


class LstmDirection:
    """Single-direction LSTM with fused gate matrices (order: i, f, o, g)."""

    def __init__(self, rng, d_in: int, d_hidden: int):
        self.d = d_hidden
        self.Wx = init_matrix(rng, d_in, 4 * d_hidden)
        self.Wh = init_matrix(rng, d_hidden, 4 * d_hidden)
        self.b = init_bias(4 * d_hidden)

    def last_hidden(self, steps: list[Tensor]) -> Tensor:
        d = self.d
        h = tensor(np.zeros((1, d)))
        c = tensor(np.zeros((1, d)))
        for x in steps:
            z = x @ self.Wx + h @ self.Wh + self.b
            i = z[:, 0:d].sigmoid()
            f = z[:, d:2 * d].sigmoid()
            o = z[:, 2 * d:3 * d].sigmoid()
            g = z[:, 3 * d:4 * d].tanh()
            c = f * c + i * g
            h = o * c.tanh()
        return h

    def params(self) -> list[Tensor]:
        return [self.Wx, self.Wh, self.b]


class BiLstmEncoder:
    """Concatenation of both directions' final hidden states: (1, 2*d_hidden)."""

    def __init__(self, rng, d_in: int, d_hidden: int):
        self.fwd = LstmDirection(rng, d_in, d_hidden)
        self.bwd = LstmDirection(rng, d_in, d_hidden)

    def __call__(self, sequence: np.ndarray) -> Tensor:
        if len(sequence) == 0:
            raise ValueError("cannot encode an empty sequence")
        steps = [tensor(row.reshape(1, -1)) for row in np.asarray(sequence, dtype=float)]
        return concat([self.fwd.last_hidden(steps),
                       self.bwd.last_hidden(list(reversed(steps)))], axis=1)

    def params(self) -> list[Tensor]:
        return self.fwd.params() + self.bwd.params()


class DiffusionFilter:
    """K-hop bidirectional graph filter: sum_k (S_f^k X) Wf_k + (S_b^k X) Wb_k + b."""

    def __init__(self, rng, K: int, d_in: int, d_out: int):
        if K < 1:
            raise ValueError("diffusion needs K >= 1")
        self.K = K
        self.theta_f = [init_matrix(rng, d_in, d_out) for _ in range(K)]
        self.theta_b = [init_matrix(rng, d_in, d_out) for _ in range(K)]
        self.b = init_bias(d_out)

    def __call__(self, X: Tensor, S_f: Tensor, S_b: Tensor) -> Tensor:
        out = X @ self.theta_f[0] + X @ self.theta_b[0]   # k = 0: S^0 = I
        hop_f, hop_b = X, X
        for k in range(1, self.K):
            hop_f = S_f @ hop_f
            hop_b = S_b @ hop_b
            out = out + hop_f @ self.theta_f[k] + hop_b @ self.theta_b[k]
        return out + self.b

    def params(self) -> list[Tensor]:
        return self.theta_f + self.theta_b + [self.b]


class DcGruCell:
    """GRU whose dense maps are diffusion filters over the edge graph.

    h_new = u * h_prev + (1 - u) * candidate, so saturating the update gate
    carries the previous state through unchanged.
    """

    def __init__(self, rng, K: int, d_in: int, d_hidden: int):
        self.d = d_hidden
        self.reset = DiffusionFilter(rng, K, d_in + d_hidden, d_hidden)
        self.update = DiffusionFilter(rng, K, d_in + d_hidden, d_hidden)
        self.cand = DiffusionFilter(rng, K, d_in + d_hidden, d_hidden)

    def step(self, h: Tensor, x: Tensor, S_f: Tensor, S_b: Tensor) -> Tensor:
        xh = concat([x, h], axis=1)
        r = self.reset(xh, S_f, S_b).sigmoid()
        u = self.update(xh, S_f, S_b).sigmoid()
        c = self.cand(concat([x, r * h], axis=1), S_f, S_b).tanh()
        one = tensor(np.ones_like(u.data))
        return u * h + (one - u) * c

    def params(self) -> list[Tensor]:
        return self.reset.params() + self.update.params() + self.cand.params()


def pool_states(states: list[Tensor], mode: str = "mean") -> Tensor:
    """Aggregate a sequence of (E, d) hidden states into a (1, d) summary."""
    if not states:
        raise ValueError("cannot pool an empty sequence")
    if mode == "mean":
        stacked = states[0]
        for s in states[1:]:
            stacked = stacked + s
        time_mean = stacked.scale(1.0 / len(states))
        return time_mean.mean(axis=0).reshape(1, -1)
    if mode == "last":
        return states[-1].mean(axis=0).reshape(1, -1)
    if mode == "max":
        out = states[0]
        for s in states[1:]:
            out = maximum(out, s)
        vertex = out[0:1, :]
        for i in range(1, out.shape[0]):
            vertex = maximum(vertex, out[i:i + 1, :])
        return vertex
    raise ValueError(f"unknown pooling mode {mode!r}")


class FusionHead:
    """Two-layer relu MLP plus one affine head per forecast step."""

    def __init__(self, rng, d_in: int, d_hidden: int, n_steps: int, d_out: int):
        self.lin1 = Linear(rng, d_in, d_hidden)
        self.lin2 = Linear(rng, d_hidden, d_hidden)
        self.heads = [Linear(rng, d_hidden, d_out) for _ in range(n_steps)]

    def __call__(self, u: Tensor) -> list[Tensor]:
        h = self.lin2(self.lin1(u).relu()).relu()
        return [head(h) for head in self.heads]

    def params(self) -> list[Tensor]:
        out = self.lin1.params() + self.lin2.params()
        for head in self.heads:
            out += head.params()
        return out


def order_bounds(low: Tensor, high: Tensor) -> tuple[Tensor, Tensor]:
    """Monotonic repair: high := max(low, high), differentiable."""
    return low, maximum(low, high)
