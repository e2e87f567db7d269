"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op builds a node on an implicit tape (the parent links); backward() on a
scalar root topologically sorts the tape and accumulates exact gradients.
Supported ops cover what the recurrent/diffusion stack needs: add/sub/mul with
numpy broadcasting, matmul, sigmoid/tanh/relu, elementwise max, concat, slice,
reshape, sum and mean.
"""

from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "tape_id")

    def __init__(self, data, parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward
        self.tape_id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.tape_id in seen:
                continue
            seen.add(node.tape_id)
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self._add_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        out_data = self.data + other.data
        def back(g):
            self._add_grad(_unbroadcast(g, self.data.shape))
            other._add_grad(_unbroadcast(g, other.data.shape))
        return Tensor(out_data, (self, other), back)

    def __sub__(self, other: "Tensor") -> "Tensor":
        out_data = self.data - other.data
        def back(g):
            self._add_grad(_unbroadcast(g, self.data.shape))
            other._add_grad(_unbroadcast(-g, other.data.shape))
        return Tensor(out_data, (self, other), back)

    def __neg__(self) -> "Tensor":
        def back(g):
            self._add_grad(-g)
        return Tensor(-self.data, (self,), back)

    def __mul__(self, other: "Tensor") -> "Tensor":
        out_data = self.data * other.data
        def back(g):
            self._add_grad(_unbroadcast(g * other.data, self.data.shape))
            other._add_grad(_unbroadcast(g * self.data, other.data.shape))
        return Tensor(out_data, (self, other), back)

    def scale(self, c: float) -> "Tensor":
        def back(g):
            self._add_grad(g * c)
        return Tensor(self.data * c, (self,), back)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2 \
                or self.data.shape[1] != other.data.shape[0]:
            raise ValueError(f"matmul shape mismatch: {self.data.shape} @ {other.data.shape}")
        out_data = self.data @ other.data
        def back(g):
            self._add_grad(g @ other.data.T)
            other._add_grad(self.data.T @ g)
        return Tensor(out_data, (self, other), back)

    # -- nonlinearities ------------------------------------------------------------
    def sigmoid(self) -> "Tensor":
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, None, 500))),
                            np.exp(np.clip(x, -500, None))
                            / (1.0 + np.exp(np.clip(x, -500, None))))
        def back(g):
            self._add_grad(g * out_data * (1.0 - out_data))
        return Tensor(out_data, (self,), back)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)
        def back(g):
            self._add_grad(g * (1.0 - out_data * out_data))
        return Tensor(out_data, (self,), back)

    def relu(self) -> "Tensor":
        mask = self.data > 0         # subgradient 0 at the kink
        def back(g):
            self._add_grad(g * mask)
        return Tensor(self.data * mask, (self,), back)

    # -- shaping ----------------------------------------------------------------------
    def __getitem__(self, idx) -> "Tensor":
        out_data = self.data[idx]
        def back(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._add_grad(full)
        return Tensor(out_data, (self,), back)

    def reshape(self, *shape) -> "Tensor":
        original = self.data.shape
        def back(g):
            self._add_grad(g.reshape(original))
        return Tensor(self.data.reshape(*shape), (self,), back)

    # -- reductions ---------------------------------------------------------------------
    def sum(self, axis: int | None = None) -> "Tensor":
        out_data = self.data.sum(axis=axis)
        def back(g):
            if axis is None:
                self._add_grad(np.full_like(self.data, float(g)))
            else:
                self._add_grad(np.broadcast_to(np.expand_dims(g, axis),
                                               self.data.shape).copy())
        return Tensor(out_data, (self,), back)

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis).scale(1.0 / n)


def tensor(data) -> Tensor:
    """Leaf node (input constant or trainable parameter)."""
    return Tensor(data)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    ref = datas[0].shape
    for d in datas[1:]:
        if len(d.shape) != len(ref):
            raise ValueError("concat rank mismatch")
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    def back(g):
        offset = 0
        for part, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            part._add_grad(g[tuple(sl)])
            offset += size
    return Tensor(out_data, tuple(parts), back)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    return a + (b - a).relu()


def square(a: Tensor) -> Tensor:
    return a * a
