"""Reverse-mode tape over dense float64 numpy arrays.

A Tensor wraps an ndarray plus the bookkeeping needed to backpropagate:
its parents in the expression graph and a closure computing parent
gradients from its own. Parameters are C-contiguous row-major float64
arrays throughout (the only "matrix" representation in this package).

The backward pass accepts a ``guided`` flag; the only op that consults it
is relu, which then additionally zeroes negative upstream gradients
(the guided-backpropagation rule).
"""

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "bwd", "requires_grad")

    def __init__(self, value, parents=(), bwd=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self, seed=None, guided=False):
        """Backpropagate from this tensor; gradients land in ``.grad``.

        ``seed`` defaults to ones (so a scalar output gets dL/dL = 1).
        Gradients of every tensor reached are reset before accumulation;
        leaf parameters keep whatever zero_grad policy the caller uses
        because they are reset here too, immediately before this pass.
        """
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            node.grad = None
        if seed is None:
            seed = np.ones_like(self.value)
        self.accumulate(np.asarray(seed, dtype=np.float64))

        for node in reversed(topo):
            if node.bwd is None or node.grad is None:
                continue
            parent_grads = node.bwd(node.grad, guided)
            for parent, g in zip(node.parents, parent_grads):
                if parent.requires_grad and g is not None:
                    parent.accumulate(g)


def const(value):
    """Tensor that does not require (or propagate) gradients."""
    return Tensor(value)


def leaf(value):
    """Trainable/differentiable input tensor."""
    return Tensor(value, requires_grad=True)


class ParamStore:
    """Named trainable parameters, each with a gradient slot."""

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = leaf(np.array(value, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def arrays(self):
        """Name -> value array (live references, not copies)."""
        return {name: t.value for name, t in self._params.items()}

    def load_arrays(self, arrays):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.value.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.value.shape}"
                )
            t.value = arr.copy()
