"""Minimal reverse-mode differentiation for the fixed gain-network dataflow.

This is not a general autodiff system: it supports exactly the operations the
recurrent gain network and its unrolled training loss are built from. Nodes
are recorded in creation order, which is a valid topological order because
the graph is built strictly forward.
"""

import numpy as np

from ..errors import NumericError


class Var:
    """A value in the recorded computation; ``grad`` is filled by backward."""

    __slots__ = ("value", "grad", "backward_fn", "name")

    def __init__(self, value, backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.backward_fn = backward_fn
        self.name = name

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=float)
        else:
            self.grad = self.grad + g


class Tape:
    def __init__(self):
        self.nodes = []

    def _record(self, value, backward_fn=None, name=None):
        v = Var(value, backward_fn, name)
        if not np.all(np.isfinite(v.value)):
            raise NumericError(f"non-finite activation in {name or 'op'}")
        self.nodes.append(v)
        return v

    def leaf(self, value, name=None):
        """Differentiable input (a parameter or carried state)."""
        return self._record(value, name=name)

    def constant(self, value):
        """Non-differentiable input; gradient flow stops here."""
        v = Var(value)
        v.grad = np.zeros_like(v.value)
        return v

    def add(self, a, b):
        out = self._record(a.value + b.value, name="add")

        def bw(g):
            a.accumulate(g)
            b.accumulate(g)

        out.backward_fn = bw
        return out

    def sub(self, a, b):
        out = self._record(a.value - b.value, name="sub")

        def bw(g):
            a.accumulate(g)
            b.accumulate(-g)

        out.backward_fn = bw
        return out

    def mul(self, a, b):
        out = self._record(a.value * b.value, name="mul")

        def bw(g):
            a.accumulate(g * b.value)
            b.accumulate(g * a.value)

        out.backward_fn = bw
        return out

    def scale(self, a, s):
        out = self._record(a.value * s, name="scale")
        out.backward_fn = lambda g: a.accumulate(g * s)
        return out

    def concat(self, *parts):
        sizes = [p.value.size for p in parts]
        out = self._record(np.concatenate([p.value for p in parts]), name="concat")

        def bw(g):
            off = 0
            for p, sz in zip(parts, sizes):
                p.accumulate(g[off : off + sz])
                off += sz

        out.backward_fn = bw
        return out

    def matvec(self, W, x):
        out = self._record(W.value @ x.value, name="matvec")

        def bw(g):
            W.accumulate(np.outer(g, x.value))
            x.accumulate(W.value.T @ g)

        out.backward_fn = bw
        return out

    def sigmoid(self, a):
        y = 1.0 / (1.0 + np.exp(-a.value))
        out = self._record(y, name="sigmoid")
        out.backward_fn = lambda g: a.accumulate(g * y * (1.0 - y))
        return out

    def tanh(self, a):
        y = np.tanh(a.value)
        out = self._record(y, name="tanh")
        out.backward_fn = lambda g: a.accumulate(g * (1.0 - y * y))
        return out

    def relu(self, a):
        mask = a.value > 0
        out = self._record(np.where(mask, a.value, 0.0), name="relu")
        out.backward_fn = lambda g: a.accumulate(g * mask)
        return out

    def gain_apply(self, bg_flat, r, rows):
        """reshape(bg_flat, (rows, -1)) @ r with r held constant."""
        r = np.asarray(r, dtype=float)
        cols = r.size
        out = self._record(
            bg_flat.value.reshape(rows, cols) @ r, name="gain_apply"
        )
        out.backward_fn = lambda g: bg_flat.accumulate(np.outer(g, r).ravel())
        return out

    def through_map(self, x, fn, jac):
        """Apply a user map as a primitive with an explicit Jacobian."""
        J = np.atleast_2d(np.asarray(jac(x.value), dtype=float))
        out = self._record(fn(x.value), name="through_map")
        out.backward_fn = lambda g: x.accumulate(J.T @ g)
        return out

    def sumsq_error(self, a, target):
        """Scalar sum((a - target)^2); target is constant."""
        target = np.asarray(target, dtype=float)
        diff = a.value - target
        out = self._record(np.sum(diff * diff), name="sumsq_error")
        out.backward_fn = lambda g: a.accumulate(2.0 * g * diff)
        return out

    def backward(self, loss):
        """Reverse sweep from ``loss``; fills .grad on every reachable Var."""
        loss.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
