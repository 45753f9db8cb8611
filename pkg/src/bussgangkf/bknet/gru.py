"""A from-scratch GRU cell, with both plain and tape-recorded forwards."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError

PARAM_SUFFIXES = ("w_z", "w_r", "w_c", "b_z", "b_r", "b_c")


@dataclass(frozen=True)
class GruCell:
    input_dim: int
    hidden_dim: int

    def init_params(self, rng):
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
        fan_in = self.input_dim + self.hidden_dim
        bound = 1.0 / np.sqrt(fan_in)
        p = {}
        for w in ("w_z", "w_r", "w_c"):
            p[w] = rng.uniform(-bound, bound, size=(self.hidden_dim, fan_in))
        for b in ("b_z", "b_r", "b_c"):
            p[b] = np.zeros(self.hidden_dim)
        return p


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_cell_forward(x, h, params):
    """Standard GRU recurrence: h' = (1-z) * h + z * c.

    z and r are the update and reset gates; c is the tanh candidate computed
    from [x; r * h].
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    hidden = params["b_z"].size
    if params["w_z"].shape[1] != x.size + h.size or h.size != hidden:
        raise InvalidArgumentError("GRU input/hidden shape mismatch")
    xh = np.concatenate([x, h])
    z = _sigmoid(params["w_z"] @ xh + params["b_z"])
    r = _sigmoid(params["w_r"] @ xh + params["b_r"])
    c = np.tanh(params["w_c"] @ np.concatenate([x, r * h]) + params["b_c"])
    return (1.0 - z) * h + z * c


def gru_cell_forward_tape(tape, pvars, x, h):
    """Tape-recorded twin of ``gru_cell_forward``; pvars maps suffix -> Var."""
    xh = tape.concat(x, h)
    z = tape.sigmoid(tape.add(tape.matvec(pvars["w_z"], xh), pvars["b_z"]))
    r = tape.sigmoid(tape.add(tape.matvec(pvars["w_r"], xh), pvars["b_r"]))
    xrh = tape.concat(x, tape.mul(r, h))
    c = tape.tanh(tape.add(tape.matvec(pvars["w_c"], xrh), pvars["b_c"]))
    one = tape.constant(np.ones_like(h.value))
    return tape.add(tape.mul(tape.sub(one, z), h), tape.mul(z, c))
