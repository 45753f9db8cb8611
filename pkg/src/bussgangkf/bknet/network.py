"""The recurrent gain network: three GRUs plus FC heads.

The three GRUs track surrogates of the process-noise covariance, the prior
state covariance, and the (reduced) observation-gain factor; FC heads combine
them into the learned gain matrix and the carried posterior-covariance
surrogate. Hidden-state dimensions follow the covariance shapes they shadow:
m^2 for the first two GRUs, and either (an)^2 (default, ``reduced_square``)
or n*an (``full_by_reduced``) for the third.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from .gru import GruCell, gru_cell_forward_tape

GRU_P_SHAPES = ("reduced_square", "full_by_reduced")


def _linear_init(rng, out_dim, in_dim):
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim)), np.zeros(out_dim)


@dataclass
class GainNetwork:
    """Parameter container and forward pass for the learned Bussgang gain.

    ``state_dim`` is m, ``reduced_dim`` is an (observations after the
    averaging projection), ``full_dim`` is n (total ADCs; only used by the
    ``full_by_reduced`` third-GRU shape).
    """

    state_dim: int
    reduced_dim: int
    full_dim: int = None
    gru_p_shape: str = "reduced_square"
    head_width_factor: int = 4
    params: dict = field(default=None)

    def __post_init__(self):
        if self.gru_p_shape not in GRU_P_SHAPES:
            raise InvalidArgumentError(
                f"gru_p_shape must be one of {GRU_P_SHAPES}"
            )
        if self.full_dim is None:
            self.full_dim = self.reduced_dim
        m, p = self.state_dim, self.reduced_dim
        self.hidden_q = m * m
        self.hidden_sigma = m * m
        if self.gru_p_shape == "reduced_square":
            self.hidden_p = p * p
        else:
            self.hidden_p = self.full_dim * p
        self.gru_q = GruCell(m * m, self.hidden_q)
        self.gru_sigma = GruCell(2 * m * m, self.hidden_sigma)
        self.gru_p = GruCell(p * p + p * p, self.hidden_p)
        self.head_hidden = self.head_width_factor * m * p

    def layer_shapes(self):
        m, p = self.state_dim, self.reduced_dim
        return {
            "embed_q": (m * m, m),
            "embed_sigma": (m * m, m * m + m),
            "embed_sigma_to_p": (p * p, m * m),
            "embed_res": (p * p, 2 * p),
            "gain_hidden": (self.head_hidden, m * m + self.hidden_p),
            "gain_out": (m * p, self.head_hidden),
            "sigma_head_1": (m * m, m * p + self.hidden_p),
            "sigma_head_2": (m * m, 2 * m * m),
        }

    def init_params(self, seed=0):
        """Draw all weights; biases start at zero. Returns the param dict."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, (out_dim, in_dim) in self.layer_shapes().items():
            w, b = _linear_init(rng, out_dim, in_dim)
            params[f"{name}.w"] = w
            params[f"{name}.b"] = b
        for gname, cell in (
            ("gru_q", self.gru_q),
            ("gru_sigma", self.gru_sigma),
            ("gru_p", self.gru_p),
        ):
            for suffix, arr in cell.init_params(rng).items():
                params[f"{gname}.{suffix}"] = arr
        self.params = params
        return params

    def param_count(self):
        return sum(v.size for v in self.params.values())

    def zero_hidden(self, sigma0=None):
        """Initial hidden states; the covariance GRU starts at vec(Sigma0)."""
        m = self.state_dim
        if sigma0 is None:
            sigma0 = 0.1 * np.eye(m)
        return {
            "h_q": np.zeros(self.hidden_q),
            "h_sigma": np.asarray(sigma0, dtype=float).ravel().copy(),
            "h_p": np.zeros(self.hidden_p),
        }

    def _linear(self, tape, pvars, name, x):
        return tape.add(tape.matvec(pvars[f"{name}.w"], x), pvars[f"{name}.b"])

    def forward_tape(self, tape, pvars, dx_tilde, dx_hat, dr, dr_hat, hidden):
        """One step of the gain dataflow on the tape.

        ``dx_tilde`` and ``dx_hat`` are Vars (gradients flow through past
        estimates); ``dr`` and ``dr_hat`` are constants (gradient is stopped
        at the quantizer). Returns (gain_flat, sigma_post, new_hidden) where
        gain_flat reshapes to m x an.
        """
        gruvars = lambda g: {
            s: pvars[f"{g}.{s}"] for s in ("w_z", "w_r", "w_c", "b_z", "b_r", "b_c")
        }
        q_in = self._linear(tape, pvars, "embed_q", dx_tilde)
        h_q = gru_cell_forward_tape(tape, gruvars("gru_q"), q_in, hidden["h_q"])

        sig_in = tape.concat(
            self._linear(tape, pvars, "embed_sigma", tape.concat(h_q, dx_hat)),
            h_q,
        )
        sigma_prior = gru_cell_forward_tape(
            tape, gruvars("gru_sigma"), sig_in, hidden["h_sigma"]
        )

        p_in = tape.concat(
            self._linear(tape, pvars, "embed_sigma_to_p", sigma_prior),
            self._linear(tape, pvars, "embed_res", tape.concat(dr, dr_hat)),
        )
        h_p = gru_cell_forward_tape(tape, gruvars("gru_p"), p_in, hidden["h_p"])

        head_in = tape.concat(sigma_prior, h_p)
        gain_hidden = tape.relu(self._linear(tape, pvars, "gain_hidden", head_in))
        gain_flat = self._linear(tape, pvars, "gain_out", gain_hidden)

        shrink = self._linear(
            tape, pvars, "sigma_head_1", tape.concat(gain_flat, h_p)
        )
        sigma_post = self._linear(
            tape, pvars, "sigma_head_2", tape.concat(shrink, sigma_prior)
        )
        new_hidden = {"h_q": h_q, "h_sigma": sigma_post, "h_p": h_p}
        return gain_flat, sigma_post, new_hidden
