"""Closed-loop unrolling, loss, Adam, the training loop, and gradient checks.

The filter recursion is unrolled on the tape so backpropagation through time
is exact along the differentiable paths; the quantizer and its threshold are
treated as gradient stops (the sign function is flat almost everywhere), so
each step's quantized observation enters as a constant.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, TrainingError
from ..filters import FilterState, initial_state
from ..quantizer import build_projection, quantize_1bit
from ..ssmodel import StateSpaceModel
from .network import GainNetwork
from .tape import Tape


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    l2: float = 1e-4
    batch_size: int = 8
    epochs: int = 300
    seed: int = 0
    clip_norm: float = 10.0
    # std of the initial-estimate perturbation around the true x0; larger
    # values teach the filter to recover from being off the trajectory.
    # A (low, high) pair draws a per-sequence std log-uniformly from the
    # range so recovery and precision examples share every batch.
    init_perturb_std: object = 0.1
    # keep the epoch parameters with the best validation MSE instead of the
    # last ones (no effect without val_seqs)
    keep_best_val: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("betas must lie in [0, 1)")
        if self.l2 < 0:
            raise InvalidArgumentError("l2 must be nonnegative")


@dataclass
class StepRecord:
    """Per-step artifacts kept for inspection and tests."""

    gain: object  # Var holding the flattened gain
    x_prior: object  # Var
    x_post: object  # Var
    r_star: np.ndarray


class SequenceRunner:
    """Runs the learned-gain filter over one sequence on a fresh tape.

    The same code path serves training (with ``truth``) and inference. Only
    f and h of the model are used; noise covariances never enter.
    """

    def __init__(self, net: GainNetwork, params, model: StateSpaceModel,
                 adc_per_feature=1, sigma0=None):
        self.net = net
        self.model = model
        self.proj = build_projection(1.0 / adc_per_feature, model.meas_dim)
        self.tape = Tape()
        self.pvars = {
            k: self.tape.leaf(v, name=k) for k, v in sorted(params.items())
        }
        self.hidden = {
            k: self.tape.constant(v)
            for k, v in net.zero_hidden(sigma0).items()
        }
        self.records = []
        self._x_post_prev = None
        self._x_post_prev2 = None
        self._x_prior_prev = None
        self._r_star_prev = np.zeros(self.proj.reduced_dim)
        self._x_prior_pending = None

    def start(self, x0hat):
        self._x_post_prev = self.tape.constant(np.asarray(x0hat, dtype=float))

    def predict(self):
        """Advance the prior; returns (x_prior, y_prior) values.

        y_prior is the dither threshold for this step's ADC bank.
        """
        self._x_prior_pending = self.tape.through_map(
            self._x_post_prev, self.model.f, self.model.jac_f
        )
        y_prior = np.atleast_1d(
            np.asarray(self.model.h(self._x_prior_pending.value), dtype=float)
        )
        return self._x_prior_pending.value, y_prior

    def update(self, r_star):
        """Consume the reduced quantized observation, produce the posterior."""
        tape, net = self.tape, self.net
        m = net.state_dim
        x_prior = self._x_prior_pending
        if x_prior is None:
            raise InvalidArgumentError("predict() must precede update()")
        self._x_prior_pending = None
        r_star = np.atleast_1d(np.asarray(r_star, dtype=float))
        if self._x_post_prev2 is None or self._x_prior_prev is None:
            dx_tilde = tape.constant(np.zeros(m))
            dx_hat = tape.constant(np.zeros(m))
        else:
            dx_tilde = tape.sub(self._x_post_prev, self._x_post_prev2)
            dx_hat = tape.sub(self._x_post_prev, self._x_prior_prev)
        dr = tape.constant(r_star - self._r_star_prev)
        dr_hat = tape.constant(r_star)
        gain, _sigma_post, self.hidden = net.forward_tape(
            tape, self.pvars, dx_tilde, dx_hat, dr, dr_hat, self.hidden
        )
        x_post = tape.add(x_prior, tape.gain_apply(gain, r_star, m))
        self._x_post_prev2 = self._x_post_prev
        self._x_post_prev = x_post
        self._x_prior_prev = x_prior
        self._r_star_prev = r_star
        self.records.append(
            StepRecord(gain=gain, x_prior=x_prior, x_post=x_post, r_star=r_star)
        )
        return x_post.value

    def step_measurement(self, y):
        """Full closed-loop step: predict, dither, quantize, reduce, update."""
        _, y_prior = self.predict()
        r = quantize_1bit(y, y_prior)
        return self.update(self.proj(r))

    def xhat(self):
        return np.array([rec.x_post.value for rec in self.records])

    def sequence_loss(self, truth):
        """(1/T) sum of squared errors as a tape scalar (no L2 term)."""
        truth = np.atleast_2d(np.asarray(truth, dtype=float))
        if len(self.records) != truth.shape[0]:
            raise InvalidArgumentError("truth length mismatch")
        total = None
        for rec, x_t in zip(self.records, truth):
            term = self.tape.sumsq_error(rec.x_post, x_t)
            total = term if total is None else self.tape.add(total, term)
        return self.tape.scale(total, 1.0 / len(self.records))

    def backward(self, loss):
        self.tape.backward(loss)
        return {
            k: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for k, v in self.pvars.items()
        }


def run_bknet(net, model, Y, init: FilterState, adc_per_feature=1,
              params=None, frozen_r=None, truth=None):
    """Run the learned filter over a measurement sequence.

    ``frozen_r`` (T x n array of +-1) bypasses the online ADCs; used by the
    gradient checks where the loss must be smooth in the parameters.
    Returns the runner (holding the tape and step records).
    """
    params = net.params if params is None else params
    runner = SequenceRunner(
        net, params, model, adc_per_feature, sigma0=init.sigma
    )
    runner.start(init.xhat)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    for t in range(Y.shape[0]):
        if frozen_r is None:
            runner.step_measurement(Y[t])
        else:
            runner.predict()
            runner.update(runner.proj(frozen_r[t]))
    return runner


def loss_sequence(estimates, truth, params, l2):
    """Mean squared error over a sequence plus l2 * ||params||^2."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if estimates.shape != truth.shape:
        raise InvalidArgumentError("estimates/truth shape mismatch")
    mse = np.sum((estimates - truth) ** 2) / estimates.shape[0]
    reg = sum(np.sum(v * v) for v in params.values()) if l2 else 0.0
    return mse + l2 * reg


def clip_gradients(grads, clip_norm):
    """Scale all gradients so the global norm is at most clip_norm."""
    total = np.sqrt(sum(np.sum(g * g) for g in grads.values()))
    if clip_norm and total > clip_norm:
        factor = clip_norm / total
        return {k: g * factor for k, g in grads.items()}, total
    return grads, total


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(params, grads, state: AdamState, cfg: TrainConfig):
    """One Adam step with bias correction; clips gradients first."""
    grads, _ = clip_gradients(grads, cfg.clip_norm)
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1**state.t)
        v_hat = state.v[k] / (1 - b2**state.t)
        out[k] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return out


def _sequence_grads(net, params, model, adc_per_feature, pair, init, l2):
    runner = run_bknet(
        net, model, pair.Y[1:], init, adc_per_feature, params=params
    )
    loss = runner.sequence_loss(pair.X[1:])
    grads = runner.backward(loss)
    if l2:
        for k in grads:
            grads[k] = grads[k] + 2.0 * l2 * params[k]
    reg = l2 * sum(np.sum(v * v) for v in params.values()) if l2 else 0.0
    return float(loss.value) + reg, grads


def evaluate_bknet(net, model, sequences, adc_per_feature=1, params=None,
                   init_seed=0):
    """Validation MSE in dB over sequences (estimates vs truth from step 2 on)."""
    from ..datagen import mse_db

    ests, trus = [], []
    for i, pair in enumerate(sequences):
        init = initial_state(pair.X[0], seed=(init_seed, i))
        runner = run_bknet(net, model, pair.Y[1:], init, adc_per_feature,
                           params=params)
        ests.append(runner.xhat())
        trus.append(pair.X[1:])
    return mse_db(ests, trus)


def train(net, train_seqs, model, adc_per_feature, cfg: TrainConfig,
          val_seqs=None, verbose=False):
    """Mini-batch Adam training of the gain network.

    Quantization happens online inside each unrolled sequence because the
    dither threshold follows the network's own predictions. Returns the loss
    history as a list of (epoch, train_loss, val_mse_db) tuples; ``net.params``
    holds the final parameters. Deterministic for a fixed (seed, data order).
    """
    if net.params is None:
        net.init_params(cfg.seed)
    params = {k: v.copy() for k, v in net.params.items()}
    n_seq = len(train_seqs)
    if cfg.epochs == 0 or n_seq == 0:
        return []
    # fixed per-sequence filter initializations, reused across epochs
    if np.ndim(cfg.init_perturb_std) == 0:
        stds = np.full(n_seq, float(cfg.init_perturb_std))
    else:
        lo, hi = cfg.init_perturb_std
        stds = 10.0 ** np.random.default_rng(cfg.seed).uniform(
            np.log10(lo), np.log10(hi), size=n_seq
        )
    inits = [
        initial_state(pair.X[0], seed=(cfg.seed, i), perturb_std=stds[i])
        for i, pair in enumerate(train_seqs)
    ]
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState()
    history = []
    best_val, best_params = np.inf, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_seq)
        epoch_losses = []
        for start in range(0, n_seq, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = None
            for idx in batch:  # fixed order for deterministic accumulation
                loss, grads = _sequence_grads(
                    net, params, model, adc_per_feature,
                    train_seqs[idx], inits[idx], cfg.l2,
                )
                epoch_losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] = acc[k] + grads[k]
            for k in acc:
                acc[k] = acc[k] / len(batch)
            params = adam_update(params, acc, adam, cfg)
        train_loss = float(np.mean(epoch_losses))
        if not np.isfinite(train_loss) or train_loss > 1e6:
            raise TrainingError("training diverged", epoch=epoch)
        val = (
            evaluate_bknet(net, model, val_seqs, adc_per_feature, params,
                           init_seed=cfg.seed)
            if val_seqs
            else float("nan")
        )
        history.append((epoch, train_loss, val))
        if val_seqs and val < best_val:
            best_val = val
            best_params = {k: v.copy() for k, v in params.items()}
        if verbose:
            print(f"epoch {epoch}: train {train_loss:.5f}  val {val:.2f} dB")
    if cfg.keep_best_val and best_params is not None:
        params = best_params
    net.params = params
    return history


def save_loss_curve(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_mse_db\n")
        for epoch, tl, vm in history:
            fh.write(f"{epoch},{tl!r},{vm!r}\n")


def grad_check(net=None, model=None, T=5, adc_per_feature=1, eps=1e-5, seed=0):
    """Max relative BPTT-vs-finite-difference error over all parameters.

    Runs with a frozen +-1 observation sequence so the loss is smooth in the
    parameters. Defaults to a 2-state linear toy problem.
    """
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    if model is None:
        F0 = np.array([[0.9, 0.05], [-0.05, 0.9]])
        model = StateSpaceModel(
            state_dim=2, meas_dim=2,
            f=lambda x: F0 @ x, h=lambda x: np.asarray(x, dtype=float),
            jac_f=lambda x: F0, jac_h=lambda x: np.eye(2),
            Q=np.eye(2), R=np.eye(2),
        )
    if net is None:
        net = GainNetwork(state_dim=2, reduced_dim=2)
        net.init_params(seed)
    rng = np.random.default_rng(seed)
    m, n = model.state_dim, model.meas_dim
    Y = rng.standard_normal((T, n))
    truth = rng.standard_normal((T, m))
    frozen_r = np.where(rng.standard_normal((T, n)) > 0, 1.0, -1.0)
    init = FilterState(xhat=rng.standard_normal(m), sigma=0.1 * np.eye(m))

    def total_loss(params):
        runner = run_bknet(net, model, Y, init, adc_per_feature,
                           params=params, frozen_r=frozen_r)
        return float(runner.sequence_loss(truth).value)

    runner = run_bknet(net, model, Y, init, adc_per_feature,
                       frozen_r=frozen_r)
    grads = runner.backward(runner.sequence_loss(truth))

    max_rel = 0.0
    for name in sorted(net.params):
        base = net.params[name]
        flat = base.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = total_loss(net.params)
            flat[i] = orig - eps
            lm = total_loss(net.params)
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            an = grads[name].ravel()[i]
            rel = abs(an - fd) / max(1e-6, abs(an) + abs(fd))
            max_rel = max(max_rel, rel)
    return max_rel
