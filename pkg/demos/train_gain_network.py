"""Train the recurrent gain network on a small linear system.

The learned filter replaces the model-derived Bussgang gain with a GRU that
maps innovation statistics to a gain matrix.  Nothing about the noise
covariances is given to it -- everything it knows about the quantizer and the
noise it has to infer from data.

This demo keeps the system small (a 2-state rotation-with-decay model with
two 1-bit ADCs) so the whole run takes about a minute:

  1. verify the backpropagation against finite differences,
  2. train for a few epochs and watch the loss fall,
  3. compare the trained filter's error against the model-based filter.

Run:  python demos/train_gain_network.py
"""

import numpy as np

from bussgangkf import FilterState, StateSpaceModel, run_filter
from bussgangkf.bknet import (
    GainNetwork,
    TrainConfig,
    evaluate_bknet,
    grad_check,
    train,
)
from bussgangkf.datagen import SequencePair, mse_db


def make_model():
    F0 = np.array([[0.95, 0.10], [-0.10, 0.95]])
    return StateSpaceModel(
        state_dim=2, meas_dim=2,
        f=lambda x: F0 @ np.asarray(x, dtype=float),
        h=lambda x: np.asarray(x, dtype=float),
        jac_f=lambda x: F0, jac_h=lambda x: np.eye(2),
        Q=0.01 * np.eye(2), R=0.1 * np.eye(2),
    )


def simulate(model, count, length, seed):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        x = rng.standard_normal(2)
        X, Y = [x], [model.h(x) + rng.normal(0, np.sqrt(0.1), 2)]
        for _ in range(length - 1):
            x = model.f(x) + rng.multivariate_normal(np.zeros(2), model.Q)
            X.append(x)
            Y.append(model.h(x) + rng.normal(0, np.sqrt(0.1), 2))
        pairs.append(SequencePair(X=np.array(X), Y=np.array(Y)))
    return pairs


def main():
    model = make_model()

    print("gradient check (BPTT vs central differences)...")
    err = grad_check(model=model, T=5)
    print(f"  max relative error {err:.2e}")

    train_seqs = simulate(model, count=30, length=60, seed=1)
    test_seqs = simulate(model, count=10, length=200, seed=2)

    net = GainNetwork(state_dim=2, reduced_dim=2)
    cfg = TrainConfig(epochs=15, batch_size=8, learning_rate=1e-3, seed=0)
    print("training 15 epochs on 30 sequences...")
    history = train(net, train_seqs, model, 1, cfg, val_seqs=test_seqs[:3])
    for epoch, loss, val in history[::3] + [history[-1]]:
        print(f"  epoch {epoch:>2}  train loss {loss:8.4f}  val {val:6.2f} dB")

    # model-based reference on the same test data
    ests, trus = [], []
    for pair in test_seqs:
        init = FilterState(xhat=pair.X[0].copy(), sigma=0.1 * np.eye(2))
        run = run_filter(model, pair.Y[1:], "bkf", init)
        ests.append(run.xhat)
        trus.append(pair.X[1:])
    print(f"model-based filter : {mse_db(ests, trus):6.2f} dB")
    print(f"learned filter     : "
          f"{evaluate_bknet(net, model, test_seqs):6.2f} dB")


if __name__ == "__main__":
    main()
