from .checkpoint import load_checkpoint, save_checkpoint
from .gru import GruCell, gru_cell_forward, gru_cell_forward_tape
from .network import GRU_P_SHAPES, GainNetwork
from .tape import Tape, Var
from .training import (
    AdamState,
    SequenceRunner,
    TrainConfig,
    adam_update,
    clip_gradients,
    evaluate_bknet,
    grad_check,
    loss_sequence,
    run_bknet,
    save_loss_curve,
    train,
)

__all__ = [
    "AdamState",
    "GRU_P_SHAPES",
    "GainNetwork",
    "GruCell",
    "SequenceRunner",
    "Tape",
    "TrainConfig",
    "Var",
    "adam_update",
    "clip_gradients",
    "evaluate_bknet",
    "grad_check",
    "gru_cell_forward",
    "gru_cell_forward_tape",
    "load_checkpoint",
    "loss_sequence",
    "run_bknet",
    "save_checkpoint",
    "save_loss_curve",
    "train",
]
