from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, numerical_grads
from .net import Condition, NetConfig, ScoreNet, sinusoidal_embedding
from .train import TrainConfig, TrainingDivergedError, TrainLog, eps_loss, make_batch, train


def predict_eps(net: ScoreNet, state, cond):
    return net.predict_eps(state, cond)


__all__ = [
    "CheckpointError",
    "Condition",
    "GradCheckReport",
    "NetConfig",
    "ScoreNet",
    "TrainConfig",
    "TrainLog",
    "TrainingDivergedError",
    "eps_loss",
    "grad_check",
    "load_checkpoint",
    "make_batch",
    "numerical_grads",
    "predict_eps",
    "save_checkpoint",
    "sinusoidal_embedding",
    "train",
]
