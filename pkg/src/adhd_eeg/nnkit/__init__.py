"""Small float64 neural-network kit: tensors, recurrent layers, Adam, gradient checks."""
from .tensor import GraphCycle, Parameter, Tensor, backward, no_grad
from .ops import (
    BCE_EPSILON, NonFiniteActivation, activation, bce_loss, concat_features, dense_apply,
    flatten_seq, gru_apply, lstm_apply, mse_loss, sigmoid, time_distributed_dense, weighted_sum,
)
from .optim import Adam, AdamState, adam_step
from .network import LayerSpec, ModelSpec, Network, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, check_gradients, grad_check, relative_error

__all__ = [
    "GraphCycle", "Parameter", "Tensor", "backward", "no_grad",
    "BCE_EPSILON", "NonFiniteActivation", "activation", "bce_loss", "concat_features",
    "dense_apply", "flatten_seq", "gru_apply", "lstm_apply", "mse_loss", "sigmoid",
    "time_distributed_dense", "weighted_sum",
    "Adam", "AdamState", "adam_step",
    "LayerSpec", "ModelSpec", "Network", "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "check_gradients", "grad_check", "relative_error",
]
