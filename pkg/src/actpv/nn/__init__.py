from .engine import capture_activations, forward, loss, predict, sigmoid, softmax
from .gradcheck import grad_check
from .params import ModelParams, init_params, load_model, save_model
from .spec import (
    EmbeddingSpec,
    ModelSpec,
    TrainConfig,
    spec_for_schema,
    train_config_for,
)
from .train import TrainingHistory, fit_arrays, train

__all__ = [
    "EmbeddingSpec", "ModelParams", "ModelSpec", "TrainConfig", "TrainingHistory",
    "capture_activations", "fit_arrays", "forward", "grad_check", "init_params",
    "load_model", "loss", "predict", "save_model", "sigmoid", "softmax",
    "spec_for_schema", "train", "train_config_for",
]
