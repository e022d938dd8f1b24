"""Trainable FOG detectors: a random forest over ECDF features and a 1-D conv net over raw windows."""
from .forest import ForestConfig, ForestModel, train_forest
from .neural import (
    ArchitectureConfig,
    NeuralModel,
    TrainConfig,
    forward_backward,
    train_neural,
    transfer_finetune,
)
from .serialize import load_model, save_model


def predict_scores(model, inputs):
    """FOG score in [0, 1]: vote fraction for forests, softmax probability for networks."""
    return model.predict_scores(inputs)


def hard_labels(scores, threshold=0.5):
    import numpy as np

    return (np.asarray(scores) >= threshold).astype(np.int8)


__all__ = [
    "ArchitectureConfig", "ForestConfig", "ForestModel", "NeuralModel", "TrainConfig",
    "forward_backward", "hard_labels", "load_model", "predict_scores", "save_model",
    "train_forest", "train_neural", "transfer_finetune",
]
