"""From-scratch stacked LSTM/GRU speed predictors."""

from .cells import (
    GruCellWeights,
    LstmCellWeights,
    gru_cell_backward,
    gru_cell_forward,
    lstm_cell_backward,
    lstm_cell_forward,
)
from .io import ModelFormatError, load_model, save_model
from .model import PRESETS, Layer, RnnModel, backward, forward, from_preset, init_model, mse_loss, predict
from .train import Adam, TrainConfig, TrainingDiverged, train

__all__ = [
    "Adam", "GruCellWeights", "Layer", "LstmCellWeights", "ModelFormatError", "PRESETS", "RnnModel",
    "TrainConfig", "TrainingDiverged", "backward", "forward", "from_preset", "gru_cell_backward",
    "gru_cell_forward", "init_model", "load_model", "lstm_cell_backward", "lstm_cell_forward",
    "mse_loss", "predict", "save_model", "train",
]
