"""Autodiff core, bi-LSTM layers and the filter variants."""
from .autodiff import Tensor, no_grad, parameter
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .lstm import LstmParams, bilstm, init_lstm, lstm_forward
from .model import (NARROW, VARIANTS, WIDE, ArrangedBatch, ConfigError, Model, ModelConfig, arrange,
                    build_model, disarrange, predict_mask, rearrange, shuffle_sequence, unshuffle)

__all__ = [
    "Tensor", "no_grad", "parameter",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "LstmParams", "bilstm", "init_lstm", "lstm_forward",
    "NARROW", "WIDE", "VARIANTS", "ArrangedBatch", "ConfigError", "Model", "ModelConfig",
    "arrange", "build_model", "disarrange", "predict_mask", "rearrange", "shuffle_sequence", "unshuffle",
]
