"""Main decoding network, side network, joint training and generation."""

from .config import ConfigError, ModelConfig
from .estimator import PredFTDecoder, estimate_word_rate
from .generate import BLOCKED, beam_search, generate, greedy, inference_fragments
from .network import (
    PcMask,
    PredFT,
    batch_pc_mask,
    build_pc_mask,
    fir_transform,
    fmri_encode_2d,
    fmri_encode_3d,
    joint_loss,
    main_forward,
    side_forward,
)
from .training import Checkpoint, TrainingError, cosine_lr, evaluate_loss, fit, train_step

__all__ = [
    "BLOCKED", "Checkpoint", "ConfigError", "ModelConfig", "PcMask", "PredFT", "PredFTDecoder", "TrainingError",
    "batch_pc_mask", "beam_search", "build_pc_mask", "cosine_lr", "estimate_word_rate", "evaluate_loss", "fir_transform",
    "fit", "fmri_encode_2d", "fmri_encode_3d", "generate", "greedy", "inference_fragments",
    "joint_loss", "main_forward", "side_forward",
]
