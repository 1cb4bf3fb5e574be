"""Datasets, preprocessing, splits, tokenisation and synthetic data."""

from .dataset import Dataset, DatasetError, Recording, RoiAtlas, load_dataset, save_dataset
from .preprocess import (
    VoxelNormalizer,
    extract_prediction_targets,
    extract_rois,
    shuffle_frames,
    shuffle_recordings,
    voxel_normalize,
)
from .splits import SplitError, Splits, SplitSpec, audit_split, make_splits
from .synth import SynthError, SynthSpec, synth_dataset, synth_generate
from .vocab import BOS, EOS, PAD, SEP, UNK, Vocab, detokenize, normalize_words, tokenize
from .windows import Batch, WindowSample, collate, make_windows

__all__ = [
    "BOS", "Batch", "Dataset", "DatasetError", "EOS", "PAD", "Recording", "RoiAtlas", "SEP",
    "SplitError", "SplitSpec", "Splits", "SynthError", "SynthSpec", "UNK", "Vocab", "VoxelNormalizer",
    "WindowSample", "audit_split", "collate", "detokenize", "extract_prediction_targets",
    "extract_rois", "load_dataset", "make_splits", "make_windows", "normalize_words", "save_dataset",
    "shuffle_frames", "shuffle_recordings", "synth_dataset", "synth_generate", "tokenize", "voxel_normalize",
]
