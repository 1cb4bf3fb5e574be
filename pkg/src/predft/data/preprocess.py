"""Voxel normalisation, ROI extraction, prediction targets and frame shuffling."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import DatasetError, Recording
from .vocab import PAD, UNK, normalize_words


def voxel_normalize(fmri, eps=1e-12):
    """z-score every voxel over time (last axis); constant voxels become 0."""
    x = np.asarray(fmri, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("voxel normalisation needs at least 2 frames")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    sd = np.sqrt((xc * xc).mean(axis=-1, keepdims=True))
    scale = np.abs(x).max(axis=-1, keepdims=True)
    flat = sd <= eps * np.maximum(scale, 1.0)
    return np.where(flat, 0.0, xc / np.where(flat, 1.0, sd))


class VoxelNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapper: rows are frames, columns voxels."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return voxel_normalize(np.asarray(X).T).T


def extract_rois(fmri_surface, atlas, group):
    """Frames × d_r matrix of the group's voxels, columns in sorted voxel order."""
    x = np.asarray(fmri_surface, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    idx = atlas.resolve(group)
    if idx.size == 0:
        raise DatasetError(f"ROI group {group!r} is empty")
    if idx.max() >= x.shape[0] or idx.min() < 0:
        raise DatasetError(f"ROI index outside [0, {x.shape[0]})")
    return x[idx].T


def future_word_indices(anchors, window_d, window_l):
    """Global word indices ``anchor + d … anchor + d + l - 1`` per frame."""
    return np.asarray(anchors)[:, None] + window_d + np.arange(window_l)[None, :]


def extract_prediction_targets(frame_words, d, l, vocab):
    """Per-frame token ids of the ``l`` words starting ``d`` after the frame's first word.

    Positions beyond the story end (or frames without words) become pad.
    """
    if l < 1:
        raise ValueError("prediction length must be >= 1")
    if d < 0:
        raise ValueError("prediction distance must be >= 0")
    frame_words = [normalize_words(frame) for frame in frame_words]
    ids = [vocab.index.get(w, UNK) for frame in frame_words for w in frame]
    out, pos = [], 0
    for frame in frame_words:
        if not frame:
            out.append([PAD] * l)
            continue
        row = []
        for j in range(pos + d, pos + d + l):
            row.append(ids[j] if j < len(ids) else PAD)
        out.append(row)
        pos += len(frame)
    return out


def shuffle_frames(recording, seed):
    """Permute fMRI frames uniformly at random; words stay in place."""
    if recording.n_frames < 2:
        raise ValueError("need at least 2 frames to shuffle")
    perm = np.random.default_rng(seed).permutation(recording.n_frames)
    return recording.with_fmri(recording.fmri[..., perm])


def shuffle_recordings(recordings, seed):
    """Shuffle every recording with its own permutation derived from ``(seed, position)``."""
    return [shuffle_frames(r, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
            for i, r in enumerate(recordings)]


def normalized(recording: Recording):
    return recording.with_fmri(voxel_normalize(recording.fmri))
