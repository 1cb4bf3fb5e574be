"""Slice recordings into fixed-length training/decoding windows and collate batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import extract_prediction_targets, extract_rois, voxel_normalize
from .vocab import BOS, EOS, PAD, SEP, UNK, normalize_words


@dataclass
class WindowSample:
    subject: str
    story: str
    start: int
    fmri: np.ndarray          # (k+1, d_s) or (k+1, W, H, D)
    rois: np.ndarray          # (k+1, d_r) or None
    words: list               # truth words, flattened
    frame_sizes: list         # words per frame inside the window
    main_ids: list            # token ids of ``words``
    side_ids: list            # flattened future tokens with a separator after each frame

    @property
    def fragments(self):
        """Fragment (frame offset) of every main target position, EOS included."""
        frags = [t for t, n in enumerate(self.frame_sizes) for _ in range(n)]
        return frags + [len(self.frame_sizes) - 1]


@dataclass
class Batch:
    fmri: np.ndarray
    rois: np.ndarray
    main_in: np.ndarray
    main_tgt: np.ndarray
    fragments: np.ndarray
    side_in: np.ndarray
    side_tgt: np.ndarray

    def __len__(self):
        return self.main_in.shape[0]


def make_windows(recording, vocab, frames, stride=1, atlas=None, roi_group=None,
                 pred_distance=4, pred_length=2, max_len=None):
    """All windows of ``frames`` consecutive fMRI frames, voxel-normalised per recording."""
    fmri = voxel_normalize(recording.fmri)
    surface = fmri.reshape(-1, recording.n_frames)
    rois = extract_rois(surface, atlas, roi_group) if roi_group is not None else None
    frame_tokens = [normalize_words(f) for f in recording.frame_words]
    targets = extract_prediction_targets(frame_tokens, pred_distance, pred_length, vocab)
    samples = []
    for start in range(0, recording.n_frames - frames + 1, stride):
        sl = slice(start, start + frames)
        words = [w for f in frame_tokens[sl] for w in f]
        sizes = [len(f) for f in frame_tokens[sl]]
        ids = [vocab.index.get(w, UNK) for w in words]
        if max_len is not None and len(ids) + 1 > max_len:
            raise ValueError(f"window at frame {start} has {len(ids)} words; max_len={max_len}")
        side = []
        for row in targets[sl]:
            side.extend(row)
            side.append(SEP)
        x = np.moveaxis(fmri[..., sl], -1, 0)
        samples.append(WindowSample(
            recording.subject, recording.story, start,
            x.reshape(frames, -1) if recording.layout == "surface" else x,
            rois[sl] if rois is not None else None,
            words, sizes, ids, side,
        ))
    return samples


def _pad(seqs, value=PAD):
    T = max(len(s) for s in seqs)
    out = np.full((len(seqs), T), value, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def collate(samples):
    main_in = _pad([[BOS] + s.main_ids for s in samples])
    main_tgt = _pad([s.main_ids + [EOS] for s in samples])
    frags = [s.fragments for s in samples]
    T = main_in.shape[1]
    fragments = np.array([f + [f[-1]] * (T - len(f)) for f in frags], dtype=np.int64)
    side_in = _pad([[BOS] + s.side_ids for s in samples])
    side_tgt = _pad([s.side_ids + [EOS] for s in samples])
    rois = np.stack([s.rois for s in samples]) if samples[0].rois is not None else None
    return Batch(np.stack([s.fmri for s in samples]), rois, main_in, main_tgt, fragments, side_in, side_tgt)
