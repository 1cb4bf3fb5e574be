"""Synthetic naturalistic-listening data with a planted predictive signal.

Each story is an i.i.d. Zipf word stream chopped into frames. Every voxel
responds linearly to the mean embedding of the words heard ``lag`` frames
earlier; the BPC voxels additionally respond to the mean embedding of the
future words ``anchor + d* … anchor + d* + l* - 1`` of the current frame.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Recording, RoiAtlas, save_dataset

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
BPC_REGIONS = ("superior_temporal", "angular", "supramarginal", "inferior_frontal")


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    seed: int = 0
    vocab_size: int = 59
    stories: int = 8
    frames_per_story: int = 60
    words_per_frame: tuple = (1, 5)
    embed_dim: int = 32
    lag: int = 3
    noise: float = 1.0
    planted_distance: int = 4
    planted_length: int = 2
    bpc_fraction: float = 0.1
    n_voxels: int = 500
    subjects: int = 1
    zipf_exponent: float = 1.1
    lag_gain: float = 1.0
    future_gain: float = 1.0
    tr_seconds: float = 2.0
    layout: str = "surface"
    volume_shape: tuple = (10, 10, 5)
    other_regions: int = 8

    def __post_init__(self):
        self.words_per_frame = tuple(self.words_per_frame)
        self.volume_shape = tuple(self.volume_shape)
        self.validate()

    def validate(self):
        for name in ("vocab_size", "stories", "frames_per_story", "embed_dim", "n_voxels", "subjects",
                     "planted_length", "other_regions"):
            if getattr(self, name) < 1:
                raise SynthError(f"{name} must be positive")
        lo, hi = self.words_per_frame
        if not 1 <= lo <= hi:
            raise SynthError(f"invalid words_per_frame range {self.words_per_frame}")
        if self.lag < 0 or self.planted_distance < 0 or self.noise < 0:
            raise SynthError("lag, planted_distance and noise must be non-negative")
        if not 0 < self.bpc_fraction < 1:
            raise SynthError("bpc_fraction must lie in (0, 1)")
        n_bpc = int(round(self.bpc_fraction * self.n_voxels))
        if n_bpc < len(BPC_REGIONS) or self.n_voxels - n_bpc < self.other_regions:
            raise SynthError("too few voxels for the region layout")
        if self.planted_distance + self.planted_length > lo * self.frames_per_story:
            raise SynthError("planted window longer than the shortest possible story")
        if self.layout not in ("surface", "volume"):
            raise SynthError(f"unknown layout {self.layout!r}")
        if self.layout == "volume" and int(np.prod(self.volume_shape)) != self.n_voxels:
            raise SynthError(f"volume {self.volume_shape} does not hold {self.n_voxels} voxels")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["words_per_frame"] = list(self.words_per_frame)
        d["volume_shape"] = list(self.volume_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SynthError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def make_words(n, rng):
    """``n`` distinct pronounceable pseudo-words."""
    pool = sorted({o1 + v1 + o2 + v2 for o1 in _ONSETS for v1 in _VOWELS for o2 in _ONSETS for v2 in _VOWELS})
    pick = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in pick]


def zipf_probs(n, exponent):
    p = 1.0 / np.arange(1, n + 1) ** exponent
    return p / p.sum()


def _mean_embedding(E, ids):
    return E[ids].mean(axis=0) if len(ids) else np.zeros(E.shape[1])


def synth_dataset(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    words = make_words(spec.vocab_size, rng)
    probs = zipf_probs(spec.vocab_size, spec.zipf_exponent)
    E = rng.normal(size=(spec.vocab_size, spec.embed_dim))

    n_bpc = int(round(spec.bpc_fraction * spec.n_voxels))
    order = rng.permutation(spec.n_voxels)
    bpc = np.sort(order[:n_bpc])
    rest = np.sort(order[n_bpc:])
    regions = {name: chunk.tolist() for name, chunk in zip(BPC_REGIONS, np.array_split(bpc, len(BPC_REGIONS)))}
    for i, chunk in enumerate(np.array_split(rest, spec.other_regions)):
        regions[f"region_{i:02d}"] = chunk.tolist()
    atlas = RoiAtlas(spec.n_voxels, regions, {"BPC": list(BPC_REGIONS)})

    lo, hi = spec.words_per_frame
    stories = []
    for s in range(spec.stories):
        counts = rng.integers(lo, hi + 1, size=spec.frames_per_story)
        ids = rng.choice(spec.vocab_size, size=int(counts.sum()), p=probs)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        frames = [ids[bounds[t]:bounds[t + 1]] for t in range(spec.frames_per_story)]
        stories.append((f"story{s:02d}", ids, bounds, frames))

    recordings = []
    for subj in range(spec.subjects):
        A = rng.normal(size=(spec.n_voxels, spec.embed_dim)) * (spec.lag_gain / np.sqrt(spec.embed_dim))
        B = rng.normal(size=(n_bpc, spec.embed_dim)) * (spec.future_gain / np.sqrt(spec.embed_dim))
        for name, ids, bounds, frames in stories:
            T = spec.frames_per_story
            Y = np.zeros((spec.n_voxels, T))
            for t in range(T):
                if t - spec.lag >= 0:
                    Y[:, t] += A @ _mean_embedding(E, frames[t - spec.lag])
                start = bounds[t] + spec.planted_distance
                future = ids[start:start + spec.planted_length]
                Y[bpc, t] += B @ _mean_embedding(E, future)
            Y += rng.normal(scale=spec.noise, size=Y.shape)
            fmri = Y if spec.layout == "surface" else Y.reshape(spec.volume_shape + (T,))
            frame_words = [[words[i] for i in f] for f in frames]
            recordings.append(Recording(f"sub-{subj + 1}", name, fmri, frame_words,
                                        spec.tr_seconds, spec.layout))
    return Dataset(recordings, atlas, spec.tr_seconds, activation_words=words, activations=E)


def synth_generate(spec: SynthSpec, out_dir):
    """Write the synthetic dataset plus its generating spec to ``out_dir``."""
    dataset = synth_dataset(spec)
    save_dataset(out_dir, dataset)
    return dataset


def spec_json(spec: SynthSpec):
    return json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n"
