"""Recordings, ROI atlases and the on-disk dataset manifest."""

from __future__ import annotations

import json
import os
import re
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numkit import load_tensors, save_tensors


class DatasetError(ValueError):
    pass


@dataclass
class Recording:
    """One subject listening to one story.

    ``fmri`` is ``(voxels, frames)`` for surface data or ``(W, H, D, frames)``
    for volumes; ``frame_words[t]`` lists the words heard during frame ``t``.
    """

    subject: str
    story: str
    fmri: np.ndarray
    frame_words: list
    tr_seconds: float = 2.0
    layout: str = "surface"

    def __post_init__(self):
        self.fmri = np.asarray(self.fmri, dtype=np.float64)
        if self.layout not in ("surface", "volume"):
            raise DatasetError(f"unknown layout {self.layout!r}")
        expected_ndim = 2 if self.layout == "surface" else 4
        if self.fmri.ndim != expected_ndim:
            raise DatasetError(f"{self.layout} fMRI must be {expected_ndim}-D, got {self.fmri.shape}")
        if self.fmri.shape[-1] != len(self.frame_words):
            raise DatasetError(
                f"{self.subject}/{self.story}: {self.fmri.shape[-1]} frames but "
                f"{len(self.frame_words)} word lists")
        if self.tr_seconds <= 0:
            raise DatasetError("tr_seconds must be positive")

    @property
    def n_frames(self):
        return self.fmri.shape[-1]

    @property
    def n_voxels(self):
        return int(np.prod(self.fmri.shape[:-1]))

    def surface(self):
        """``(voxels, frames)`` view; volumes are flattened in C order."""
        return self.fmri.reshape(-1, self.n_frames)

    @property
    def words(self):
        return [w for frame in self.frame_words for w in frame]

    def word_frames(self):
        return np.array([t for t, frame in enumerate(self.frame_words) for _ in frame], dtype=np.int64)

    def anchors(self):
        """Global index of the first word of each frame, or -1 for empty frames."""
        out, pos = [], 0
        for frame in self.frame_words:
            out.append(pos if frame else -1)
            pos += len(frame)
        return np.array(out, dtype=np.int64)

    def with_fmri(self, fmri):
        return Recording(self.subject, self.story, fmri, self.frame_words, self.tr_seconds, self.layout)


_RANDOM = re.compile(r"^Random(?:\((\d+)\s*,\s*(\d+)\))?$")


@dataclass
class RoiAtlas:
    """Named voxel regions and named groups of regions.

    Besides declared groups, ``"Whole"`` resolves to every voxel and
    ``"Random(seed,n)"`` to ``n`` voxels drawn without replacement.
    """

    n_voxels: int
    regions: dict
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, idx in self.regions.items():
            idx = sorted(int(i) for i in idx)
            if len(set(idx)) != len(idx):
                raise DatasetError(f"region {name!r} has duplicate voxel indices")
            if idx and (idx[0] < 0 or idx[-1] >= self.n_voxels):
                raise DatasetError(f"region {name!r} has indices outside [0, {self.n_voxels})")
            clean[name] = idx
        self.regions = clean
        for g, members in self.groups.items():
            unknown = [m for m in members if m not in self.regions]
            if unknown:
                raise DatasetError(f"group {g!r} references unknown regions {unknown}")

    def resolve(self, name):
        if name == "Whole":
            return np.arange(self.n_voxels)
        m = _RANDOM.match(name)
        if m:
            seed = int(m.group(1)) if m.group(1) else 0
            n = int(m.group(2)) if m.group(2) else min(1000, self.n_voxels)
            if not 1 <= n <= self.n_voxels:
                raise DatasetError(f"cannot draw {n} random voxels from {self.n_voxels}")
            return np.sort(np.random.default_rng(seed).choice(self.n_voxels, size=n, replace=False))
        if name in self.groups:
            members = self.groups[name]
        elif name in self.regions:
            members = [name]
        else:
            raise DatasetError(f"unknown ROI group {name!r}")
        idx = sorted(set(i for r in members for i in self.regions[r]))
        if not idx:
            raise DatasetError(f"ROI group {name!r} is empty")
        return np.array(idx, dtype=np.int64)

    def to_manifest(self):
        out = {name: list(idx) for name, idx in self.regions.items()}
        out["groups"] = {g: list(m) for g, m in self.groups.items()}
        return out

    @classmethod
    def from_manifest(cls, d, n_voxels):
        d = dict(d)
        groups = d.pop("groups", {})
        return cls(n_voxels=n_voxels, regions=d, groups=groups)


@dataclass
class Dataset:
    recordings: list
    atlas: RoiAtlas
    tr_seconds: float = 2.0
    activation_words: list = None
    activations: np.ndarray = None

    @property
    def subjects(self):
        return sorted({r.subject for r in self.recordings})

    @property
    def stories(self):
        return sorted({r.story for r in self.recordings})

    def activation_table(self, words):
        """Word-indexed activations for ``words`` from the stored provider table."""
        if self.activations is None:
            raise DatasetError("dataset carries no activation table")
        index = {w: i for i, w in enumerate(self.activation_words)}
        missing = [w for w in words if w not in index]
        if missing:
            raise DatasetError(f"no activations for words {missing[:5]}")
        return self.activations[[index[w] for w in words]]


def _rec_key(rec):
    return f"{rec.subject}__{rec.story}"


def save_dataset(path, dataset):
    """Write a dataset directory atomically (temp dir renamed into place)."""
    path = Path(path)
    if path.exists():
        raise DatasetError(f"{path} already exists")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
    try:
        write_dataset_contents(tmp, dataset)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_dataset_contents(path, dataset):
    path = Path(path)
    (path / "words").mkdir(parents=True, exist_ok=True)
    tensors, recs = {}, []
    for rec in dataset.recordings:
        key = _rec_key(rec)
        tensors[f"fmri/{key}"] = rec.fmri
        words_file = f"words/{key}.json"
        (path / words_file).write_text(json.dumps(rec.frame_words) + "\n")
        recs.append({"subject": rec.subject, "story": rec.story, "fmri": f"fmri/{key}",
                     "layout": rec.layout, "frame_words": words_file})
    manifest = {
        "tr_seconds": dataset.tr_seconds,
        "subjects": dataset.subjects,
        "stories": dataset.stories,
        "recordings": recs,
        "atlas": dataset.atlas.to_manifest(),
    }
    if dataset.activations is not None:
        tensors["activations"] = dataset.activations
        manifest["activations"] = {"tensor": "activations", "words": list(dataset.activation_words)}
    save_tensors(path / "tensors", tensors)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path):
    """Load and validate a dataset directory."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DatasetError(f"no manifest.json in {path}")
    manifest = json.loads(mpath.read_text())
    tensors = load_tensors(path / "tensors")
    recordings = []
    for entry in manifest["recordings"]:
        if entry["fmri"] not in tensors:
            raise DatasetError(f"missing tensor {entry['fmri']!r}")
        frame_words = json.loads((path / entry["frame_words"]).read_text())
        rec = Recording(entry["subject"], entry["story"], tensors[entry["fmri"]], frame_words,
                        float(manifest["tr_seconds"]), entry.get("layout", "surface"))
        if rec.n_frames < 2:
            raise DatasetError(f"{_rec_key(rec)}: voxel normalisation needs at least 2 frames")
        recordings.append(rec)
    if not recordings:
        raise DatasetError("dataset has no recordings")
    n_vox = {r.n_voxels for r in recordings}
    if len(n_vox) != 1:
        raise DatasetError(f"recordings disagree on voxel count: {sorted(n_vox)}")
    atlas = RoiAtlas.from_manifest(manifest.get("atlas", {}), n_vox.pop())
    act = manifest.get("activations")
    return Dataset(
        recordings=recordings,
        atlas=atlas,
        tr_seconds=float(manifest["tr_seconds"]),
        activation_words=act["words"] if act else None,
        activations=tensors[act["tensor"]] if act else None,
    )
