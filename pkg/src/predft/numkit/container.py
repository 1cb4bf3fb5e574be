"""Tensor container: a directory of raw little-endian float64 files plus ``manifest.json``."""

import json
import os
import re
from pathlib import Path

import numpy as np

_SAFE = re.compile(r"[^A-Za-z0-9_.-]")


class ContainerError(ValueError):
    pass


def _filename(name):
    return _SAFE.sub("_", name) + ".bin"


def save_tensors(directory, tensors):
    """Write ``{name: array}`` to ``directory`` (created if missing).

    Entries are written in sorted name order so output bytes depend only on content.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, used = [], set()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f8"))
        fname = _filename(name)
        if fname in used:
            raise ContainerError(f"file name collision for tensor {name!r}")
        used.add(fname)
        (directory / fname).write_bytes(arr.tobytes())
        entries.append({"name": name, "dtype": "f64", "shape": list(arr.shape), "file": fname})
    text = json.dumps({"entries": entries}, indent=2, sort_keys=True) + "\n"
    (directory / "manifest.json").write_text(text)


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise ContainerError(f"missing {path}")
    return json.loads(path.read_text())["entries"]


def load_tensors(directory, names=None):
    """Load a container, validating ``product(shape) * 8 == file size`` for each entry."""
    directory = Path(directory)
    out = {}
    for entry in read_manifest(directory):
        if names is not None and entry["name"] not in names:
            continue
        if entry.get("dtype") != "f64":
            raise ContainerError(f"{entry['name']}: unsupported dtype {entry.get('dtype')!r}")
        path = directory / entry["file"]
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape)) * 8
        actual = os.path.getsize(path) if path.is_file() else -1
        if actual != expected:
            raise ContainerError(f"{entry['name']}: file is {actual} bytes, shape needs {expected}")
        out[entry["name"]] = np.fromfile(path, dtype="<f8").reshape(shape).astype(np.float64)
    if names is not None:
        missing = set(names) - set(out)
        if missing:
            raise ContainerError(f"tensors not found: {sorted(missing)}")
    return out
