"""Brain scores and prediction scores: does adding future-word features help a ridge map?

A brain score is the voxel-mean Pearson r between cross-validated ridge
predictions and measured responses. A prediction score is the gain in brain
score from appending features of the words ``d .. d+l-1`` positions after
each frame's anchor word (its first word).
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numkit import pca_reduce, pearson_columns, solve_spd


class AlignError(ValueError):
    pass


# -- activation tables ---------------------------------------------------------------------

@dataclass
class ActivationTable:
    """Per-word feature rows of one story plus the frame each word was heard in."""

    activations: np.ndarray       # (M, D)
    word_frames: np.ndarray       # (M,) non-decreasing frame ids
    n_frames: int
    words: list = field(default_factory=list)

    def __post_init__(self):
        self.activations = np.asarray(self.activations, dtype=np.float64)
        self.word_frames = np.asarray(self.word_frames, dtype=np.int64)
        if self.activations.ndim != 2 or len(self.activations) != len(self.word_frames):
            raise AlignError("activations must be (words, dim) with one frame id per word")
        if len(self.word_frames) and (np.diff(self.word_frames) < 0).any():
            raise AlignError("word frame ids must be non-decreasing")
        if len(self.word_frames) and (self.word_frames.min() < 0 or self.word_frames.max() >= self.n_frames):
            raise AlignError("word frame id outside the story")

    @classmethod
    def from_frames(cls, frame_words, lookup):
        """Build from per-frame word lists and a ``word -> vector`` mapping."""
        words = [w for f in frame_words for w in f]
        frames = [t for t, f in enumerate(frame_words) for _ in f]
        rows = np.array([lookup(w) for w in words], dtype=np.float64)
        if not words:
            raise AlignError("story has no words")
        return cls(rows, np.array(frames), len(frame_words), words)

    @property
    def n_words(self):
        return len(self.word_frames)

    @property
    def dim(self):
        return self.activations.shape[1]

    def anchors(self):
        """Index of each frame's first word; empty frames inherit the previous anchor."""
        first = np.full(self.n_frames, -1, dtype=np.int64)
        idx = np.arange(self.n_words)
        # first occurrence per frame: iterate in reverse so the smallest index wins
        first[self.word_frames[::-1]] = idx[::-1]
        if first[0] < 0:
            raise AlignError("first frame has no words to anchor on")
        return np.maximum.accumulate(first)


def select_frame_activations(table: ActivationTable, activations=None):
    """Anchor-word activation of every frame, ``(N, D)``."""
    acts = table.activations if activations is None else np.asarray(activations)
    return acts[table.anchors()]


def build_future_features(table: ActivationTable, d, l, activations=None):
    """Concatenated activations of words ``anchor + d … anchor + d + l - 1``; zeros past the end."""
    if d < 0 or l < 1:
        raise AlignError(f"need d >= 0 and l >= 1, got d={d}, l={l}")
    acts = table.activations if activations is None else np.asarray(activations)
    r = acts.shape[1]
    anchors = table.anchors()
    out = np.zeros((table.n_frames, r * l))
    for j in range(l):
        pos = anchors + d + j
        ok = pos < len(acts)
        out[ok, j * r:(j + 1) * r] = acts[pos[ok]]
    return out


# -- ridge ---------------------------------------------------------------------------------

DEFAULT_PENALTIES = tuple(float(a) for a in np.logspace(-1, 8, 10))


@dataclass(frozen=True)
class RidgeSpec:
    """Penalty grid and fold count. ``folds=1`` fits in-sample with the first penalty."""

    penalties: tuple = DEFAULT_PENALTIES
    folds: int = 10

    def __post_init__(self):
        pen = np.asarray(self.penalties, dtype=np.float64)
        if pen.size == 0 or (pen <= 0).any():
            raise AlignError("penalties must be positive")
        if (np.diff(pen) <= 0).any():
            raise AlignError("penalties must be strictly increasing")
        if self.folds < 1:
            raise AlignError("folds must be >= 1")


def fold_bounds(n, folds):
    """Contiguous ``(start, stop)`` blocks; the remainder goes to the leading folds."""
    if n < folds:
        raise AlignError(f"{n} rows cannot be split into {folds} folds")
    sizes = np.full(folds, n // folds)
    sizes[:n % folds] += 1
    stops = np.cumsum(sizes)
    return list(zip((stops - sizes).tolist(), stops.tolist()))


def _active_columns(x):
    return np.ptp(x, axis=0) > 0


def select_penalty(x, y, penalties):
    """Penalty minimising exact leave-one-out MSE over all voxels (intercept unpenalised)."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    uty = u.T @ yc
    s2 = s * s
    errs = []
    for alpha in penalties:
        shrink = s2 / (s2 + alpha)
        fitted = u @ (shrink[:, None] * uty)
        lev = (u * u) @ shrink + 1.0 / n
        resid = (yc - fitted) / (1.0 - lev)[:, None]
        errs.append(float(np.mean(resid * resid)))
    return penalties[int(np.argmin(errs))], errs


def ridge_fit(x, y, alpha):
    """Centred ridge: returns ``(coef, x_mean, y_mean)`` solving ``(XcᵀXc + αI) B = XcᵀYc``."""
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    coef = solve_spd(xc.T @ xc + alpha * np.eye(x.shape[1]), xc.T @ yc)
    return coef, xm, ym


def ridge_predict(model, x):
    coef, xm, ym = model
    return (x - xm) @ coef + ym


@dataclass
class BrainScore:
    score: float
    voxel_scores: np.ndarray
    predictions: np.ndarray
    fold_scores: np.ndarray
    penalties: list


def _materialize(features, train_rows):
    x = features(train_rows) if callable(features) else features
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise AlignError("features must be a 2-D matrix")
    return x


def brain_score(features, responses, spec: RidgeSpec = RidgeSpec()):
    """Cross-validated ridge brain score.

    ``features`` is an ``(N, p)`` matrix or a callable mapping the training
    row indices of a fold to an ``(N, p)`` matrix, which lets feature
    reduction be fitted on training rows only.

    Held-out predictions and responses are concatenated over folds and each
    is centred within its fold before the per-voxel correlation. Without that
    step the fold-to-fold wobble of the training-set intercept correlates
    negatively with the held-out means and pure noise scores well below zero.
    """
    y = np.asarray(responses, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if spec.folds == 1:
        rows = np.arange(n)
        x = _materialize(features, rows)
        _check_rows(x, n)
        keep = _active_columns(x)
        if not keep.any():
            raise AlignError("feature matrix has zero variance")
        alpha = spec.penalties[0]
        pred = ridge_predict(ridge_fit(x[:, keep], y, alpha), x[:, keep])
        r = pearson_columns(pred, y)
        return BrainScore(float(r.mean()), r, pred, np.array([r.mean()]), [alpha])

    pred = np.zeros_like(y)
    fold_scores, chosen = [], []
    for start, stop in fold_bounds(n, spec.folds):
        test = np.zeros(n, dtype=bool)
        test[start:stop] = True
        train_rows = np.flatnonzero(~test)
        x = _materialize(features, train_rows)
        _check_rows(x, n)
        keep = _active_columns(x[~test])
        if not keep.any():
            raise AlignError("feature matrix has zero variance in a training fold")
        xt = x[:, keep]
        alpha, _ = select_penalty(xt[~test], y[~test], spec.penalties)
        pred[test] = ridge_predict(ridge_fit(xt[~test], y[~test], alpha), xt[test])
        chosen.append(alpha)
        fold_scores.append(pearson_columns(pred[test], y[test]).mean() if stop - start > 1 else 0.0)
    r = pearson_columns(pred - fold_means(pred, spec.folds), y - fold_means(y, spec.folds))
    return BrainScore(float(r.mean()), r, pred, np.array(fold_scores), chosen)


def fold_means(a, folds):
    """Each row replaced by the column means of its fold."""
    out = np.empty_like(a)
    for start, stop in fold_bounds(len(a), folds):
        out[start:stop] = a[start:stop].mean(axis=0)
    return out


def _check_rows(x, n):
    if x.shape[0] != n:
        raise AlignError(f"features have {x.shape[0]} rows, responses have {n}")


def _concat(base, future):
    if callable(base) or callable(future):
        def both(rows):
            return np.hstack([_materialize(base, rows), _materialize(future, rows)])
        return both
    base, future = np.asarray(base), np.asarray(future)
    if base.shape[0] != future.shape[0]:
        raise AlignError(f"row mismatch: {base.shape[0]} vs {future.shape[0]}")
    return np.hstack([base, future])


@dataclass
class PredictionScore:
    score: float
    fold_std: float
    full: BrainScore
    base: BrainScore


def prediction_score(base, future, responses, spec: RidgeSpec = RidgeSpec()):
    """``R(base ⊕ future) - R(base)`` with identical folds and penalty grid."""
    full = brain_score(_concat(base, future), responses, spec)
    ref = brain_score(base, responses, spec)
    diff = full.fold_scores - ref.fold_scores
    return PredictionScore(full.score - ref.score, float(diff.std()), full, ref)


def roi_score(features, responses, roi_indices, spec: RidgeSpec = RidgeSpec()):
    """Brain score restricted to the voxel columns ``roi_indices``."""
    y = np.asarray(responses)
    idx = np.asarray(roi_indices, dtype=np.int64)
    if idx.size == 0:
        raise AlignError("empty ROI")
    if idx.min() < 0 or idx.max() >= y.shape[1]:
        raise AlignError("ROI index out of range")
    if len(np.unique(idx)) != idx.size:
        raise AlignError("duplicate ROI index")
    return brain_score(features, np.ascontiguousarray(y[:, idx]), spec)


# -- multi-story feature pipeline ----------------------------------------------------------

class StoryFeatures:
    """Anchor and future-word features over several stories stacked row-wise.

    Word activations are PCA-reduced to ``reduced_dim`` with the reduction
    fitted on the words heard in the training rows of each fold.
    """

    def __init__(self, tables: Sequence[ActivationTable], reduced_dim=20):
        if not tables:
            raise AlignError("no stories")
        self.tables = list(tables)
        self.reduced_dim = reduced_dim
        offsets = np.cumsum([0] + [t.n_frames for t in self.tables])
        self.offsets = offsets
        self.n_rows = int(offsets[-1])
        self._cache = {}

    def _reduced(self, train_rows):
        key = None if train_rows is None else hash(np.asarray(train_rows).tobytes())
        if key in self._cache:
            return self._cache[key]
        if train_rows is None:
            fit_rows = np.concatenate([t.activations for t in self.tables])
        else:
            mask = np.zeros(self.n_rows, dtype=bool)
            mask[train_rows] = True
            parts = [t.activations[mask[o + t.word_frames]] for t, o in zip(self.tables, self.offsets)]
            fit_rows = np.concatenate(parts)
        k = min(self.reduced_dim, *fit_rows.shape)
        proj, _, _ = pca_reduce(fit_rows, k)
        mean = fit_rows.mean(axis=0)
        out = [(t.activations - mean) @ proj for t in self.tables]
        self._cache[key] = out
        return out

    def base(self, train_rows=None):
        reduced = self._reduced(train_rows)
        return np.vstack([select_frame_activations(t, r) for t, r in zip(self.tables, reduced)])

    def future(self, d, l, train_rows=None):
        reduced = self._reduced(train_rows)
        return np.vstack([build_future_features(t, d, l, r) for t, r in zip(self.tables, reduced)])

    def base_source(self):
        return lambda rows: self.base(rows)

    def future_source(self, d, l):
        return lambda rows: self.future(d, l, rows)


# -- sweeps --------------------------------------------------------------------------------

@dataclass
class ScoreSurface:
    roi_set: str
    d_values: list
    l_values: list
    scores: np.ndarray        # (|d|, |l|)
    fold_std: np.ndarray

    def argmax_d(self, l):
        j = self.l_values.index(l)
        return self.d_values[int(np.argmax(self.scores[:, j]))]


def sweep_threads():
    """Worker count from ``PREDFT_THREADS``, defaulting to the machine's cores."""
    cores = os.cpu_count() or 1
    try:
        return max(1, int(os.environ.get("PREDFT_THREADS", cores)))
    except ValueError:
        return cores


def score_sweep(features: StoryFeatures, responses, d_range, l_range, roi_sets, spec: RidgeSpec = RidgeSpec(),
                threads=None):
    """Prediction score for every ``(d, l)`` cell and ROI set.

    ``roi_sets`` maps a name to voxel indices. Cells are independent and
    gathered by index, so the result does not depend on ``threads``.
    """
    d_values, l_values = list(d_range), list(l_range)
    if not d_values or not l_values:
        raise AlignError("empty sweep range")
    y = np.asarray(responses, dtype=np.float64)
    cells = [(name, i, j) for name in roi_sets for i in range(len(d_values)) for j in range(len(l_values))]

    def run(cell):
        name, i, j = cell
        idx = np.asarray(roi_sets[name], dtype=np.int64)
        ps = prediction_score(features.base_source(), features.future_source(d_values[i], l_values[j]),
                              np.ascontiguousarray(y[:, idx]), spec)
        return ps.score, ps.fold_std

    threads = sweep_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    surfaces = {}
    for name in roi_sets:
        surfaces[name] = ScoreSurface(name, d_values, l_values,
                                      np.zeros((len(d_values), len(l_values))),
                                      np.zeros((len(d_values), len(l_values))))
    for (name, i, j), (score, std) in zip(cells, results):
        surfaces[name].scores[i, j] = score
        surfaces[name].fold_std[i, j] = std
    return surfaces


def surfaces_csv(surfaces):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "l", "roi_set", "score", "fold_std"])
    for name in surfaces:
        s = surfaces[name]
        for i, d in enumerate(s.d_values):
            for j, l in enumerate(s.l_values):
                w.writerow([d, l, name, f"{s.scores[i, j]:.10f}", f"{s.fold_std[i, j]:.10f}"])
    return buf.getvalue()


_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf", "#393b79", "#637939"]


def surface_svg(surface: ScoreSurface, width=480, height=320):
    """Line plot of score against d, one polyline per l."""
    pad = 40
    d = np.asarray(surface.d_values, dtype=np.float64)
    lo, hi = float(surface.scores.min()), float(surface.scores.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    xs = pad + (d - d.min()) / max(d.max() - d.min(), 1.0) * (width - 2 * pad)

    def ys(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<text x="{pad}" y="20">{surface.roi_set}</text>']
    for j, l in enumerate(surface.l_values):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(f"{x:.2f},{ys(v):.2f}" for x, v in zip(xs, surface.scores[:, j]))
        parts.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * j}" fill="{color}">l={l}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
