"""Text-generation metrics and decoding-error position analysis.

Scores are on a 0-100 scale. BLEU is unsmoothed: a zero n-gram precision
makes BLEU-n exactly zero.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np


def _ngrams(words, n):
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def _clipped(candidate, references, n):
    cand = _ngrams(candidate, n)
    max_ref = Counter()
    for ref in references:
        for g, c in _ngrams(ref, n).items():
            max_ref[g] = max(max_ref[g], c)
    match = sum(min(c, max_ref[g]) for g, c in cand.items())
    return match, max(len(candidate) - n + 1, 0)


def _closest_ref_len(c, references):
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def brevity_penalty(c, r):
    if c > r:
        return 1.0
    if c == 0:
        return 0.0
    return math.exp(1 - r / c)


def modified_precision(candidate, references, n):
    match, total = _clipped(list(candidate), [list(r) for r in references], n)
    return match / total if total else 0.0


def _bleu_from_counts(matches, totals, c, r, max_n):
    scores = []
    bp = brevity_penalty(c, r)
    for n in range(1, max_n + 1):
        precisions = [matches[k] / totals[k] if totals[k] else 0.0 for k in range(n)]
        if min(precisions) == 0.0:
            scores.append(0.0)
            continue
        scores.append(100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / n))
    return scores


def bleu(candidate, references, max_n=4):
    """BLEU-1..max_n for one candidate; ``references`` is a list of word lists."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    references = [list(r) for r in references]
    if not references or not any(references):
        raise ValueError("empty reference")
    candidate = list(candidate)
    counts = [_clipped(candidate, references, n) for n in range(1, max_n + 1)]
    return _bleu_from_counts([m for m, _ in counts], [t for _, t in counts], len(candidate),
                             _closest_ref_len(len(candidate), references), max_n)


def corpus_bleu(candidates, references, max_n=4):
    """Corpus BLEU: clipped counts and lengths pooled over all pairs (one reference each)."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference count mismatch")
    matches = np.zeros(max_n)
    totals = np.zeros(max_n)
    c = r = 0
    for cand, ref in zip(candidates, references):
        if not ref:
            raise ValueError("empty reference")
        for n in range(1, max_n + 1):
            m, t = _clipped(list(cand), [list(ref)], n)
            matches[n - 1] += m
            totals[n - 1] += t
        c += len(cand)
        r += len(ref)
    return _bleu_from_counts(matches, totals, c, r, max_n)


def rouge1(candidate, reference):
    """Clipped unigram overlap as ``(precision, recall, f1)``."""
    cand, ref = Counter(candidate), Counter(reference)
    if not candidate or not reference:
        return 0.0, 0.0, 0.0
    overlap = sum(min(c, ref[w]) for w, c in cand.items())
    p = overlap / len(candidate)
    r = overlap / len(reference)
    f = 2 * p * r / (p + r) if p + r else 0.0
    return 100.0 * p, 100.0 * r, 100.0 * f


# -- decoding-error positions ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorEvent:
    kind: str          # substitution | insertion | deletion
    truth_pos: int     # global truth word index
    frame: int
    pospct: int        # 10, 20, ..., 100


def frame_of_positions(frame_sizes):
    """Map each truth word index to ``(frame, 1-based position in frame, frame size)``."""
    out = []
    for f, n in enumerate(frame_sizes):
        out.extend((f, i + 1, n) for i in range(n))
    return out


def pospct(position, frame_size):
    return int(math.ceil(10 * position / frame_size)) * 10


def edit_alignment(decoded, truth):
    """Unit-cost edit script between ``decoded`` and ``truth``.

    Returns ``(cost, ops)`` where ops are ``(kind, i_decoded, j_truth)`` in
    order; kinds are match/substitution/insertion/deletion. Back-tracking
    prefers substitution, then deletion, then insertion on ties.
    """
    a = [w.lower() for w in decoded]
    b = [w.lower() for w in truth]
    n, m = len(a), len(b)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (a[i - 1] != b[j - 1]), D[i, j - 1] + 1, D[i - 1, j] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (a[i - 1] != b[j - 1]):
            ops.append(("match" if a[i - 1] == b[j - 1] else "substitution", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif j > 0 and D[i, j] == D[i, j - 1] + 1:
            ops.append(("deletion", None, j - 1))
            j -= 1
        else:
            ops.append(("insertion", i - 1, None))
            i -= 1
    return int(D[n, m]), ops[::-1]


def align_errors(decoded, truth, frame_sizes):
    """Classify decoding errors against the truth words.

    Substitutions mark the mismatched truth word, insertions mark the last
    matched truth word before them (the first truth word if none), deletions
    mark every missing truth word.
    """
    if not truth:
        raise ValueError("truth must be non-empty")
    if sum(frame_sizes) != len(truth):
        raise ValueError("frame sizes do not cover the truth words")
    where = frame_of_positions(frame_sizes)
    _, ops = edit_alignment(decoded, truth)
    events = []
    last_matched = None
    for kind, _, j in ops:
        if kind == "match":
            last_matched = j
            continue
        pos = j if kind != "insertion" else (last_matched if last_matched is not None else 0)
        frame, k, size = where[pos]
        events.append(ErrorEvent(kind, pos, frame, pospct(k, size)))
    return events


@dataclass
class PositionHistogram:
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(10))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(10, dtype=np.int64))
    empty: bool = True

    @property
    def first_half(self):
        return float(self.probabilities[:5].sum())

    @property
    def last_half(self):
        return float(self.probabilities[5:].sum())


def error_position_distribution(events):
    """Fraction of error events in each PosPCT decile (10 % … 100 %)."""
    counts = np.zeros(10, dtype=np.int64)
    for e in events:
        counts[e.pospct // 10 - 1] += 1
    total = counts.sum()
    if total == 0:
        return PositionHistogram()
    return PositionHistogram(counts / total, counts, False)


def info_loss_slope(hist):
    """Excess error probability in the later half of frames over the earlier half, per half."""
    p = np.asarray(hist.probabilities if isinstance(hist, PositionHistogram) else hist, dtype=np.float64)
    return float((p[5:].sum() - p[:5].sum()) / 0.5)


@dataclass
class ScoreReport:
    bleu: list
    rouge1_p: float
    rouge1_r: float
    rouge1_f: float
    pairs: int
    histogram: PositionHistogram = None
    phi: float = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {f"bleu_{n}": round(v, 10) for n, v in enumerate(self.bleu, start=1)}
        d.update({"rouge1_p": self.rouge1_p, "rouge1_r": self.rouge1_r, "rouge1_f": self.rouge1_f,
                  "pairs": self.pairs})
        if self.histogram is not None:
            d["histogram"] = [float(p) for p in self.histogram.probabilities]
            d["phi"] = self.phi
        d.update(self.extra)
        return d


def score_pairs(candidates, references, plugin_scores=None):
    """Corpus BLEU-1..4 and mean ROUGE-1 over decoded/truth word-list pairs.

    ``plugin_scores`` merges externally computed metrics (e.g. BERTScore) as
    ``{name: per-pair list}``; they are averaged into the report.
    """
    b = corpus_bleu(candidates, references) if candidates else [0.0] * 4
    rs = np.array([rouge1(c, r) for c, r in zip(candidates, references)]) if candidates else np.zeros((1, 3))
    extra = {}
    for name, values in (plugin_scores or {}).items():
        if len(values) != len(candidates):
            raise ValueError(f"plugin metric {name!r} has {len(values)} values for {len(candidates)} pairs")
        extra[name] = float(np.mean(values))
    return ScoreReport(b, *(float(x) for x in rs.mean(axis=0)), len(candidates), extra=extra)
