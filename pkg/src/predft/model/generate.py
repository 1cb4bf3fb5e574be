"""Autoregressive decoding with the main network (side decoder unused)."""

from __future__ import annotations

import numpy as np

from .. import numkit as nk
from ..data.vocab import BOS, EOS, PAD, SEP, UNK
from .network import PredFT

BLOCKED = (PAD, UNK, BOS, SEP)


def inference_fragments(length, tokens_per_frame):
    """Fragment id of each generated position from a fixed per-frame token budget."""
    return (np.arange(length) / tokens_per_frame).astype(np.int64)


def restrict(logits):
    """Logits with tokens that can never be emitted pushed to -inf."""
    out = np.array(logits, dtype=np.float64, copy=True)
    out[..., list(BLOCKED)] = -np.inf
    return out


def encode(model: PredFT, fmri, rois):
    with nk.no_grad():
        enc = model.encode_fmri(fmri)
        pred = model.encode_rois(rois) if model.side is not None else None
    return enc, pred


def step_logits(model: PredFT, enc, pred, prefix):
    """Next-token logits ``(B, V)`` after ``prefix`` (``(B, T)`` ids starting with BOS)."""
    frags = np.broadcast_to(inference_fragments(prefix.shape[1], model.cfg.tokens_per_frame), prefix.shape)
    with nk.no_grad():
        logits = model.decode_main(enc, pred, prefix, frags)
    return logits.data[:, -1]


def greedy(model: PredFT, enc, pred, max_len):
    B = enc.shape[0]
    seqs = np.full((B, 1), BOS, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    limit = min(max_len, model.cfg.max_len - 1)
    for _ in range(limit):
        nxt = restrict(step_logits(model, enc, pred, seqs)).argmax(axis=-1)
        nxt = np.where(done, PAD, nxt)
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        done |= nxt == EOS
        if done.all():
            break
    return [_strip(row[1:]) for row in seqs]


def beam_search(model: PredFT, enc, pred, max_len, width):
    """Length-unnormalised beam search, one sample at a time."""
    results = []
    limit = min(max_len, model.cfg.max_len - 1)
    for b in range(enc.shape[0]):
        e = enc[b:b + 1]
        p = pred[b:b + 1] if pred is not None else None
        beams = [(0.0, [BOS], False)]
        for _ in range(limit):
            if all(done for _, _, done in beams):
                break
            candidates = []
            for score, seq, done in beams:
                if done:
                    candidates.append((score, seq, True))
                    continue
                logits = restrict(step_logits(model, e, p, np.array([seq])))[0]
                logp = logits - np.logaddexp.reduce(logits[np.isfinite(logits)])
                for tok in np.argsort(-logp, kind="stable")[:width]:
                    candidates.append((score + logp[tok], seq + [int(tok)], tok == EOS))
            candidates.sort(key=lambda c: -c[0])
            beams = candidates[:width]
        results.append(_strip(np.array(beams[0][1][1:])))
    return results


def _strip(row):
    out = []
    for t in row:
        t = int(t)
        if t == EOS or t == PAD:
            break
        out.append(t)
    return out


def generate(model: PredFT, fmri, rois=None, max_len=None, beam=None):
    """Decode token id lists for a batch of fMRI windows."""
    max_len = model.cfg.max_gen_len if max_len is None else max_len
    beam = model.cfg.beam if beam is None else beam
    if max_len <= 0:
        return [[] for _ in range(len(fmri))]
    enc, pred = encode(model, fmri, rois)
    if beam > 1:
        return beam_search(model, enc, pred, max_len, beam)
    return greedy(model, enc, pred, max_len)
