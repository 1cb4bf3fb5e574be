"""Whitespace tokenisation and a frequency-ordered vocabulary."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

PAD, UNK, BOS, EOS, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "<sep>")

_PUNCT = re.compile(r"[^\w\s']")


def normalize_words(words):
    """Lowercase, strip punctuation, split on whitespace."""
    if isinstance(words, str):
        words = [words]
    out = []
    for w in words:
        out.extend(_PUNCT.sub(" ", w.lower()).split())
    return out


@dataclass
class Vocab:
    tokens: list = field(default_factory=lambda: list(RESERVED))

    def __post_init__(self):
        if tuple(self.tokens[:len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, word_lists, max_size=None):
        """Ids ordered by descending frequency, ties broken lexicographically."""
        counts = Counter()
        for words in word_lists:
            counts.update(normalize_words(words))
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        if max_size is not None:
            ranked = ranked[:max(0, max_size - len(RESERVED))]
        return cls(list(RESERVED) + ranked)

    def __len__(self):
        return len(self.tokens)

    def encode(self, words):
        return [self.index.get(w, UNK) for w in normalize_words(words)]

    def decode(self, ids, strip_special=True):
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, BOS, EOS, SEP):
                continue
            out.append(self.tokens[i])
        return out


def tokenize(words, vocab):
    return vocab.encode(words)


def detokenize(ids, vocab):
    return vocab.decode(ids)
