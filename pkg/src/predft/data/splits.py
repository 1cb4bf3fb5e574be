"""Leak-free train/validation/test splits and their audit."""

from __future__ import annotations

from dataclasses import dataclass, field


class SplitError(ValueError):
    pass


@dataclass
class SplitSpec:
    """Assignment of ``(subject, story)`` pairs to partitions.

    ``mode`` is ``"within-subject"`` (one subject, disjoint stories) or
    ``"cross-subject"`` (held-out subjects and held-out stories).
    """

    mode: str
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("within-subject", "cross-subject"):
            raise SplitError(f"unknown split mode {self.mode!r}")
        for name in ("train", "valid", "test"):
            setattr(self, name, [tuple(p) for p in getattr(self, name)])

    @classmethod
    def auto(cls, recordings, mode="within-subject", n_valid=1, n_test=1, subject=None):
        """Deterministic assignment: the last stories (and, cross-subject, last subjects) are held out."""
        subjects = sorted({r.subject for r in recordings})
        stories = sorted({r.story for r in recordings})
        if len(stories) < n_valid + n_test + 1:
            raise SplitError(f"{len(stories)} stories cannot fill train/valid/test")
        test_st = stories[len(stories) - n_test:]
        valid_st = stories[len(stories) - n_test - n_valid:len(stories) - n_test]
        train_st = stories[:len(stories) - n_test - n_valid]
        pairs = {(r.subject, r.story) for r in recordings}
        if mode == "within-subject":
            subj = subject or subjects[0]
            pick = lambda sts: [(subj, s) for s in sts if (subj, s) in pairs]  # noqa: E731
            return cls(mode, pick(train_st), pick(valid_st), pick(test_st))
        if len(subjects) < 2:
            raise SplitError("cross-subject splits need at least 2 subjects")
        held = subjects[-1:]
        train_sub = subjects[:-1]
        train = [(s, st) for s in train_sub for st in train_st if (s, st) in pairs]
        valid = [(s, st) for s in held for st in valid_st if (s, st) in pairs]
        test = [(s, st) for s in held for st in test_st if (s, st) in pairs]
        return cls(mode, train, valid, test)


@dataclass
class Splits:
    train: list
    valid: list
    test: list
    audit: list


def audit_split(spec: SplitSpec):
    """List leakage violations; empty when the split is clean."""
    problems = []
    train_subjects = {s for s, _ in spec.train}
    train_stories = {st for _, st in spec.train}
    for part in ("valid", "test"):
        for subj, story in getattr(spec, part):
            if story in train_stories:
                problems.append(f"story-overlap: {part} ({subj}, {story}) shares story with train")
            if spec.mode == "cross-subject" and subj in train_subjects:
                problems.append(f"subject-overlap: {part} ({subj}, {story}) shares subject with train")
    if spec.mode == "within-subject":
        subjects = {s for s, _ in spec.train + spec.valid + spec.test}
        if len(subjects) > 1:
            problems.append(f"subject-mix: within-subject split spans subjects {sorted(subjects)}")
    return problems


def make_splits(recordings, spec: SplitSpec):
    """Partition recordings by ``spec`` and attach the audit report."""
    if spec.mode == "cross-subject":
        if len({r.subject for r in recordings}) < 2:
            raise SplitError("cross-subject mode needs at least 2 subjects")
        if len({r.story for r in recordings}) < 2:
            raise SplitError("cross-subject mode needs at least 2 stories")
    by_key = {(r.subject, r.story): r for r in recordings}
    parts = {}
    for name in ("train", "valid", "test"):
        missing = [p for p in getattr(spec, name) if p not in by_key]
        if missing:
            raise SplitError(f"{name} references unknown recordings {missing}")
        parts[name] = [by_key[p] for p in getattr(spec, name)]
    return Splits(parts["train"], parts["valid"], parts["test"], audit_split(spec))
