"""Estimator-style wrapper: recordings in, decoded word lists out."""

from __future__ import annotations

from sklearn.base import BaseEstimator

from ..data.vocab import Vocab
from ..data.windows import collate, make_windows
from ..metrics import corpus_bleu
from .config import ConfigError, ModelConfig
from .generate import generate
from .training import fit


def estimate_word_rate(recordings):
    """Mean words per fMRI frame over ``recordings``."""
    words = sum(len(r.words) for r in recordings)
    frames = sum(r.n_frames for r in recordings)
    if frames == 0 or words == 0:
        raise ConfigError("cannot estimate a word rate from empty recordings")
    return words / frames


class PredFTDecoder(BaseEstimator):
    """Train PredFT on a list of recordings and decode windows of new ones.

    ``config`` holds :class:`ModelConfig` overrides; data-dependent fields
    (vocabulary size, voxel and ROI widths, the per-frame token budget) are
    filled in by :meth:`fit`. ``roi_group=None`` trains without the side
    network. Training windows do not overlap unless ``train_stride`` says so.
    """

    def __init__(self, config=None, atlas=None, roi_group="BPC", max_vocab=64, train_stride=None,
                 eval_stride=None, tokens_per_frame=None, log_fn=None):
        self.config = config
        self.atlas = atlas
        self.roi_group = roi_group
        self.max_vocab = max_vocab
        self.train_stride = train_stride
        self.eval_stride = eval_stride
        self.tokens_per_frame = tokens_per_frame
        self.log_fn = log_fn

    def _base_config(self):
        cfg = self.config or {}
        return cfg.to_dict() if isinstance(cfg, ModelConfig) else dict(cfg)

    def windows(self, recordings, stride):
        cfg = self.config_
        out = []
        for rec in recordings:
            out += make_windows(rec, self.vocab_, cfg.frames, stride, self.atlas,
                                self.roi_group if cfg.side_network else None,
                                cfg.pred_distance, cfg.pred_length, cfg.max_len)
        return out

    def fit(self, X, y=None, valid=None):
        """``X``: training recordings; ``valid``: optional recordings for per-epoch losses."""
        X = list(X)
        if not X:
            raise ConfigError("no training recordings")
        if self.roi_group is not None and self.atlas is None:
            raise ConfigError("an atlas is required for the side network")
        self.vocab_ = Vocab.build([r.words for r in X], max_size=self.max_vocab)
        params = self._base_config()
        side = self.roi_group is not None
        roi_dim = len(self.atlas.resolve(self.roi_group)) if side else params.get("roi_dim", 1)
        rate = self.tokens_per_frame if self.tokens_per_frame is not None else estimate_word_rate(X)
        params.update(vocab_size=len(self.vocab_), voxel_dim=X[0].n_voxels, roi_dim=roi_dim,
                      side_network=side, tokens_per_frame=float(rate), layout=X[0].layout)
        if X[0].layout == "volume":
            params["volume_shape"] = list(X[0].fmri.shape[:-1])
        self.config_ = ModelConfig.from_dict(params)
        train = self.windows(X, self.train_stride or self.config_.frames)
        if not train:
            raise ConfigError(f"recordings shorter than the {self.config_.frames}-frame window")
        held = self.windows(valid, self.eval_stride or self.config_.frames) if valid else None
        self.checkpoint_, self.history_ = fit(self.config_, train, held, log_fn=self.log_fn)
        return self

    def decode_windows(self, recordings, stride=None, batch_size=64):
        """``(samples, decoded word lists)`` for every window of ``recordings``."""
        samples = self.windows(recordings, stride or self.eval_stride or self.config_.frames)
        decoded = []
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i:i + batch_size])
            ids = generate(self.checkpoint_.model, batch.fmri, batch.rois)
            decoded += [self.vocab_.decode(seq) for seq in ids]
        return samples, decoded

    def predict(self, X):
        return self.decode_windows(X)[1]

    def score(self, X, y=None):
        """Corpus BLEU-1 of the decoded windows against their truth words."""
        samples, decoded = self.decode_windows(X)
        return corpus_bleu(decoded, [s.words for s in samples], 1)[0]

