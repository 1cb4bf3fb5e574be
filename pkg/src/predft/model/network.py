"""PredFT: fMRI encoders, FIR fusion, main decoder with predictive-coding attention, side network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..data.vocab import BOS, PAD
from ..numkit import Tensor
from .config import ModelConfig
from .layers import (
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    GroupNorm,
    Linear,
    Module,
    causal_mask,
    dropout,
    uniform_init,
    zeros,
)


# -- predictive-coding mask -----------------------------------------------------------

@dataclass(frozen=True)
class PcMask:
    mask: np.ndarray        # (k_t, k_star) bool
    fragments: np.ndarray   # (k_t,) fragment id per token


def build_pc_mask(token_fragments, k_star):
    """Token of fragment ``t`` may attend predictive rows ``j >= min(t, k_star - 1)``."""
    frags = np.asarray(token_fragments, dtype=np.int64)
    if k_star < 1:
        raise ValueError("k_star must be positive")
    if frags.size and (np.diff(frags) < 0).any():
        raise ValueError("fragment ids must be non-decreasing")
    if frags.size and frags.min() < 0:
        raise ValueError("fragment ids must be non-negative")
    start = np.minimum(frags, k_star - 1)
    mask = np.arange(k_star)[None, :] >= start[:, None]
    return PcMask(mask=mask, fragments=frags)


def batch_pc_mask(fragments, k_star):
    """Stack per-row masks for a ``(B, T)`` fragment array."""
    start = np.minimum(np.asarray(fragments), k_star - 1)
    return np.arange(k_star)[None, None, :] >= start[..., None]


# -- fMRI encoders ----------------------------------------------------------------------

class SurfaceEncoder(Module):
    """Linear layers halving the width from ``d_s`` down to ``d_model``; no nonlinearity."""

    def __init__(self, rng, d_in, d_model):
        if d_in < d_model:
            raise ValueError(f"surface width {d_in} smaller than d_model {d_model}")
        widths = [d_in]
        while widths[-1] // 2 > d_model:
            widths.append(widths[-1] // 2)
        widths.append(d_model)
        self.widths = widths
        self.layers = [Linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ConvBlock(Module):
    """group_norm -> ReLU -> conv3d, with a residual when the shape is preserved."""

    def __init__(self, rng, c_in, c_out, size, stride):
        groups = max(g for g in (4, 2, 1) if c_in % g == 0)
        self.norm = GroupNorm(c_in, groups)
        self.kernel = uniform_init(rng, (size, size, size, c_in, c_out), size ** 3 * c_in)
        self.bias = zeros((c_out,))
        self.stride = stride
        self.residual = size == 1 and stride == 1 and c_in == c_out

    def __call__(self, x):
        h = nk.conv3d(nk.relu(self.norm(x, batch_axes=1)), self.kernel, self.stride) + self.bias
        return x + h if self.residual else h


class VolumeEncoder(Module):
    """3-D CNN: even blocks downsample (2x2x2, stride 2), odd blocks are residual 1x1x1 mixers."""

    def __init__(self, rng, volume_shape, layers, channels, d_model):
        shape = list(volume_shape)
        c = 1
        self.blocks = []
        for i in range(layers):
            if i % 2 == 0:
                if min(shape) < 2:
                    raise ValueError(
                        f"spatial extents {tuple(volume_shape)} exhausted after {i} of {layers} blocks")
                self.blocks.append(ConvBlock(rng, c, channels, 2, 2))
                shape = [(s - 2) // 2 + 1 for s in shape]
                c = channels
            else:
                self.blocks.append(ConvBlock(rng, c, c, 1, 1))
        self.out_shape = tuple(shape) + (c,)
        self.proj = Linear(rng, int(np.prod(self.out_shape)), d_model)

    def __call__(self, x):
        # x: (B, F, W, H, D) -> (B, F, d_model)
        B, F = x.shape[:2]
        h = x.reshape((B * F,) + tuple(x.shape[2:]) + (1,))
        for block in self.blocks:
            h = block(h)
        h = h.reshape(B * F, -1)
        return self.proj(h).reshape(B, F, -1)


def fir_transform(x, window, fusion):
    """Concatenate each frame with its ``window - 1`` successors, then fuse back to ``d_model``.

    ``x`` is ``(..., k+1, d)``; the result has ``k* = k + 2 - window`` rows.
    """
    n = x.shape[-2]
    if window > n:
        raise ValueError(f"FIR window {window} exceeds {n} frames")
    k_star = n - window + 1
    if x.ndim == 2:
        parts = [x[j:j + k_star] for j in range(window)]
    else:
        parts = [x[:, j:j + k_star] for j in range(window)]
    return fusion(nk.concat(parts, axis=-1))


# -- networks ------------------------------------------------------------------------------

class MainNetwork(Module):
    def __init__(self, rng, cfg: ModelConfig):
        d = cfg.d_model
        if cfg.layout == "volume":
            self.fmri_encoder = VolumeEncoder(rng, cfg.volume_shape, cfg.cnn_layers, cfg.cnn_channels, d)
        else:
            self.fmri_encoder = SurfaceEncoder(rng, cfg.voxel_dim, d)
        self.fir = Linear(rng, d * cfg.fir_window, d)
        self.time_pos = uniform_init(rng, (cfg.k_star, d), d)
        self.encoder = [EncoderLayer(rng, d, cfg.heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.enc_layers)]
        self.dec_pos = uniform_init(rng, (cfg.max_len, d), d)
        self.decoder = [DecoderLayer(rng, d, cfg.heads, cfg.ffn_dim, predictive=cfg.side_network,
                                     p_drop=cfg.dropout)
                        for _ in range(cfg.dec_layers)]
        self.head = Linear(rng, d, cfg.vocab_size)


class SideNetwork(Module):
    def __init__(self, rng, cfg: ModelConfig):
        d = cfg.d_model
        self.roi_fusion = FeedForward(rng, cfg.roi_dim, cfg.roi_hidden, d)
        self.fir = Linear(rng, d * cfg.fir_window, d)
        self.time_pos = uniform_init(rng, (cfg.k_star, d), d)
        self.encoder = [EncoderLayer(rng, d, cfg.heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.side_enc_layers)]
        self.dec_pos = uniform_init(rng, (cfg.max_len, d), d)
        self.decoder = [DecoderLayer(rng, d, cfg.heads, cfg.ffn_dim, p_drop=cfg.dropout) for _ in range(cfg.side_dec_layers)]
        self.head = Linear(rng, d, cfg.vocab_size)


class PredFT(Module):
    """Main decoding network plus optional side network sharing the word embedding.

    All inputs are batched: fMRI ``(B, k+1, d_s)`` (or ``(B, k+1, W, H, D)``),
    ROIs ``(B, k+1, d_r)``, token ids ``(B, T)``.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.embed = uniform_init(rng, (cfg.vocab_size, cfg.d_model), cfg.d_model)
        self.main = MainNetwork(rng, cfg)
        self.side = SideNetwork(rng, cfg) if cfg.side_network else None

    # -- state ---------------------------------------------------------------------------
    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ValueError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    # -- encoders ------------------------------------------------------------------------
    def encode_fmri(self, fmri):
        x = self.main.fmri_encoder(_tensor(fmri))
        h = dropout(fir_transform(x, self.cfg.fir_window, self.main.fir) + self.main.time_pos, self.cfg.dropout)
        for layer in self.main.encoder:
            h = layer(h)
        return h

    def encode_rois(self, rois):
        if self.side is None:
            raise RuntimeError("side network disabled")
        r = self.side.roi_fusion(_tensor(rois))
        h = dropout(fir_transform(r, self.cfg.fir_window, self.side.fir) + self.side.time_pos, self.cfg.dropout)
        for layer in self.side.encoder:
            h = layer(h)
        return h

    # -- decoders ------------------------------------------------------------------------
    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise ValueError(f"token id outside vocabulary of size {self.cfg.vocab_size}")
        if tokens.shape[1] > self.cfg.max_len:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_len {self.cfg.max_len}")
        return tokens

    def decode_main(self, enc, pred, tokens, fragments):
        tokens = self._check_tokens(tokens)
        T = tokens.shape[1]
        x = dropout(nk.embedding(self.embed, tokens) + self.main.dec_pos[:T], self.cfg.dropout)
        self_mask = causal_mask(T)
        pc_mask = None
        if self.side is not None:
            if pred is None:
                raise ValueError("predictive representation required when the side network is enabled")
            pc_mask = batch_pc_mask(fragments, pred.shape[-2])[:, None]
        for layer in self.main.decoder:
            x = layer(x, enc, self_mask, pred if self.side is not None else None, pc_mask)
        return self.main.head(x)

    def decode_side(self, pred, tokens):
        tokens = self._check_tokens(tokens)
        T = tokens.shape[1]
        # shared embedding is updated only by the main network
        x = dropout(nk.embedding(self.embed.detach(), tokens) + self.side.dec_pos[:T], self.cfg.dropout)
        self_mask = causal_mask(T)
        for layer in self.side.decoder:
            x = layer(x, pred, self_mask)
        return self.side.head(x)

    def forward(self, batch):
        """Return ``(main_logits, side_logits or None)`` for a collated batch."""
        enc = self.encode_fmri(batch.fmri)
        pred = self.encode_rois(batch.rois) if self.side is not None else None
        main_logits = self.decode_main(enc, pred, batch.main_in, batch.fragments)
        side_logits = self.decode_side(pred, batch.side_in) if self.side is not None else None
        return main_logits, side_logits


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def joint_loss(main_logits, main_targets, side_logits, side_targets, lam, pad_id=PAD):
    """``total = L_main + lam * L_side``; each is next-token cross-entropy ignoring pads."""
    l_main = nk.cross_entropy(main_logits, main_targets, ignore_id=pad_id)
    if side_logits is None:
        return l_main, l_main, None
    l_side = nk.cross_entropy(side_logits, side_targets, ignore_id=pad_id)
    total = l_main + l_side * lam if lam != 0 else l_main + l_side * 0.0
    return total, l_main, l_side


# -- unbatched convenience wrappers ------------------------------------------------------------

def fmri_encode_2d(model: PredFT, frames):
    """Encode surface frames given as ``(d_s, k+1)``; returns ``(k+1, d_model)``."""
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames)
    return model.main.fmri_encoder(Tensor(frames.T[None]))[0]


def fmri_encode_3d(model: PredFT, frames):
    """Encode volumes given as ``(W, H, D, k+1)``; returns ``(k+1, d_model)``."""
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames)
    return model.main.fmri_encoder(Tensor(np.moveaxis(frames, -1, 0)[None]))[0]


def main_forward(model: PredFT, enc, pred, tokens, mask: PcMask):
    """Unbatched main decoder: ``enc``/``pred`` are ``(k*, d)``, tokens length ``k_t``."""
    enc = enc[None] if enc.ndim == 2 else enc
    if pred is not None and pred.ndim == 2:
        pred = pred[None]
    return model.decode_main(enc, pred, np.asarray(tokens)[None], mask.fragments[None])[0]


def side_forward(model: PredFT, rois, future_tokens):
    """Unbatched side network: ``rois`` is ``(k+1, d_r)``; returns ``(pred, side_logits)``."""
    rois = np.asarray(rois.data if isinstance(rois, Tensor) else rois)
    if rois.shape[-1] != model.cfg.roi_dim:
        raise ValueError(f"ROI width {rois.shape[-1]} != configured {model.cfg.roi_dim}")
    pred = model.encode_rois(rois[None])
    logits = model.decode_side(pred, np.asarray(future_tokens)[None])
    return pred[0], logits[0]


__all__ = [
    "BOS", "PcMask", "PredFT", "build_pc_mask", "batch_pc_mask", "fir_transform", "fmri_encode_2d",
    "fmri_encode_3d", "joint_loss", "main_forward", "side_forward",
]
