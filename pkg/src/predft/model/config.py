"""Model and training hyper-parameters."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture and schedule for the main and side networks.

    Full-scale reference values are L=18 CNN blocks, P=4 / Q=12 main
    encoder / decoder layers and M=N=6 side layers; the defaults here are a
    desk-sized configuration trainable on one CPU core.
    """

    d_model: int = 64
    heads: int = 4
    ffn_dim: int = 128
    cnn_layers: int = 4
    cnn_channels: int = 8
    enc_layers: int = 4
    dec_layers: int = 4
    side_enc_layers: int = 2
    side_dec_layers: int = 2
    fir_window: int = 4
    lam: float = 1.0
    pred_distance: int = 4
    pred_length: int = 2
    vocab_size: int = 64
    frames: int = 10
    voxel_dim: int = 500
    roi_dim: int = 50
    roi_hidden: int = 64
    layout: str = "surface"
    volume_shape: tuple = (16, 16, 8)
    max_len: int = 64
    max_gen_len: int = 40
    tokens_per_frame: float = 3.0
    beam: int = 1
    lr_init: float = 5e-4
    lr_final: float = 1e-5
    epochs: int = 40
    batch_size: int = 16
    clip_norm: float = 1.0
    dropout: float = 0.1
    seed: int = 0
    side_network: bool = True

    def __post_init__(self):
        self.volume_shape = tuple(self.volume_shape)
        self.validate()

    @property
    def k_star(self):
        return self.frames - self.fir_window + 1

    def validate(self):
        positive = [
            "d_model", "heads", "ffn_dim", "cnn_layers", "cnn_channels", "enc_layers", "dec_layers",
            "side_enc_layers", "side_dec_layers", "fir_window", "pred_length", "vocab_size",
            "frames", "voxel_dim", "roi_dim", "roi_hidden", "max_len", "beam", "epochs", "batch_size",
        ]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.pred_distance < 0:
            raise ConfigError("pred_distance must be non-negative")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.fir_window > self.frames:
            raise ConfigError(f"fir_window={self.fir_window} exceeds frames={self.frames}")
        if self.max_gen_len < 0:
            raise ConfigError("max_gen_len must be non-negative")
        if self.tokens_per_frame <= 0:
            raise ConfigError("tokens_per_frame must be positive")
        if self.layout not in ("surface", "volume"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr_init <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["volume_shape"] = list(self.volume_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
