"""Joint training: Adam with cosine learning-rate decay, checkpoints, loss evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numkit as nk
from ..data.windows import collate
from .config import ModelConfig
from .layers import dropout_enabled
from .network import PredFT, joint_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def cosine_lr(step, total_steps, lr_init, lr_final):
    """Cosine decay from ``lr_init`` at step 0 to ``lr_final`` at step ``total_steps - 1``."""
    if total_steps <= 1:
        return lr_init
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * frac))


@dataclass
class Checkpoint:
    """Model weights plus everything needed to resume training deterministically."""

    model: PredFT
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    total_steps: int = 1
    rng_state: dict = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, cfg: ModelConfig, total_steps=1):
        model = PredFT(cfg)
        rng = np.random.default_rng(cfg.seed + 1)
        return cls(model, total_steps=total_steps, rng_state=rng.bit_generator.state)

    @property
    def cfg(self):
        return self.model.cfg

    def rng(self):
        g = np.random.default_rng()
        g.bit_generator.state = self.rng_state
        return g

    # -- persistence -------------------------------------------------------------------
    def save(self, path):
        """Write ``tensors/`` + ``config.json`` + ``optimizer.json`` atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
        try:
            tensors = {f"param/{k}": v for k, v in self.model.state_dict().items()}
            tensors.update({f"adam_m/{k}": v for k, v in self.m.items()})
            tensors.update({f"adam_v/{k}": v for k, v in self.v.items()})
            nk.save_tensors(tmp / "tensors", tensors)
            (tmp / "config.json").write_text(self.cfg.to_json())
            opt = {"step": self.step, "epoch": self.epoch, "total_steps": self.total_steps,
                   "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                   "rng_state": self.rng_state}
            (tmp / "optimizer.json").write_text(json.dumps(opt, indent=2, sort_keys=True) + "\n")
            if path.exists():
                shutil.rmtree(path)
            os.replace(tmp, path)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    @classmethod
    def load(cls, path):
        path = Path(path)
        cfg = ModelConfig.from_dict(json.loads((path / "config.json").read_text()))
        opt = json.loads((path / "optimizer.json").read_text())
        tensors = nk.load_tensors(path / "tensors")
        model = PredFT(cfg)
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam_m/")}
        v = {k[7:]: v for k, v in tensors.items() if k.startswith("adam_v/")}
        return cls(model, m, v, opt["step"], opt["epoch"], opt["total_steps"], opt["rng_state"],
                   opt["beta1"], opt["beta2"], opt["eps"])


def _clip(grads, max_norm):
    if not max_norm:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads


def train_step(batch, state: Checkpoint):
    """One forward/backward/Adam update; mutates and returns ``state`` plus a loss record."""
    model, cfg = state.model, state.cfg
    params = dict(model.named_parameters())
    for p in params.values():
        p.grad = None
    rng = state.rng()
    try:
        with dropout_enabled(rng):
            main_logits, side_logits = model.forward(batch)
        total, l_main, l_side = joint_loss(main_logits, batch.main_tgt, side_logits, batch.side_tgt, cfg.lam)
        nk.backward(total)
    except nk.NonFiniteError as exc:
        raise TrainingError(f"non-finite value at step {state.step} (epoch {state.epoch}): {exc}") from exc
    state.rng_state = rng.bit_generator.state
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    grads = _clip(grads, cfg.clip_norm)
    lr = cosine_lr(state.step, state.total_steps, cfg.lr_init, cfg.lr_final)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data = p.data - (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    record = {"step": state.step, "lr": lr, "l_main": l_main.item(),
              "l_side": None if l_side is None else l_side.item(), "total": total.item()}
    state.step += 1
    return state, record


def evaluate_loss(model: PredFT, samples, batch_size=32):
    """Token-weighted mean main/side cross-entropy over ``samples`` (no graph)."""
    sums = np.zeros(2)
    counts = np.zeros(2)
    with nk.no_grad():
        for i in range(0, len(samples), batch_size):
            batch = collate(samples[i:i + batch_size])
            main_logits, side_logits = model.forward(batch)
            _, l_main, l_side = joint_loss(main_logits, batch.main_tgt, side_logits, batch.side_tgt, 0.0)
            n_main = int((batch.main_tgt != 0).sum())
            sums[0] += l_main.item() * n_main
            counts[0] += n_main
            if l_side is not None:
                n_side = int((batch.side_tgt != 0).sum())
                sums[1] += l_side.item() * n_side
                counts[1] += n_side
    main = sums[0] / max(counts[0], 1)
    side = sums[1] / counts[1] if counts[1] else None
    return main, side


def fit(cfg: ModelConfig, train, valid=None, log_fn=None, state=None):
    """Train for ``cfg.epochs`` epochs; returns ``(checkpoint, history)``.

    ``history`` holds one dict per epoch with validation losses when ``valid`` is given.
    """
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    if state is None:
        state = Checkpoint.fresh(cfg, total_steps=steps_per_epoch * cfg.epochs)
    history = []
    while state.epoch < cfg.epochs:
        rng = state.rng()
        order = rng.permutation(len(train))
        state.rng_state = rng.bit_generator.state
        for i in range(0, len(order), cfg.batch_size):
            batch = collate([train[j] for j in order[i:i + cfg.batch_size]])
            state, record = train_step(batch, state)
            if log_fn is not None:
                log_fn(record)
        state.epoch += 1
        entry = {"epoch": state.epoch}
        if valid:
            entry["valid_main"], entry["valid_side"] = evaluate_loss(state.model, valid)
        history.append(entry)
        log.info("epoch %d %s", state.epoch, entry)
    return state, history
