"""Shared plumbing for the transformer entropy models."""

import logging

import numpy as np

from . import checkpoint
from .optim import Adam, TrainConfig

log = logging.getLogger(__name__)


def as_token_batch(grids):
    """Stack TokenGrids (or arrays) into an int64 ``(B, h*w)`` array."""
    rows = [np.asarray(g.indices if hasattr(g, "indices") else g, dtype=np.int64).ravel() for g in grids]
    return np.stack(rows)


class TransformerEntropyModel:
    """Base for MIM and VAR: checkpointing, hashing and the Adam training loop."""

    ckpt_kind = None

    def __init__(self, hyper, net):
        self.hyper = hyper
        self.net = net
        self._opt = None
        self._rng = None

    @property
    def V(self):
        return self.hyper["V"]

    @property
    def h(self):
        return self.hyper["h"]

    @property
    def w(self):
        return self.hyper["w"]

    @property
    def params(self):
        return self.net.params

    # -- checkpoint -------------------------------------------------------------

    def to_bytes(self):
        return checkpoint.dump(self.ckpt_kind, self.hyper, self.params)

    @classmethod
    def from_bytes(cls, buf):
        kind, hyper, flat = checkpoint.load(buf)
        if kind != cls.ckpt_kind:
            raise ValueError(f"checkpoint kind {kind} is not a {cls.__name__}")
        model = cls(**hyper)
        shapes = {k: v.shape for k, v in model.params.items()}
        for k, v in checkpoint.unflatten(flat, shapes).items():
            model.params[k] = v.astype(model.net.dtype)
        return model

    @property
    def checkpoint_hash(self):
        return checkpoint.hash_bytes(self.to_bytes())

    def round_to_f32(self):
        """Snap parameters to float32 so the in-memory model equals its checkpoint."""
        checkpoint.round_f32(self.params)
        return self

    # -- training ------------------------------------------------------------------

    def loss_and_grad(self, tokens, rng):
        raise NotImplementedError

    def train_step(self, batch, cfg: TrainConfig):
        """One Adam step on ``batch``; returns the mean cross-entropy in nats."""
        if len(batch) == 0:
            raise ValueError("batch must be nonempty")
        if self._opt is None:
            self._opt = Adam(self.params, cfg)
            self._rng = np.random.default_rng(cfg.seed)
        tokens = as_token_batch(batch)
        loss, grads = self.loss_and_grad(tokens, self._rng)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss became {loss} at step {self._opt.t + 1}")
        self._opt.step(self.params, grads)
        return loss

    def fit(self, grids, cfg: TrainConfig, log_every=0, curve=None):
        """Train on a corpus with batches drawn by ``cfg.seed``; returns the loss curve."""
        data = as_token_batch(grids)
        rng = np.random.default_rng(cfg.seed + 1)
        losses = []
        for step in range(cfg.steps):
            idx = rng.integers(0, len(data), size=min(cfg.batch_size, len(data)))
            loss = self.train_step(data[idx], cfg)
            losses.append(loss)
            if log_every and (step + 1) % log_every == 0:
                recent = float(np.mean(losses[-log_every:]))
                log.info("%s step %d loss %.4f", self.ckpt_kind_name, step + 1, recent)
                if curve is not None:
                    curve.append((step + 1, recent))
        self.round_to_f32()
        return losses
