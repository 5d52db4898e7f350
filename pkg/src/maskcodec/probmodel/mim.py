"""Masked image model: bidirectional transformer over a token grid."""

import numpy as np

from . import checkpoint
from .base import TransformerEntropyModel, as_token_batch
from .fields import CategoricalField, apply_floor
from .nn import Transformer, grid_sincos, log_softmax, masked_cross_entropy


class MimModel(TransformerEntropyModel):
    """Predicts every masked position of an h x w grid from the revealed ones.

    Masked positions are fed a learned mask token (id ``V``).
    """

    ckpt_kind = checkpoint.KIND_MIM
    ckpt_kind_name = "mim"
    kind = "mim"

    def __init__(self, V, h, w, d_model=64, n_layers=2, n_heads=4, seed=0, dtype="float64"):
        hyper = dict(V=V, h=h, w=w, d_model=d_model, n_layers=n_layers, n_heads=n_heads, seed=seed,
                     dtype=dtype)
        net = Transformer(V + 1, h * w, V, d_model, n_layers, n_heads, seed=seed,
                          dtype=np.dtype(dtype).type, pos_init=grid_sincos(h, w, d_model))
        super().__init__(hyper, net)
        self._pos = np.arange(h * w)

    def logits(self, tokens, revealed, keep=False):
        tokens = np.atleast_2d(tokens)
        ids = np.where(revealed, tokens, self.V)
        return self.net.forward(ids, self._pos, keep=keep)

    def probs(self, tokens, revealed):
        """Floored probabilities ``(B, h*w, V)`` for every position."""
        z = self.logits(tokens, revealed).astype(np.float64)
        return apply_floor(np.exp(log_softmax(z)))

    def group_probs(self, tokens, schedule, k):
        """Rows for group ``k`` given groups ``0..k-1`` of ``tokens`` ``(B, h*w)``."""
        revealed = schedule.revealed_before(k)
        z = self.logits(tokens, revealed)[:, schedule.groups[k]].astype(np.float64)
        return apply_floor(np.exp(log_softmax(z)))

    def loss_and_grad(self, tokens, rng):
        B, N = tokens.shape
        revealed = np.ones((B, N), dtype=bool)
        for b in range(B):
            r = rng.uniform(self._mask_range[0], self._mask_range[1])
            m = min(N, max(1, int(round(r * N))))
            revealed[b, rng.permutation(N)[:m]] = False
        logits = self.logits(tokens, revealed, keep=True)
        loss, dlogits = masked_cross_entropy(logits, tokens, ~revealed)
        return loss, self.net.backward(dlogits.astype(logits.dtype))

    _mask_range = (0.05, 0.95)

    def train_step(self, batch, cfg):
        self._mask_range = (cfg.mask_min, cfg.mask_max)
        return super().train_step(batch, cfg)


def mim_forward(model: MimModel, grid, revealed) -> CategoricalField:
    """Field over the masked positions of ``grid`` (raster order)."""
    revealed = np.asarray(revealed, dtype=bool).reshape(-1)
    if revealed.size != grid.h * grid.w:
        raise ValueError("revealed mask shape does not match the grid")
    masked = np.flatnonzero(~revealed)
    if masked.size == 0:
        return CategoricalField(masked, np.zeros((0, model.V)))
    p = model.probs(as_token_batch([grid]), revealed)[0, masked]
    return CategoricalField(masked, p)


def mim_train_step(model: MimModel, batch, cfg):
    return model.train_step(batch, cfg)
