"""Scale-causal (VAR-style) model over schedule groups.

The sequence holds one block per group. Block k covers every position of
groups ``0..k``: positions of earlier groups carry their own token, the
positions of group k carry the token of their nearest earlier-revealed
position (the upsampled coarser map; block 0 carries a start token). A query
in block k attends to blocks ``<= k`` only and the loss falls on the group-k
("border") positions of block k, for k >= 1.
"""

import numpy as np

from . import checkpoint
from .base import TransformerEntropyModel
from .fields import CategoricalField, apply_floor
from .nn import Transformer, grid_sincos, log_softmax, masked_cross_entropy


def nearest_revealed(schedule, k):
    """Source raster index for every position of group ``k`` (k >= 1).

    Nearest position of groups ``0..k-1`` in squared Euclidean distance, ties
    to the smallest raster index.
    """
    w = schedule.w
    prev = np.sort(np.concatenate(schedule.groups[:k]))
    cur = schedule.groups[k]
    pi, pj = np.divmod(prev, w)
    ci, cj = np.divmod(cur, w)
    d = (ci[:, None] - pi[None]) ** 2 + (cj[:, None] - pj[None]) ** 2
    return prev[np.argmin(d, axis=1)]


class _Layout:
    def __init__(self, schedule):
        pos, blk, src, tgt, ends = [], [], [], [], []
        for k, g in enumerate(schedule.groups):
            before = np.concatenate(schedule.groups[:k]) if k else np.zeros(0, np.int64)
            pos += [before, g]
            src += [before, nearest_revealed(schedule, k) if k else np.full(len(g), -1)]
            blk.append(np.full(len(before) + len(g), k))
            tgt += [np.zeros(len(before), bool), np.full(len(g), k > 0)]
            ends.append(sum(len(x) for x in pos))
        self.pos = np.concatenate(pos).astype(np.int64)
        self.src = np.concatenate(src).astype(np.int64)
        self.blk = np.concatenate(blk).astype(np.int64)
        self.tgt = np.concatenate(tgt)
        self.ends = ends
        self.sizes = [len(g) for g in schedule.groups]


class VarModel(TransformerEntropyModel):
    ckpt_kind = checkpoint.KIND_VAR
    ckpt_kind_name = "var"
    kind = "var"

    def __init__(self, V, h, w, d_model=64, n_layers=2, n_heads=4, max_groups=16, seed=0,
                 schedule_spec=None, dtype="float64"):
        hyper = dict(V=V, h=h, w=w, d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                     max_groups=max_groups, seed=seed, schedule_spec=schedule_spec, dtype=dtype)
        net = Transformer(V + 1, h * w, V, d_model, n_layers, n_heads, n_blocks=max_groups,
                          seed=seed, dtype=np.dtype(dtype).type, pos_init=grid_sincos(h, w, d_model))
        super().__init__(hyper, net)
        self._layouts = {}
        self.schedule = None
        if schedule_spec:
            from ..schedules import parse_schedule

            self.schedule = parse_schedule(schedule_spec, h, w)

    def layout(self, schedule):
        if schedule.K > self.hyper["max_groups"]:
            raise ValueError(f"schedule has {schedule.K} groups, model supports {self.hyper['max_groups']}")
        key = (schedule.h, schedule.w, schedule.kind, schedule.params)
        if key not in self._layouts:
            self._layouts[key] = _Layout(schedule)
        return self._layouts[key]

    def _run(self, tokens, lay, L, keep=False):
        src = lay.src[:L]
        ids = np.where(src >= 0, tokens[:, np.maximum(src, 0)], self.V)
        blk = lay.blk[:L]
        mask = blk[:, None] >= blk[None, :]
        return self.net.forward(ids, lay.pos[:L], blk, mask, keep=keep)

    def group_probs(self, tokens, schedule, k):
        """Rows for group ``k`` (k >= 1); only blocks ``0..k`` are evaluated."""
        if k < 1:
            raise ValueError("group 0 is coded under the uniform prior, not the model")
        lay = self.layout(schedule)
        L = lay.ends[k]
        z = self._run(np.atleast_2d(tokens), lay, L)[:, L - lay.sizes[k]:L].astype(np.float64)
        return apply_floor(np.exp(log_softmax(z)))

    def loss_and_grad(self, tokens, rng):
        lay = self.layout(self.schedule)
        L = lay.ends[-1]
        logits = self._run(tokens, lay, L, keep=True)
        targets = tokens[:, lay.pos]
        weight = np.broadcast_to(lay.tgt, targets.shape)
        loss, dlogits = masked_cross_entropy(logits, targets, weight)
        return loss, self.net.backward(dlogits.astype(logits.dtype))


def var_forward(model: VarModel, grid, schedule, k) -> CategoricalField:
    """Field over group ``k`` of ``schedule`` conditioned on groups ``0..k-1`` of ``grid``."""
    tokens = np.asarray(grid.indices).reshape(1, -1)
    return CategoricalField(schedule.groups[k], model.group_probs(tokens, schedule, k)[0])
