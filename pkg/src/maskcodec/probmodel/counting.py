"""Adaptive Krichevsky-Trofimov counting model.

Counts ``n[ctx, v]`` give p(v | ctx) = (n_v + 1/2) / (n + V/2). The context of
a position is computed only from positions that are already coded, so the
decoder can rebuild it symbol by symbol. Counts may be pre-fitted on a
training corpus and keep adapting while a stream is coded.
"""

from __future__ import annotations

import numpy as np

from . import checkpoint
from .fields import kt_cdf

CONTEXTS = ("order0", "left", "up_left", "nearest", "nearest_dist")

# nearest-coded search radius (squared) for the "nearest*" contexts
_RADIUS2 = 8


class CausalityError(ValueError):
    pass


def _neighbor_offsets():
    offs = []
    for di in range(-2, 3):
        for dj in range(-2, 3):
            d2 = di * di + dj * dj
            if 0 < d2 <= _RADIUS2:
                offs.append((d2, di, dj))
    # nearest first, raster order among equals
    offs.sort()
    return offs


_OFFSETS = _neighbor_offsets()
_DIST_BUCKET = {1: 0, 2: 1, 4: 2, 5: 3, 8: 3}


class CountingModel:
    kind = "counting"

    def __init__(self, V, context="order0"):
        if V < 2:
            raise ValueError("V must be >= 2")
        if context not in CONTEXTS:
            raise ValueError(f"unknown context {context!r}; choose from {CONTEXTS}")
        self.V = V
        self.context = context
        self.counts = np.zeros((self.n_contexts, V), dtype=np.int64)

    @property
    def n_contexts(self):
        V = self.V
        return {"order0": 1, "left": V, "up_left": V * V, "nearest": V + 1, "nearest_dist": 4 * V + 1}[self.context]

    # -- the two primitive operations ---------------------------------------

    def predict(self, ctx, counts=None):
        c = (self.counts if counts is None else counts)[ctx]
        return (c + 0.5) / (c.sum() + self.V / 2.0)

    def update(self, ctx, symbol, counts=None):
        (self.counts if counts is None else counts)[ctx, symbol] += 1

    # -- contexts ------------------------------------------------------------

    def context_of(self, tokens, coded, p, h, w):
        """Context id of raster position ``p`` given flat ``tokens`` and ``coded`` mask."""
        i, j = divmod(p, w)
        kind = self.context
        if kind == "order0":
            return 0
        if kind in ("left", "up_left"):
            need = [(i, j - 1)] if kind == "left" else [(i - 1, j), (i, j - 1)]
            ctx = 0
            for a, b in need:
                if a < 0 or b < 0:
                    v = 0  # outside the grid reads as symbol 0
                else:
                    q = a * w + b
                    if not coded[q]:
                        raise CausalityError(f"context of ({i},{j}) uses uncoded position ({a},{b})")
                    v = int(tokens[q])
                ctx = ctx * self.V + v
            return ctx
        for d2, di, dj in _OFFSETS:
            a, b = i + di, j + dj
            if 0 <= a < h and 0 <= b < w and coded[a * w + b]:
                v = int(tokens[a * w + b])
                if kind == "nearest":
                    return v
                return _DIST_BUCKET[d2] * self.V + v
        return self.n_contexts - 1

    # -- corpus fitting ----------------------------------------------------------

    def fit(self, grids, schedule):
        """Accumulate counts by replaying the coding order of ``schedule`` on each grid."""
        for g in grids:
            sess = self.session(schedule)
            flat = np.asarray(g.indices if hasattr(g, "indices") else g).ravel()
            for group in schedule.groups:
                for p in group:
                    sess.update(int(p), int(flat[p]))
            self.counts = sess.counts
        return self

    def session(self, schedule):
        return CountingSession(self, schedule)

    # -- checkpoint ---------------------------------------------------------------

    @property
    def checkpoint_hash(self):
        if not self.counts.any():
            return 0
        return checkpoint.hash_bytes(self.to_bytes())

    def to_bytes(self):
        hyper = {"V": self.V, "context": self.context}
        return checkpoint.dump(checkpoint.KIND_COUNTING, hyper, {"counts": self.counts.astype(np.float64)})

    @classmethod
    def from_bytes(cls, buf):
        kind, hyper, flat = checkpoint.load(buf)
        if kind != checkpoint.KIND_COUNTING:
            raise ValueError("checkpoint is not a counting model")
        m = cls(hyper["V"], hyper["context"])
        m.counts = np.rint(flat).astype(np.int64).reshape(m.counts.shape)
        return m


class CountingSession:
    """Per-stream adaptive state; encoder and decoder run identical sessions."""

    def __init__(self, model: CountingModel, schedule):
        self.model = model
        self.h, self.w = schedule.h, schedule.w
        self.counts = model.counts.copy()
        self.tokens = np.zeros(self.h * self.w, dtype=np.int64)
        self.coded = np.zeros(self.h * self.w, dtype=bool)

    def cdf(self, p):
        ctx = self.model.context_of(self.tokens, self.coded, p, self.h, self.w)
        return kt_cdf(self.counts[ctx])

    def probs(self, p):
        ctx = self.model.context_of(self.tokens, self.coded, p, self.h, self.w)
        return self.model.predict(ctx, self.counts)

    def update(self, p, symbol):
        ctx = self.model.context_of(self.tokens, self.coded, p, self.h, self.w)
        self.counts[ctx, symbol] += 1
        self.tokens[p] = symbol
        self.coded[p] = True
