"""Categorical fields: per-position distributions handed to the range coder."""

from dataclasses import dataclass

import numpy as np

from ..kernels import PROB_TOTAL


def p_floor(V):
    return 1.0 / (V * 65536.0)


def apply_floor(probs):
    """Mix with the uniform floor so every entry is >= 1/(V*2^16) and rows still sum to 1."""
    V = probs.shape[-1]
    pf = p_floor(V)
    return probs * (1.0 - V * pf) + pf


@dataclass(frozen=True)
class CategoricalField:
    positions: np.ndarray  # raster indices, coding order
    probs: np.ndarray  # (n, V)

    @property
    def V(self):
        return self.probs.shape[-1]

    def check(self, atol=1e-9):
        """Raise ValueError unless every row is a floored distribution."""
        p = self.probs
        if p.shape[0] != len(self.positions):
            raise ValueError("field has a different number of rows and positions")
        if p.size == 0:
            return
        if not np.all(np.isfinite(p)):
            raise ValueError("field contains non-finite probabilities")
        if np.max(np.abs(p.sum(-1) - 1.0)) > atol:
            raise ValueError("field row does not sum to 1")
        if p.min() < p_floor(self.V) * (1 - 1e-12):
            raise ValueError("field probability below the floor")


def uniform_field(positions, V):
    if V < 2:
        raise ValueError("V must be >= 2")
    positions = np.asarray(positions, dtype=np.int64)
    return CategoricalField(positions, np.full((len(positions), V), 1.0 / V))


def quantize_probs(probs):
    """Cumulative 16-bit frequency tables, shape ``(..., V+1)``.

    Every symbol gets at least one count; the counts left over after flooring
    go to the most probable symbol (lowest index on ties). This mapping is part
    of the bitstream contract.
    """
    probs = np.asarray(probs, dtype=np.float64)
    V = probs.shape[-1]
    if V > PROB_TOTAL // 2:
        raise ValueError(f"V={V} too large for {PROB_TOTAL}-count frequency tables")
    f = 1 + np.floor(probs * (PROB_TOTAL - V)).astype(np.int64)
    return _finish_freqs(f, probs)


def _finish_freqs(f, score):
    rem = PROB_TOTAL - f.sum(-1)
    top = np.argmax(score, axis=-1)
    np.put_along_axis(f, top[..., None], np.take_along_axis(f, top[..., None], -1) + rem[..., None], -1)
    if np.any(f < 1):
        raise ValueError("frequency quantization produced an empty symbol")
    cum = np.zeros(f.shape[:-1] + (f.shape[-1] + 1,), dtype=np.int64)
    np.cumsum(f, axis=-1, out=cum[..., 1:])
    return cum


def uniform_cdf(n, V):
    """Quantized uniform tables computed in integers."""
    f = np.full((n, V), 1 + (PROB_TOTAL - V) // V, dtype=np.int64)
    return _finish_freqs(f, np.zeros((n, V)))


def kt_cdf(counts):
    """Quantized KT tables from integer counts ``(..., V)``, exact integer arithmetic."""
    counts = np.asarray(counts, dtype=np.int64)
    V = counts.shape[-1]
    n = counts.sum(-1, keepdims=True)
    f = 1 + ((2 * counts + 1) * (PROB_TOTAL - V)) // (2 * n + V)
    return _finish_freqs(f, counts)


def cdf_bits(cum, syms):
    """Code length in bits of ``syms`` under quantized tables ``cum``."""
    syms = np.asarray(syms, dtype=np.int64)
    f = np.take_along_axis(cum, syms[..., None] + 1, -1) - np.take_along_axis(cum, syms[..., None], -1)
    return float(np.sum(np.log2(PROB_TOTAL) - np.log2(f[..., 0].astype(np.float64))))
