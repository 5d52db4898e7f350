"""Multi-scale token maps.

Two paths live here. The implicit one (:func:`extract_scales`) reads coarse
scales straight out of a single full-resolution token grid, using the same
nested index sets as the implicit-VAR schedule. The explicit residual path
(:func:`residual_quantize`) quantizes a latent scale by scale, each scale
coding what the coarser ones missed. The residual path is experimental: it
warns on use and aborts on the first non-finite residual.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .schedules import implicit_var_schedule
from .tokens import Codebook, DimensionError, LatentGrid, TokenGrid, vq_dequantize, vq_quantize

STACK_KIND = 4
STACK_MAGIC = b"PCV2"
STACK_VERSION = 1


class ExperimentalWarning(UserWarning):
    pass


def extract_scales(grid: TokenGrid, scales):
    """Border sets of the nested scales: ``[(positions, tokens), ...]``.

    ``positions`` are raster indices newly revealed at that scale. Together
    they are a permutation of all ``h * w`` positions.
    """
    sched = implicit_var_schedule(grid.h, grid.w, scales)
    flat = grid.indices.ravel()
    return [(g.copy(), flat[g].copy()) for g in sched.groups]


# -- resampling ------------------------------------------------------------------


def _bins(n, s):
    t = np.arange(s)
    return (t * n) // s, -((-(t + 1) * n) // s)


def downsample(x, s):
    """Area average of ``(n, n, c)`` down to ``(s, s, c)`` (adaptive pooling bins)."""
    n = x.shape[0]
    lo, hi = _bins(n, s)
    rows = np.stack([x[a:b].mean(0) for a, b in zip(lo, hi)])
    return np.stack([rows[:, a:b].mean(1) for a, b in zip(lo, hi)], axis=1)


def upsample(x, n):
    """Nearest-neighbor from ``(s, s, c)`` up to ``(n, n, c)``."""
    s = x.shape[0]
    src = (np.arange(n) * s) // n
    return x[np.ix_(src, src)]


# -- explicit residual stack -----------------------------------------------------


@dataclass(frozen=True)
class ScaleStack:
    scales: tuple
    maps: tuple  # TokenGrid per scale
    V: int

    def __post_init__(self):
        if len(self.scales) != len(self.maps) or not self.scales:
            raise DimensionError("need one token map per scale")
        for s, m in zip(self.scales, self.maps):
            if (m.h, m.w) != (s, s):
                raise DimensionError(f"map for scale {s} has shape {m.h}x{m.w}")
            if m.V != self.V:
                raise ValueError(f"map V={m.V} differs from stack V={self.V}")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise ValueError(f"scales must be strictly increasing, got {self.scales}")

    def to_bytes(self) -> bytes:
        out = STACK_MAGIC + struct.pack("<BBIB", STACK_VERSION, STACK_KIND, self.V, len(self.scales))
        out += b"".join(struct.pack("<H", s) for s in self.scales)
        for m in self.maps:
            out += m.indices.astype("<u4").tobytes()
        return out

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ScaleStack":
        if buf[:4] != STACK_MAGIC:
            raise ValueError("not a scale-stack container (bad magic)")
        try:
            version, kind, V, K = struct.unpack_from("<BBIB", buf, 4)
            off = 11
            scales = struct.unpack_from(f"<{K}H", buf, off)
        except struct.error as exc:
            raise ValueError(f"scale-stack header is truncated: {exc}") from None
        if version != STACK_VERSION or kind != STACK_KIND:
            raise ValueError(f"unsupported container version {version} / kind {kind}")
        off += 2 * K
        need = off + 4 * sum(s * s for s in scales)
        if len(buf) < need:
            raise ValueError(f"scale-stack body is truncated: {len(buf)} of {need} bytes")
        maps = []
        for s in scales:
            a = np.frombuffer(buf, dtype="<u4", count=s * s, offset=off)
            off += 4 * s * s
            maps.append(TokenGrid(a.astype(np.int64).reshape(s, s), V))
        if off != len(buf):
            raise ValueError(f"{len(buf) - off} trailing bytes after the scale stack")
        return cls(tuple(scales), tuple(maps), V)


def _check_finite(a, k, s, what):
    if not np.all(np.isfinite(a)):
        bad = int(np.count_nonzero(~np.isfinite(a)))
        raise FloatingPointError(f"{what} became non-finite at scale index {k} (s={s}): {bad} entries")


def residual_quantize(latent: LatentGrid, cb: Codebook, scales) -> ScaleStack:
    """Quantize the residual left by coarser scales at each scale in turn."""
    warnings.warn("explicit residual quantization is experimental", ExperimentalWarning, stacklevel=2)
    if latent.h != latent.w:
        raise DimensionError(f"residual quantization needs a square latent, got {latent.h}x{latent.w}")
    if latent.c != cb.c:
        raise DimensionError(f"latent has {latent.c} channels, codebook has {cb.c}")
    n = latent.h
    scales = tuple(int(s) for s in scales)
    if not scales or any(s < 1 or s > n for s in scales):
        raise DimensionError(f"scales must lie in [1, {n}], got {scales}")
    f = latent.data.copy()
    maps = []
    for k, s in enumerate(scales):
        with np.errstate(over="ignore", invalid="ignore"):
            down = downsample(f, s)
        _check_finite(down, k, s, "pooled residual")
        r = vq_quantize(LatentGrid(down), cb)
        maps.append(r)
        f = f - upsample(cb.vectors[r.indices], n)
        _check_finite(f, k, s, "residual")
    return ScaleStack(scales, tuple(maps), cb.V)


def residual_dequantize(stack: ScaleStack, cb: Codebook, size=None) -> LatentGrid:
    """Sum of the upsampled codewords of every scale, at ``size`` (default: the finest scale)."""
    if stack.V != cb.V:
        raise DimensionError(f"stack has V={stack.V}, codebook has V={cb.V}")
    n = stack.scales[-1] if size is None else int(size)
    if n < stack.scales[-1]:
        raise DimensionError(f"output size {n} is below the finest scale {stack.scales[-1]}")
    out = np.zeros((n, n, cb.c))
    for m in stack.maps:
        out += upsample(vq_dequantize(m, cb).data, n)
    return LatentGrid(out)
