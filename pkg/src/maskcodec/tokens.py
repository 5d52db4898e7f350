"""Latent grids, codebooks and vector quantization."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import nearest_codeword

CODEBOOK_MAGIC = b"PCVB"
CODEBOOK_VERSION = 1


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class LatentGrid:
    data: np.ndarray  # (h, w, c) float64

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"latent must be h x w x c with h, w >= 1, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def h(self):
        return self.data.shape[0]

    @property
    def w(self):
        return self.data.shape[1]

    @property
    def c(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class Codebook:
    """V codewords of dimension c.

    Vectors are rounded to float32 on construction so the in-memory codebook
    and its serialized form quantize identically.
    """

    vectors: np.ndarray  # (V, c)
    id: int = field(init=False)

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[0] < 2:
            raise DimensionError(f"codebook needs shape (V >= 2, c), got {vec.shape}")
        vec = vec.astype("<f4").astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise ValueError("codebook contains non-finite values")
        if np.unique(vec, axis=0).shape[0] != vec.shape[0]:
            raise ValueError("codebook rows must be pairwise distinct")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "id", zlib.crc32(vec.astype("<f4").tobytes()))

    @property
    def V(self):
        return self.vectors.shape[0]

    @property
    def c(self):
        return self.vectors.shape[1]

    def to_bytes(self) -> bytes:
        head = CODEBOOK_MAGIC + struct.pack("<BII", CODEBOOK_VERSION, self.V, self.c)
        return head + self.vectors.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Codebook":
        if buf[:4] != CODEBOOK_MAGIC:
            raise ValueError("not a codebook file (bad magic)")
        version, V, c = struct.unpack_from("<BII", buf, 4)
        if version != CODEBOOK_VERSION:
            raise ValueError(f"unsupported codebook version {version}")
        body = buf[13:]
        if len(body) != 4 * V * c:
            raise ValueError(f"codebook body is {len(body)} bytes, expected {4 * V * c}")
        return cls(np.frombuffer(body, dtype="<f4").reshape(V, c))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class TokenGrid:
    indices: np.ndarray  # (h, w) int64
    V: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2 or idx.shape[0] < 1 or idx.shape[1] < 1:
            raise DimensionError(f"token grid must be 2-D and nonempty, got shape {idx.shape}")
        if self.V < 2:
            raise ValueError(f"V must be >= 2, got {self.V}")
        if not np.issubdtype(idx.dtype, np.integer):
            raise TypeError("token indices must be integers")
        idx = idx.astype(np.int64)
        if idx.min() < 0 or idx.max() >= self.V:
            raise ValueError(f"token indices must lie in [0, {self.V})")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def h(self):
        return self.indices.shape[0]

    @property
    def w(self):
        return self.indices.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return self.V == other.V and np.array_equal(self.indices, other.indices)

    def to_text(self) -> str:
        lines = [f"{self.h} {self.w} {self.V}"]
        lines += [" ".join(str(int(v)) for v in row) for row in self.indices]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TokenGrid":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 3:
            raise ValueError("token file must start with a line 'h w V'")
        h, w, V = (int(v) for v in rows[0])
        body = rows[1:]
        if len(body) != h or any(len(r) != w for r in body):
            raise ValueError(f"token file body does not match declared {h}x{w}")
        return cls(np.array([[int(v) for v in r] for r in body], dtype=np.int64), V)


def vq_quantize(latent: LatentGrid, cb: Codebook) -> TokenGrid:
    """Map every latent vector to its nearest codeword (smallest index on ties)."""
    if latent.c != cb.c:
        raise DimensionError(f"latent has {latent.c} channels, codebook has {cb.c}")
    if not np.all(np.isfinite(latent.data)):
        raise ValueError("latent contains non-finite values")
    idx, _ = nearest_codeword(latent.data.reshape(-1, latent.c), cb.vectors)
    return TokenGrid(idx.reshape(latent.h, latent.w), cb.V)


def vq_dequantize(tokens: TokenGrid, cb: Codebook) -> LatentGrid:
    if tokens.V != cb.V:
        raise DimensionError(f"token grid has V={tokens.V}, codebook has V={cb.V}")
    return LatentGrid(cb.vectors[tokens.indices])


def _kmeans_pp(x, V, rng):
    n = x.shape[0]
    centers = np.empty((V, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    _, d2 = nearest_codeword(x, centers[:1])
    for k in range(1, V):
        total = d2.sum()
        if total <= 0.0:
            # fewer distinct points than V; fall back to any unused sample
            pick = rng.integers(n)
        else:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        centers[k] = x[pick]
        d2 = np.minimum(d2, ((x - centers[k]) ** 2).sum(axis=1))
    return centers


def codebook_train(samples, V: int, iters: int = 20, seed: int = 0) -> Codebook:
    """k-means with k-means++ seeding; empty clusters are reseeded to the farthest point."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("samples must be a 2-D array of c-vectors")
    if x.shape[0] < V:
        raise ValueError(f"need at least V={V} samples, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, V, rng)
    for _ in range(iters):
        assign, d2 = nearest_codeword(x, centers)
        counts = np.bincount(assign, minlength=V)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        for k in np.flatnonzero(~nz):
            far = int(np.argmax(d2))
            new[k] = x[far]
            d2[far] = 0.0
        if np.array_equal(new, centers):
            break
        centers = new
    return Codebook(_break_ties(centers, x))


def _break_ties(centers, x):
    # duplicates (also after float32 rounding) go to the farthest distinct sample
    out = centers.astype("<f4").astype(np.float64)
    seen = set()
    for k in range(out.shape[0]):
        key = out[k].tobytes()
        if key not in seen:
            seen.add(key)
            continue
        _, d2 = nearest_codeword(x, out)
        for far in np.argsort(-d2, kind="stable"):
            cand = x[far].astype("<f4").astype(np.float64)
            if cand.tobytes() not in seen:
                out[k] = cand
                seen.add(cand.tobytes())
                break
        else:
            raise ValueError("samples have fewer distinct points than V")
    return out


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
