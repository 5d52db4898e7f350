"""Range coding of token grids under a masking schedule, and the PCV2 container.

Group 0 of every schedule is coded under the uniform prior. Group k >= 1 is
coded under the model's conditionals given groups ``0..k-1``, in the order
stored in the schedule. Models come in two flavours:

* group models (uniform, MIM, VAR) expose ``group_probs(tokens, schedule, k)``
  and predict a whole group at once;
* sequential models (the KT counting model) expose ``session(schedule)`` and
  adapt after every symbol.

Probabilities are quantized to 16-bit frequency tables before coding; the
rate reported by :func:`model_rate` is the cross-entropy under those tables.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .kernels import MASK32, PROB_TOTAL, rc_decode_block, rc_decoder_init, rc_encode_block, rc_finish
from .probmodel.fields import CategoricalField, cdf_bits, quantize_probs, uniform_cdf
from .schedules import MaskSchedule, build_schedule, schedule_params_from_bytes, schedule_params_to_bytes
from .tokens import TokenGrid

MAGIC = b"PCV2"
VERSION = 1


class BitstreamError(ValueError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


class CorruptStreamError(BitstreamError):
    pass


class ModelMismatchError(BitstreamError):
    pass


class UniformModel:
    """Parameter-free baseline: every symbol costs log2 V bits."""

    kind = "uniform"
    checkpoint_hash = 0

    def __init__(self, V):
        if V < 2:
            raise ValueError("V must be >= 2")
        self.V = V

    def group_probs(self, tokens, schedule, k):
        n = len(schedule.groups[k])
        return np.full((np.atleast_2d(tokens).shape[0], n, self.V), 1.0 / self.V)


def model_hash(model):
    return int(getattr(model, "checkpoint_hash", 0))


def _is_sequential(model):
    return hasattr(model, "session")


# -- range coder wrappers ----------------------------------------------------------


class RangeEncoder:
    def __init__(self):
        self.state = np.array([0, MASK32, -1, 0], dtype=np.int64)
        self._chunks = []

    def encode(self, cum, syms):
        cum = np.ascontiguousarray(cum, dtype=np.int64).reshape(-1, cum.shape[-1])
        syms = np.ascontiguousarray(syms, dtype=np.int64).reshape(-1)
        # deferred 0xFF bytes from earlier calls may be flushed here too
        out = np.empty(2 * len(syms) + 8 + int(self.state[3]), dtype=np.uint8)
        n = rc_encode_block(self.state, cum, syms, out)
        self._chunks.append(out[:n].tobytes())

    def finish(self) -> bytes:
        out = np.empty(8 + int(self.state[3]), dtype=np.uint8)
        n = rc_finish(self.state, out)
        self._chunks.append(out[:n].tobytes())
        return b"".join(self._chunks)


class RangeDecoder:
    def __init__(self, payload: bytes):
        self.data = np.frombuffer(payload, dtype=np.uint8)
        self.state = np.zeros(3, dtype=np.int64)
        rc_decoder_init(self.state, self.data)

    def decode(self, cum):
        cum = np.ascontiguousarray(cum, dtype=np.int64).reshape(-1, cum.shape[-1])
        syms = np.empty(cum.shape[0], dtype=np.int64)
        if rc_decode_block(self.state, cum, self.data, syms) != 0:
            raise CorruptStreamError("payload decodes outside the coding interval")
        return syms


# -- container -------------------------------------------------------------------------


@dataclass(frozen=True)
class Bitstream:
    """PCV2 stream. Layout (little-endian) is documented in docs/bitstream.md."""

    h: int
    w: int
    V: int
    schedule_kind: str
    schedule_params: tuple
    groups_transmitted: int
    model_hash: int
    seed: int
    checksum: int
    payload: bytes

    def header_bytes(self) -> bytes:
        return (
            MAGIC
            + struct.pack("<BHHI", VERSION, self.h, self.w, self.V)
            + schedule_params_to_bytes(self.schedule_kind, self.schedule_params)
            + struct.pack("<BQQII", self.groups_transmitted, self.model_hash, self.seed,
                          self.checksum, len(self.payload))
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    @property
    def header_bits(self):
        return 8 * len(self.header_bytes())

    @property
    def payload_bits(self):
        return 8 * len(self.payload)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Bitstream":
        buf = bytes(buf)
        if len(buf) < 4 or buf[:4] != MAGIC:
            raise BitstreamError("not a PCV2 stream (bad magic)")
        try:
            version, h, w, V = struct.unpack_from("<BHHI", buf, 4)
            if version != VERSION:
                raise BitstreamError(f"unsupported stream version {version}")
            kind, params, off = schedule_params_from_bytes(buf, 13)
            k, mh, seed, crc, n = struct.unpack_from("<BQQII", buf, off)
        except struct.error as exc:
            raise TruncatedStreamError(f"header is truncated: {exc}") from None
        off += struct.calcsize("<BQQII")
        payload = buf[off:]
        if len(payload) < n:
            raise TruncatedStreamError(f"payload has {len(payload)} of {n} bytes")
        if len(payload) > n:
            raise BitstreamError(f"{len(payload) - n} trailing bytes after the payload")
        return cls(h, w, V, kind, params, k, mh, seed, crc, payload)

    def schedule(self) -> MaskSchedule:
        return build_schedule(self.schedule_kind, self.schedule_params, self.h, self.w)


def _checksum(tokens_in_order):
    return zlib.crc32(np.asarray(tokens_in_order, dtype="<i4").tobytes())


# -- probability tables -------------------------------------------------------------------


def _group_cdfs(model, tokens, sched, k):
    """Quantized tables ``(B, |G_k|, V+1)`` for a group model."""
    B = tokens.shape[0]
    n = len(sched.groups[k])
    if k == 0 or model.kind == "uniform":
        return np.broadcast_to(uniform_cdf(n, model.V), (B, n, model.V + 1))
    probs = model.group_probs(tokens, sched, k)
    if probs.shape != (B, n, model.V):
        raise ValueError(f"model returned rows of shape {probs.shape}, expected {(B, n, model.V)}")
    for b in range(B):
        CategoricalField(sched.groups[k], probs[b]).check()
    return quantize_probs(probs)


def _check_compat(h, w, V, sched, model):
    if (sched.h, sched.w) != (h, w):
        raise ValueError(f"schedule is {sched.h}x{sched.w}, grid is {h}x{w}")
    if model.V != V:
        raise ValueError(f"model has V={model.V}, grid has V={V}")
    mh, mw = getattr(model, "h", h), getattr(model, "w", w)
    if (mh, mw) != (h, w):
        raise ValueError(f"model was built for {mh}x{mw} grids, grid is {h}x{w}")
    if sched.K > 255:
        raise ValueError(f"schedule has {sched.K} groups; the container allows 255")


# -- encode ------------------------------------------------------------------------------------


def encode_batch(grids, sched: MaskSchedule, model, groups=None, seed=0, trace=None):
    """Encode several grids of equal shape; returns ``(streams, coded_bits)``.

    ``coded_bits[i]`` is the cross-entropy of grid i under the quantized
    tables the coder used (the model rate).
    """
    grids = list(grids)
    if not grids:
        return [], []
    h, w, V = grids[0].h, grids[0].w, grids[0].V
    for g in grids:
        if (g.h, g.w, g.V) != (h, w, V):
            raise ValueError("all grids in a batch must share h, w and V")
    _check_compat(h, w, V, sched, model)
    K = sched.K if groups is None else int(groups)
    if not 0 <= K <= sched.K:
        raise ValueError(f"groups must lie in [0, {sched.K}], got {K}")
    tokens = np.stack([g.indices.ravel() for g in grids])
    B = len(grids)
    encs = [RangeEncoder() for _ in range(B)]
    bits = np.zeros(B)
    if _is_sequential(model):
        for b in range(B):
            sess = model.session(sched)
            for k in range(K):
                for p in sched.groups[k]:
                    p = int(p)
                    s = tokens[b, p]
                    cum = uniform_cdf(1, V)[0] if k == 0 else sess.cdf(p)
                    encs[b].encode(cum[None], [s])
                    bits[b] += cdf_bits(cum[None], [s])
                    if trace is not None and b == 0:
                        trace.append((k, p, zlib.crc32(cum.tobytes())))
                    sess.update(p, s)
    else:
        for k in range(K):
            g = sched.groups[k]
            cums = _group_cdfs(model, tokens, sched, k)
            for b in range(B):
                encs[b].encode(cums[b], tokens[b, g])
                bits[b] += cdf_bits(cums[b], tokens[b, g])
            if trace is not None:
                trace.append((k, -1, zlib.crc32(np.ascontiguousarray(cums[0]).tobytes())))
    order = np.concatenate(sched.groups[:K]) if K else np.zeros(0, dtype=np.int64)
    streams = []
    for b in range(B):
        streams.append(Bitstream(
            h, w, V, sched.kind, sched.params, K, model_hash(model), int(seed),
            _checksum(tokens[b, order]), encs[b].finish(),
        ))
    return streams, list(bits)


def encode_grid(grid: TokenGrid, sched: MaskSchedule, model, groups=None, seed=0, trace=None) -> Bitstream:
    """Encode ``grid``; with ``groups=k`` only the first k groups are transmitted."""
    streams, _ = encode_batch([grid], sched, model, groups, seed, trace)
    return streams[0]


def model_rate(model, grid: TokenGrid, sched: MaskSchedule) -> float:
    """Bits to code ``grid``: log2 V per group-0 symbol plus the model's cross-entropy.

    Measured under the 16-bit tables the coder uses, so the emitted payload
    lies within a few bytes above this value.
    """
    _, bits = encode_batch([grid], sched, model)
    return bits[0]


# -- decode ------------------------------------------------------------------------------------


def _prepare(bs: Bitstream, model):
    if model.V != bs.V:
        raise ModelMismatchError(f"stream has V={bs.V}, model has V={model.V}")
    if bs.model_hash != model_hash(model):
        raise ModelMismatchError(
            f"stream was coded with model {bs.model_hash:016x}, decoder holds {model_hash(model):016x}; "
            "sender and receiver must share the same checkpoint"
        )
    sched = bs.schedule()
    _check_compat(bs.h, bs.w, bs.V, sched, model)
    if bs.groups_transmitted > sched.K:
        raise CorruptStreamError(f"stream claims {bs.groups_transmitted} groups, schedule has {sched.K}")
    return sched


def _decode_prefix(streams, model, trace=None):
    """Decode the transmitted groups of every stream; returns tokens ``(B, N)`` and the schedule."""
    bs0 = streams[0]
    sched = _prepare(bs0, model)
    for bs in streams[1:]:
        if (bs.h, bs.w, bs.V, bs.schedule_kind, bs.schedule_params, bs.groups_transmitted) != (
            bs0.h, bs0.w, bs0.V, bs0.schedule_kind, bs0.schedule_params, bs0.groups_transmitted
        ):
            raise ValueError("batched streams must share shape, schedule and group count")
        _prepare(bs, model)
    K = bs0.groups_transmitted
    B = len(streams)
    tokens = np.zeros((B, sched.N), dtype=np.int64)
    decs = [RangeDecoder(bs.payload) for bs in streams]
    sessions = None
    if _is_sequential(model):
        sessions = []
        for b in range(B):
            sess = model.session(sched)
            for k in range(K):
                for p in sched.groups[k]:
                    p = int(p)
                    cum = uniform_cdf(1, bs0.V)[0] if k == 0 else sess.cdf(p)
                    s = int(decs[b].decode(cum[None])[0])
                    if trace is not None and b == 0:
                        trace.append((k, p, zlib.crc32(cum.tobytes())))
                    tokens[b, p] = s
                    sess.update(p, s)
            sessions.append(sess)
    else:
        for k in range(K):
            g = sched.groups[k]
            cums = _group_cdfs(model, tokens, sched, k)
            if trace is not None:
                trace.append((k, -1, zlib.crc32(np.ascontiguousarray(cums[0]).tobytes())))
            for b in range(B):
                tokens[b, g] = decs[b].decode(cums[b])
    order = np.concatenate(sched.groups[:K]) if K else np.zeros(0, dtype=np.int64)
    for b, bs in enumerate(streams):
        if _checksum(tokens[b, order]) != bs.checksum:
            raise CorruptStreamError("decoded tokens fail the stream checksum")
    return tokens, sched, sessions


def decode_batch(streams, model):
    streams = list(streams)
    if not streams:
        return []
    for bs in streams:
        _require_complete(bs)
    tokens, sched, _ = _decode_prefix(streams, model)
    return [TokenGrid(t.reshape(sched.h, sched.w), streams[0].V) for t in tokens]


def _require_complete(bs):
    K = bs.schedule().K
    if bs.groups_transmitted != K:
        raise BitstreamError(
            f"stream carries {bs.groups_transmitted} of {K} groups; use hybrid_decode for partial streams"
        )


def decode_grid(bs: Bitstream, model, trace=None) -> TokenGrid:
    """Exact inverse of :func:`encode_grid` for fully transmitted streams."""
    _require_complete(bs)
    tokens, sched, _ = _decode_prefix([bs], model, trace)
    return TokenGrid(tokens[0].reshape(sched.h, sched.w), bs.V)


# -- hybrid ------------------------------------------------------------------------------------


def _sample_rows(cum, rng):
    u = rng.integers(0, PROB_TOTAL, size=cum.shape[0])
    return np.array([np.searchsorted(cum[i], u[i], side="right") - 1 for i in range(cum.shape[0])], dtype=np.int64)


def hybrid_decode(bs: Bitstream, model, seed=None) -> TokenGrid:
    """Decode the transmitted groups losslessly and sample the rest from the model.

    Sampling draws from the same 16-bit tables the coder uses, with a Philox
    generator keyed by ``seed`` (default: the seed stored in the header).
    """
    tokens, sched, sessions = _decode_prefix([bs], model)
    rng = np.random.Generator(np.random.Philox(key=bs.seed if seed is None else int(seed)))
    flat = tokens[0]
    for k in range(bs.groups_transmitted, sched.K):
        g = sched.groups[k]
        if sessions is not None:
            sess = sessions[0]
            for p in g:
                p = int(p)
                cum = uniform_cdf(1, bs.V)[0] if k == 0 else sess.cdf(p)
                s = int(_sample_rows(cum[None], rng)[0])
                flat[p] = s
                sess.update(p, s)
        else:
            cum = _group_cdfs(model, flat[None], sched, k)[0]
            flat[g] = _sample_rows(cum, rng)
    return TokenGrid(flat.reshape(sched.h, sched.w), bs.V)


# -- rate arithmetic ---------------------------------------------------------------------------


def rate_uniform(h, w, V, H, W) -> float:
    """Bits per pixel of uniform coding: h*w*log2(V) / (H*W)."""
    if min(h, w, H, W) < 1 or V < 2:
        raise ValueError("need h, w, H, W >= 1 and V >= 2")
    return h * w * math.log2(V) / (H * W)


def savings_percent(bpp, baseline_bpp) -> float:
    if baseline_bpp <= 0:
        raise ValueError("baseline bpp must be positive")
    return 100.0 * (1.0 - bpp / baseline_bpp)
