"""PCVM model container.

Layout: magic ``PCVM``, version u8, model-kind u8, u32 LE length of a UTF-8
JSON hyperparameter block, the block, then every parameter tensor as f32 LE
in declared order. Shapes follow from the hyperparameters.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"PCVM"
VERSION = 1
KIND_MIM, KIND_VAR, KIND_FLOW, KIND_COUNTING = 0, 1, 2, 3


def dump(kind, hyper, params):
    blob = json.dumps(hyper, sort_keys=True).encode()
    head = MAGIC + struct.pack("<BBI", VERSION, kind, len(blob)) + blob
    body = b"".join(np.asarray(v, dtype="<f4").tobytes() for v in params.values())
    return head + body


def load(buf):
    """Return ``(kind, hyper, flat float64 parameter vector)``."""
    if buf[:4] != MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version, kind, n = struct.unpack_from("<BBI", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hyper = json.loads(buf[10:10 + n].decode())
    body = buf[10 + n:]
    if len(body) % 4:
        raise ValueError("checkpoint body is not a whole number of f32 values")
    return kind, hyper, np.frombuffer(body, dtype="<f4").astype(np.float64)


def unflatten(flat, shapes):
    """Split a flat vector into arrays of ``shapes`` (dict name -> shape)."""
    out = {}
    off = 0
    for k, shp in shapes.items():
        n = int(np.prod(shp))
        if off + n > flat.size:
            raise ValueError("checkpoint is truncated")
        out[k] = flat[off:off + n].reshape(shp).copy()
        off += n
    if off != flat.size:
        raise ValueError("checkpoint has trailing parameter data")
    return out


def hash_bytes(buf):
    """Nonzero u64 identifying a checkpoint (0 is reserved for parameter-free models)."""
    h = int.from_bytes(hashlib.sha256(buf).digest()[:8], "little")
    return h or 1


def round_f32(params):
    for k in params:
        params[k] = params[k].astype(np.float32).astype(params[k].dtype)
