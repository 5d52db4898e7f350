"""Pre-LN transformer with hand-written backward pass.

Small enough (d_model 64, 2 layers, 4 heads by default) to run on a CPU in
numpy, and written out explicitly so gradients can be checked against
finite differences.
"""

import math

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(dy, x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def log_softmax(z):
    m = z.max(-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(-1, keepdims=True))


class Transformer:
    """Token + position (+ optional block) embeddings, N blocks, output head.

    ``params`` is an ordered dict; its key order is the checkpoint order.
    """

    def __init__(self, n_tokens, n_pos, n_out, d_model=64, n_layers=2, n_heads=4,
                 n_blocks=0, seed=0, dtype=np.float64, pos_init=None):
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.d = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        d = d_model
        std = 0.02
        p = {}
        p["tok_emb"] = rng.normal(0, std, (n_tokens, d))
        p["pos_emb"] = rng.normal(0, std, (n_pos, d)) if pos_init is None else np.array(pos_init, dtype=float)
        if n_blocks:
            p["blk_emb"] = rng.normal(0, std, (n_blocks, d))
        for l in range(n_layers):
            p[f"l{l}.ln1_g"] = np.ones(d)
            p[f"l{l}.ln1_b"] = np.zeros(d)
            p[f"l{l}.qkv_w"] = rng.normal(0, std, (d, 3 * d))
            p[f"l{l}.qkv_b"] = np.zeros(3 * d)
            p[f"l{l}.proj_w"] = rng.normal(0, std / np.sqrt(2 * n_layers), (d, d))
            p[f"l{l}.proj_b"] = np.zeros(d)
            p[f"l{l}.ln2_g"] = np.ones(d)
            p[f"l{l}.ln2_b"] = np.zeros(d)
            p[f"l{l}.fc1_w"] = rng.normal(0, std, (d, 4 * d))
            p[f"l{l}.fc1_b"] = np.zeros(4 * d)
            p[f"l{l}.fc2_w"] = rng.normal(0, std / np.sqrt(2 * n_layers), (4 * d, d))
            p[f"l{l}.fc2_b"] = np.zeros(d)
        p["lnf_g"] = np.ones(d)
        p["lnf_b"] = np.zeros(d)
        p["out_w"] = rng.normal(0, std, (d, n_out))
        p["out_b"] = np.zeros(n_out)
        self.params = {k: v.astype(dtype) for k, v in p.items()}

    # -- forward -----------------------------------------------------------

    def forward(self, ids, pos, blk=None, mask=None, keep=False):
        """Logits for token ids ``(B, L)`` at positions ``pos`` ``(L,)``.

        ``mask`` is an optional ``(L, L)`` boolean array, True where a query
        may attend to a key. With ``keep`` the activations needed by
        :meth:`backward` are retained.
        """
        P = self.params
        B, L = ids.shape
        H, dh = self.n_heads, self.d // self.n_heads
        x = P["tok_emb"][ids] + P["pos_emb"][pos][None]
        if blk is not None:
            x = x + P["blk_emb"][blk][None]
        caches = []
        for l in range(self.n_layers):
            pre = f"l{l}."
            h1, ln1 = _ln_fwd(x, P[pre + "ln1_g"], P[pre + "ln1_b"])
            qkv = h1 @ P[pre + "qkv_w"] + P[pre + "qkv_b"]
            qkv = qkv.reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
            q, k, v = qkv[0], qkv[1], qkv[2]
            s = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
            if mask is not None:
                s = np.where(mask, s, -np.inf)
            s = s - s.max(-1, keepdims=True)
            a = np.exp(s)
            a /= a.sum(-1, keepdims=True)
            o = (a @ v).transpose(0, 2, 1, 3).reshape(B, L, self.d)
            x = x + o @ P[pre + "proj_w"] + P[pre + "proj_b"]
            h2, ln2 = _ln_fwd(x, P[pre + "ln2_g"], P[pre + "ln2_b"])
            f1 = h2 @ P[pre + "fc1_w"] + P[pre + "fc1_b"]
            g1, t1 = _gelu_fwd(f1)
            x = x + g1 @ P[pre + "fc2_w"] + P[pre + "fc2_b"]
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite activation in layer {l}")
            if keep:
                caches.append((h1, ln1, q, k, v, a, o, h2, ln2, f1, g1, t1))
        hf, lnf = _ln_fwd(x, P["lnf_g"], P["lnf_b"])
        logits = hf @ P["out_w"] + P["out_b"]
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError(f"non-finite activation in output head (layer {self.n_layers})")
        if keep:
            self._cache = (ids, pos, blk, mask, caches, hf, lnf)
        return logits

    # -- backward ----------------------------------------------------------

    def backward(self, dlogits):
        """Gradients of a scalar loss given ``dL/dlogits``; uses the last kept forward."""
        P = self.params
        ids, pos, blk, mask, caches, hf, lnf = self._cache
        B, L = ids.shape
        H, dh = self.n_heads, self.d // self.n_heads
        d = self.d
        g = {}
        g["out_w"] = hf.reshape(-1, d).T @ dlogits.reshape(-1, dlogits.shape[-1])
        g["out_b"] = dlogits.reshape(-1, dlogits.shape[-1]).sum(0)
        dx, g["lnf_g"], g["lnf_b"] = _ln_bwd(dlogits @ P["out_w"].T, P["lnf_g"], lnf)
        for l in reversed(range(self.n_layers)):
            pre = f"l{l}."
            h1, ln1, q, k, v, a, o, h2, ln2, f1, g1, t1 = caches[l]
            # MLP branch
            g[pre + "fc2_w"] = g1.reshape(-1, 4 * d).T @ dx.reshape(-1, d)
            g[pre + "fc2_b"] = dx.reshape(-1, d).sum(0)
            dg1 = dx @ P[pre + "fc2_w"].T
            df1 = _gelu_bwd(dg1, f1, t1)
            g[pre + "fc1_w"] = h2.reshape(-1, d).T @ df1.reshape(-1, 4 * d)
            g[pre + "fc1_b"] = df1.reshape(-1, 4 * d).sum(0)
            dh2 = df1 @ P[pre + "fc1_w"].T
            dln, g[pre + "ln2_g"], g[pre + "ln2_b"] = _ln_bwd(dh2, P[pre + "ln2_g"], ln2)
            dx = dx + dln
            # attention branch
            g[pre + "proj_w"] = o.reshape(-1, d).T @ dx.reshape(-1, d)
            g[pre + "proj_b"] = dx.reshape(-1, d).sum(0)
            do = (dx @ P[pre + "proj_w"].T).reshape(B, L, H, dh).transpose(0, 2, 1, 3)
            da = do @ v.transpose(0, 1, 3, 2)
            dv = a.transpose(0, 1, 3, 2) @ do
            ds = a * (da - (da * a).sum(-1, keepdims=True))
            ds *= 1.0 / math.sqrt(dh)
            dq = ds @ k
            dk = ds.transpose(0, 1, 3, 2) @ q
            dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, L, 3 * d)
            g[pre + "qkv_w"] = h1.reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
            g[pre + "qkv_b"] = dqkv.reshape(-1, 3 * d).sum(0)
            dh1 = dqkv @ P[pre + "qkv_w"].T
            dln, g[pre + "ln1_g"], g[pre + "ln1_b"] = _ln_bwd(dh1, P[pre + "ln1_g"], ln1)
            dx = dx + dln
        g["tok_emb"] = np.zeros_like(P["tok_emb"])
        np.add.at(g["tok_emb"], ids.ravel(), dx.reshape(-1, d))
        g["pos_emb"] = np.zeros_like(P["pos_emb"])
        np.add.at(g["pos_emb"], pos, dx.sum(0))
        if blk is not None:
            g["blk_emb"] = np.zeros_like(P["blk_emb"])
            np.add.at(g["blk_emb"], blk, dx.sum(0))
        self._cache = None
        return g


def masked_cross_entropy(logits, targets, weight):
    """Mean cross-entropy (nats) over entries with ``weight`` True, and dL/dlogits."""
    lp = log_softmax(logits)
    n = max(int(weight.sum()), 1)
    picked = np.take_along_axis(lp, targets[..., None], -1)[..., 0]
    loss = -(picked * weight).sum() / n
    dlogits = np.exp(lp)
    np.put_along_axis(dlogits, targets[..., None], np.take_along_axis(dlogits, targets[..., None], -1) - 1.0, -1)
    dlogits *= (weight / n)[..., None]
    return float(loss), dlogits


def grid_sincos(h, w, d, scale=0.1):
    """2-D sine/cosine features, used to initialize learned position embeddings."""
    i, j = np.divmod(np.arange(h * w), w)
    quarter = d // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / max(quarter, 1)))
    feats = [np.sin(i[:, None] * freqs), np.cos(i[:, None] * freqs),
             np.sin(j[:, None] * freqs), np.cos(j[:, None] * freqs)]
    out = np.concatenate(feats, axis=1)
    if out.shape[1] < d:
        out = np.pad(out, ((0, 0), (0, d - out.shape[1])))
    return scale * out
