"""Conditional flow matching on low-dimensional targets.

A small stand-in for a latent decoder: straight-line probability paths from
standard normal noise to data, a regression objective on the path velocity
with a dropped global condition, classifier-free guidance, and an explicit
Euler sampler. Everything is float64 numpy and seeded.

Conditioning is ``(z_l, z_g)``: ``z_l`` is a real vector (possibly empty) and
``z_g`` an integer label, with ``-1`` standing for the null label.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .probmodel import checkpoint
from .probmodel.optim import Adam, TrainConfig

log = logging.getLogger(__name__)

NULL_LABEL = -1


@dataclass
class FlowConfig:
    sigma_min: float = 1e-5
    d: int = 2
    zl_dim: int = 0
    n_labels: int = 2
    steps: int = 20  # sampler steps
    cfg_scale: float = 1.0
    drop_prob: float = 0.10
    hidden: int = 128
    lr: float = 2e-3
    train_steps: int = 3000
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sigma_min < 1.0:
            raise ValueError(f"sigma_min must lie in [0, 1), got {self.sigma_min}")
        if self.cfg_scale < 0:
            raise ValueError("cfg scale must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")


# -- paths and fields ----------------------------------------------------------------


def cond_flow(x0, x1, t, sigma_min=1e-5):
    """Point at time ``t`` on the path from ``x0`` to ``x1``."""
    t = np.asarray(t, dtype=float)
    t = t[..., None] if t.ndim and np.ndim(x0) > t.ndim else t
    return (1.0 - (1.0 - sigma_min) * t) * x0 + t * x1


def target_field(x, x1, t, sigma_min=1e-5):
    """Velocity at ``x`` of the path ending at ``x1``."""
    t = np.asarray(t, dtype=float)
    den = 1.0 - (1.0 - sigma_min) * t
    if np.any(den <= 0):
        raise ZeroDivisionError(f"field is singular at t={float(np.max(t))} with sigma_min={sigma_min}")
    den = den[..., None] if den.ndim and np.ndim(x) > den.ndim else den
    return (x1 - (1.0 - sigma_min) * x) / den


def cfg_combine(v_uncond, v_cond, lam):
    v_uncond = np.asarray(v_uncond, dtype=float)
    v_cond = np.asarray(v_cond, dtype=float)
    if v_uncond.shape != v_cond.shape:
        raise ValueError(f"shape mismatch {v_uncond.shape} vs {v_cond.shape}")
    if lam == 1.0:
        # a + (b - a) can miss b by an ulp
        return v_cond.copy()
    return v_uncond + lam * (v_cond - v_uncond)


def gaussian_marginal_field(mu, s, sigma_min=0.0):
    """Exact marginal velocity when the data is N(mu, s^2 I).

    Returns ``(field, endpoint)``: ``field(x, t, zl, zg)`` usable by
    :func:`ode_sample`, and ``endpoint(x0)`` the exact time-1 solution.
    """
    mu = np.asarray(mu, dtype=float)
    c = 1.0 - sigma_min

    def field(x, t, zl=None, zg=None):
        a2 = (1.0 - c * t) ** 2 + (t * s) ** 2
        da = (-c * (1.0 - c * t) + t * s * s) / a2
        return mu + da * (x - t * mu)

    def endpoint(x0):
        return mu + np.sqrt(sigma_min**2 + s * s) * x0

    return field, endpoint


# -- vector-field network -------------------------------------------------------------


def _time_features(t):
    t = np.asarray(t, dtype=float)[:, None]
    k = np.arange(1, 4)[None]
    return np.concatenate([t, np.sin(np.pi * k * t), np.cos(np.pi * k * t)], axis=1)


class VectorFieldModel:
    """MLP on ``[x, time features, z_l, one-hot z_g]`` with two tanh hidden layers."""

    N_TIME = 7

    def __init__(self, d=2, zl_dim=0, n_labels=2, hidden=128, seed=0):
        self.hyper = {"d": d, "zl_dim": zl_dim, "n_labels": n_labels, "hidden": hidden, "seed": seed}
        n_in = d + self.N_TIME + zl_dim + n_labels + 1
        rng = np.random.default_rng(seed)
        self.params = {
            "w1": rng.normal(0, 1 / np.sqrt(n_in), (n_in, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0, 1 / np.sqrt(hidden), (hidden, hidden)),
            "b2": np.zeros(hidden),
            "w3": rng.normal(0, 0.1 / np.sqrt(hidden), (hidden, d)),
            "b3": np.zeros(d),
        }
        self._cache = None

    @property
    def d(self):
        return self.hyper["d"]

    def _inputs(self, x, t, zl, zg):
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        nl = self.hyper["n_labels"]
        zg = np.full(B, NULL_LABEL) if zg is None else np.broadcast_to(np.asarray(zg), (B,))
        if np.any((zg < NULL_LABEL) | (zg >= nl)):
            raise ValueError(f"labels must lie in [-1, {nl})")
        onehot = np.zeros((B, nl + 1))
        onehot[np.arange(B), np.where(zg == NULL_LABEL, nl, zg)] = 1.0
        parts = [x, _time_features(t)]
        if self.hyper["zl_dim"]:
            parts.append(np.broadcast_to(np.asarray(zl, dtype=float), (B, self.hyper["zl_dim"])))
        parts.append(onehot)
        return np.concatenate(parts, axis=1)

    def __call__(self, x, t, zl=None, zg=None, keep=False):
        P = self.params
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a0 = self._inputs(x, t, zl, zg)
        h1 = np.tanh(a0 @ P["w1"] + P["b1"])
        h2 = np.tanh(h1 @ P["w2"] + P["b2"])
        out = h2 @ P["w3"] + P["b3"]
        if keep:
            self._cache = (a0, h1, h2)
        return out

    def backward(self, dout):
        P = self.params
        a0, h1, h2 = self._cache
        g = {"w3": h2.T @ dout, "b3": dout.sum(0)}
        d2 = (dout @ P["w3"].T) * (1 - h2 * h2)
        g["w2"] = h1.T @ d2
        g["b2"] = d2.sum(0)
        d1 = (d2 @ P["w2"].T) * (1 - h1 * h1)
        g["w1"] = a0.T @ d1
        g["b1"] = d1.sum(0)
        self._cache = None
        return g

    # -- checkpoint ------------------------------------------------------------------

    def to_bytes(self):
        return checkpoint.dump(checkpoint.KIND_FLOW, self.hyper, self.params)

    @classmethod
    def from_bytes(cls, buf):
        kind, hyper, flat = checkpoint.load(buf)
        if kind != checkpoint.KIND_FLOW:
            raise ValueError("checkpoint is not a flow model")
        m = cls(**hyper)
        m.params = checkpoint.unflatten(flat, {k: v.shape for k, v in m.params.items()})
        return m

    @property
    def checkpoint_hash(self):
        return checkpoint.hash_bytes(self.to_bytes())


# -- objective and sampler --------------------------------------------------------------


def cfm_plus_loss(model, batch, cfg: FlowConfig, seed, grad=False):
    """Mean squared velocity error on a seeded draw of ``t``, noise and label drops.

    ``batch`` holds ``x1`` ``(B, d)`` and optionally ``zl`` and ``zg``. With
    ``grad`` the parameter gradients are returned too (``model`` must then be
    a :class:`VectorFieldModel`).
    """
    x1 = np.atleast_2d(np.asarray(batch["x1"], dtype=float))
    B = x1.shape[0]
    if B == 0:
        raise ValueError("batch must be nonempty")
    rng = np.random.default_rng(seed)
    t = rng.random(B)
    x0 = rng.standard_normal(x1.shape)
    zg = batch.get("zg")
    if zg is not None:
        zg = np.array(zg, dtype=np.int64)
        zg[rng.random(B) < cfg.drop_prob] = NULL_LABEL
    xt = cond_flow(x0, x1, t, cfg.sigma_min)
    u = x1 - (1.0 - cfg.sigma_min) * x0
    if grad:
        v = model(xt, t, batch.get("zl"), zg, keep=True)
    else:
        v = model(xt, t, batch.get("zl"), zg)
    diff = v - u
    loss = float((diff * diff).sum(1).mean())
    if not np.isfinite(loss):
        raise FloatingPointError(f"flow-matching loss is {loss}")
    if not grad:
        return loss
    return loss, model.backward(2.0 * diff / B)


def ode_sample(model, z=None, steps=20, lam=1.0, seed=0, n=1, d=None):
    """Integrate from a standard normal draw at t=0 to t=1 with explicit Euler.

    ``z`` is ``(zl, zg)`` or None. When ``lam != 1`` and a label is given,
    the conditional and null-label velocities are blended per step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    zl, zg = (None, None) if z is None else z
    d = d if d is not None else model.d
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    guided = lam != 1.0 and zg is not None and np.any(np.asarray(zg) != NULL_LABEL)
    dt = 1.0 / steps
    for i in range(steps):
        t = i * dt
        v = model(x, t, zl, zg)
        if guided:
            v = cfg_combine(model(x, t, zl, NULL_LABEL), v, lam)
        x = x + dt * v
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"sampler state became non-finite at step {i}")
    return x


# -- toy training ------------------------------------------------------------------------


def mixture_dataset(n, centers, std=0.25, seed=0):
    """Labelled Gaussian mixture: ``{"x1", "zg"}`` with labels drawn uniformly."""
    centers = np.asarray(centers, dtype=float)
    rng = np.random.default_rng(seed)
    zg = rng.integers(0, len(centers), n)
    x1 = centers[zg] + std * rng.standard_normal((n, centers.shape[1]))
    return {"x1": x1, "zg": zg}


def train_toy_decoder(data, cfg: FlowConfig, curve_path=None, log_every=0):
    """Fit a :class:`VectorFieldModel` to ``data`` with Adam; returns the model."""
    x1 = np.asarray(data["x1"], dtype=float)
    if x1.ndim != 2 or x1.shape[1] != cfg.d:
        raise ValueError(f"targets must have shape (n, {cfg.d}), got {x1.shape}")
    n = len(x1)
    zg = data.get("zg")
    zl = data.get("zl")
    if zg is not None and len(zg) != n or zl is not None and len(zl) != n:
        raise ValueError("conditioning arrays must match the number of targets")
    model = VectorFieldModel(cfg.d, cfg.zl_dim, cfg.n_labels, cfg.hidden, cfg.seed)
    opt = Adam(model.params, TrainConfig(seed=cfg.seed, lr=cfg.lr, steps=cfg.train_steps))
    rng = np.random.default_rng(cfg.seed)
    curve = []
    for step in range(cfg.train_steps):
        idx = rng.integers(0, n, min(cfg.batch_size, n))
        batch = {"x1": x1[idx]}
        if zg is not None:
            batch["zg"] = np.asarray(zg)[idx]
        if zl is not None:
            batch["zl"] = np.asarray(zl)[idx]
        loss, grads = cfm_plus_loss(model, batch, cfg, seed=int(rng.integers(2**63)), grad=True)
        opt.step(model.params, grads)
        curve.append(loss)
        if log_every and (step + 1) % log_every == 0:
            log.info("flow step %d loss %.4f", step + 1, np.mean(curve[-log_every:]))
    if curve_path is not None:
        with open(curve_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "loss"])
            wr.writerows((i + 1, f"{v:.6f}") for i, v in enumerate(curve))
    model.curve = curve
    model.config = asdict(cfg)
    return model
