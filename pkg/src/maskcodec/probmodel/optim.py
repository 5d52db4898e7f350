from dataclasses import dataclass

import numpy as np


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 3e-4
    steps: int = 1000
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_min: float = 0.05
    mask_max: float = 0.95
    warmup: int = 0
    clip: float = 0.0  # global grad-norm clip, 0 disables


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        lr = c.lr * min(1.0, self.t / c.warmup) if c.warmup else c.lr
        if c.clip > 0:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > c.clip:
                grads = {k: g * (c.clip / norm) for k, g in grads.items()}
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            params[k] -= lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)
