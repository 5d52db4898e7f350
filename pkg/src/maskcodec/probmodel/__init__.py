"""Entropy models over token grids."""

from . import checkpoint
from .counting import CausalityError, CountingModel
from .fields import CategoricalField, apply_floor, p_floor, quantize_probs, uniform_field
from .mim import MimModel, mim_forward, mim_train_step
from .optim import TrainConfig
from .var import VarModel, var_forward


def load_model(buf: bytes):
    """Rebuild a MIM, VAR or counting model from checkpoint bytes."""
    kind, _, _ = checkpoint.load(buf)
    if kind == checkpoint.KIND_MIM:
        return MimModel.from_bytes(buf)
    if kind == checkpoint.KIND_VAR:
        return VarModel.from_bytes(buf)
    if kind == checkpoint.KIND_COUNTING:
        return CountingModel.from_bytes(buf)
    raise ValueError(f"checkpoint kind {kind} is not an entropy model")


__all__ = [
    "CategoricalField", "CausalityError", "CountingModel", "MimModel", "TrainConfig", "VarModel",
    "apply_floor", "load_model", "mim_forward", "mim_train_step", "p_floor", "quantize_probs",
    "uniform_field", "var_forward",
]
