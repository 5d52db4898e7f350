"""Lossless coding of VQ token grids under masking schedules, with hybrid generation."""

from .coder import (
    Bitstream,
    BitstreamError,
    CorruptStreamError,
    ModelMismatchError,
    TruncatedStreamError,
    UniformModel,
    decode_grid,
    encode_grid,
    hybrid_decode,
    model_rate,
    rate_uniform,
    savings_percent,
)
from .schedules import (
    MaskSchedule,
    checkerboard_schedule,
    implicit_var_schedule,
    parse_schedule,
    qlds_schedule,
    quincunx_schedule,
    validate_schedule,
)
from .tokens import Codebook, LatentGrid, TokenGrid, codebook_train, vq_dequantize, vq_quantize

__version__ = "0.1.0"
