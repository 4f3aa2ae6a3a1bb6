"""
Denoiser model.

Spatiotemporal encoding, parameter registry and checkpoints, and the
noise-prediction network.
"""

from hailcast.model.denoiser import (
    TokenMatrix,
    attention,
    denoise_patch,
    encode_references,
    merge_tokens,
    predict_noise,
    space_to_depth,
    timestep_embedding,
    tokenize_target,
    untokenize,
)
from hailcast.model.params import (
    DenoiserConfig,
    DenoiserParams,
    init_params,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
)
from hailcast.model.spen import (
    SpenCode,
    SpenVariant,
    apply_spen,
    compose_codes,
    encode_index,
    modulation_matrix,
)

__all__ = [
    "DenoiserConfig",
    "DenoiserParams",
    "SpenCode",
    "SpenVariant",
    "TokenMatrix",
    "apply_spen",
    "attention",
    "compose_codes",
    "denoise_patch",
    "encode_index",
    "encode_references",
    "init_params",
    "load_checkpoint",
    "merge_tokens",
    "modulation_matrix",
    "parameter_shapes",
    "predict_noise",
    "save_checkpoint",
    "space_to_depth",
    "timestep_embedding",
    "tokenize_target",
    "untokenize",
]
