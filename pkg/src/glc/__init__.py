"""Generative latent image codec.

Images are mapped into the latent space of a vector-quantized generative
auto-encoder; that latent is compressed with rate-variable transform coding,
a categorical hyper module and a quadtree spatial context, and serialized
into a decodable range-coded stream.
"""

from .config import ModelConfig, facial_config, natural_config, toy_config
from .codec import (
    GLCModel,
    decode_image,
    encode_image,
    get_coder,
    load_checkpoint,
    save_checkpoint,
)
from .training import StageConfig, run_pipeline, train_stage

__all__ = [
    "GLCModel",
    "ModelConfig",
    "StageConfig",
    "decode_image",
    "encode_image",
    "facial_config",
    "get_coder",
    "load_checkpoint",
    "natural_config",
    "run_pipeline",
    "save_checkpoint",
    "toy_config",
    "train_stage",
]
