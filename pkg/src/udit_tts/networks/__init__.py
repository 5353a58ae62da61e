from .decoder import DecoderConfig, UDiT
from .encoder import DurationConfig, DurationPredictor, EncoderConfig, TextEncoder, lengths_to_mask
from .layers import DiTBlock, patchify, sinusoidal_time_embedding, unpatchify
from .model import ModelConfig, UDiTTTS, count_parameters, parameters_finite

__all__ = [
    "DecoderConfig",
    "DiTBlock",
    "DurationConfig",
    "DurationPredictor",
    "EncoderConfig",
    "ModelConfig",
    "TextEncoder",
    "UDiT",
    "UDiTTTS",
    "count_parameters",
    "lengths_to_mask",
    "parameters_finite",
    "patchify",
    "sinusoidal_time_embedding",
    "unpatchify",
]
