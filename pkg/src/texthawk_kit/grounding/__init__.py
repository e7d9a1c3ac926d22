from .codec import BBox, CodecError, decode_bbox, encode_bbox, render_bbox_text
from .head import DetectionHead
from .llm import LanguageModelStub, LLMConfig, LoRALinear
from .losses import LossWeights, box_loss, lm_loss, token_weights, total_loss

__all__ = [
    "BBox",
    "CodecError",
    "DetectionHead",
    "LLMConfig",
    "LanguageModelStub",
    "LoRALinear",
    "LossWeights",
    "box_loss",
    "decode_bbox",
    "encode_bbox",
    "lm_loss",
    "render_bbox_text",
    "token_weights",
    "total_loss",
]
