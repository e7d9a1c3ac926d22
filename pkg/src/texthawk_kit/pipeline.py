"""End-to-end model: crop -> frozen encoder -> resampler -> LLM stub + detection head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .cropping import CropConfig, GridChoice, ImageShape, SubImage, crop, select_grid
from .encoder import FeatureMap, VisionEncoder
from .grounding.head import DetectionHead
from .grounding.llm import LanguageModelStub
from .grounding.losses import box_loss, total_loss
from .numeric.layers import Module
from .numeric.rng import Rng
from .numeric.tensor import Tensor
from .packing import PackedBatch, packed_lm_loss, predictor_positions
from .resampler.model import Resampler, ResamplerConfig, ResamplerOutput

COMPRESSION_RATIO = 16


def token_budget(shape: ImageShape, crop_cfg: CropConfig, res_cfg: ResamplerConfig) -> dict:
    """Token accounting for one image: raw patches, resampled queries, emitted tokens."""
    choice = select_grid(shape, crop_cfg)
    n = choice.grid.area
    per_sub = crop_cfg.patches_per_subimage
    qr, qc = res_cfg.query_grid(crop_cfg.H // crop_cfg.p, crop_cfg.W // crop_cfg.p)
    resampled = n * qr * qc
    emitted = resampled // res_cfg.rearrange_group
    return {
        "height": shape.h,
        "width": shape.w,
        "grid": [choice.grid.r, choice.grid.c],
        "sub_images": n,
        "raw_tokens": n * per_sub,
        "resampled_tokens": resampled,
        "emitted_tokens": emitted,
        "ratio_resample_only": (n * per_sub) // resampled,
        "ratio_resa": (n * per_sub) // emitted,
    }


@dataclass
class VisualOutput:
    choice: GridChoice
    tiles: list[SubImage]
    features: list[list[FeatureMap]]
    resampler: ResamplerOutput

    @property
    def tokens(self) -> Tensor:
        return self.resampler.tokens


@dataclass
class ModelOutput:
    hidden: Tensor
    logits: Tensor
    box_pred: Tensor  # one sigmoid scalar per coordinate position


class TextHawk(Module):
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.encoder = VisionEncoder(cfg.encoder, cfg.seed)
        self.resampler = Resampler(cfg.resampler, cfg.routing, cfg.seed)
        self.llm = LanguageModelStub(cfg.llm, Rng(cfg.seed).child("llm"))
        self.det_head = DetectionHead(cfg.llm.dim, Rng(cfg.seed).child("det_head"))

    def encode_image(self, image: np.ndarray, threads: int = 1):
        image = np.asarray(image, np.float32)
        choice = select_grid(ImageShape(image.shape[0], image.shape[1]), self.cfg.crop)
        tiles = crop(image, choice, self.cfg.crop)
        feats = self.encoder.encode_many([t.pixels for t in tiles], threads)
        return choice, tiles, feats

    def visual_tokens(self, image: np.ndarray, threads: int = 1) -> VisualOutput:
        choice, tiles, feats = self.encode_image(image, threads)
        out = self.resampler.resample_and_rearrange(feats, [(t.row, t.col) for t in tiles], choice.grid)
        return VisualOutput(choice, tiles, feats, out)

    def forward(self, batch: PackedBatch, image_embeds: Tensor | None = None) -> ModelOutput:
        hidden, logits = self.llm(batch.tokens, batch.position_indices, batch.attention_mask(), image_embeds)
        rows = predictor_positions(batch)
        box_pred = self.det_head(hidden[rows]) if len(rows) else Tensor(np.zeros(0, hidden.dtype))
        return ModelOutput(hidden, logits, box_pred)

    def losses(self, batch: PackedBatch, image_embeds: Tensor | None = None) -> dict[str, Tensor]:
        out = self.forward(batch, image_embeds)
        lm = packed_lm_loss(out.logits, batch)
        box = box_loss(out.box_pred, batch.coord_targets)
        return {"lm": lm, "box": box, "total": total_loss(lm, box, self.cfg.losses)}


def sgd_step(model: Module, lr: float) -> None:
    """Plain SGD on parameters that require grad; frozen weights are never touched."""
    for _, p in model.trainable():
        if p.grad is not None:
            p.data = (p.data - lr * p.grad).astype(p.dtype)
    model.zero_grad()
