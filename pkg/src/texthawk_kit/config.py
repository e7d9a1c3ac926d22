"""Run configuration: JSON on disk, every default materialised on load."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import vocab as V
from .cropping import CropConfig
from .encoder import EncoderConfig
from .grounding.llm import LLMConfig
from .grounding.losses import LossWeights
from .resampler.model import ROUTING_TABLES, ResamplerConfig, RoutingTable


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    crop: CropConfig = field(default_factory=CropConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    resampler: ResamplerConfig = field(default_factory=ResamplerConfig)
    routing: RoutingTable = field(default_factory=RoutingTable)
    losses: LossWeights = field(default_factory=LossWeights)
    llm: LLMConfig = field(default_factory=LLMConfig)
    seed: int = 0

    def __post_init__(self):
        errors = []
        if self.crop.p != self.encoder.patch:
            errors.append(f"crop.p={self.crop.p} but encoder.patch={self.encoder.patch}")
        if self.encoder.dim != self.resampler.dim:
            errors.append(f"encoder.dim={self.encoder.dim} but resampler.dim={self.resampler.dim}")
        if self.resampler.llm_dim != self.llm.dim:
            errors.append(f"resampler.llm_dim={self.resampler.llm_dim} but llm.dim={self.llm.dim}")
        if len(self.routing) != self.resampler.depth:
            errors.append(f"routing has {len(self.routing)} entries for resampler depth {self.resampler.depth}")
        rows, cols = self.crop.H // self.crop.p, self.crop.W // self.crop.p
        sr, sc = self.resampler.pool_stride
        if rows % sr or cols % sc or (rows // sr) * (cols // sc) != self.resampler.queries_per_subimage:
            errors.append(
                f"{rows}x{cols} patches with stride {sr}x{sc} do not give "
                f"{self.resampler.queries_per_subimage} queries"
            )
        if self.llm.vocab_size != V.CoordVocab().size:
            errors.append(f"llm.vocab_size must be {V.CoordVocab().size}")
        if not 0 <= self.seed < 2**64:
            errors.append("seed must be an unsigned 64-bit integer")
        if errors:
            raise ConfigError("; ".join(errors))

    # ---- (de)serialisation ------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["routing"] = list(self.routing.stages)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        try:
            for name, klass in (("crop", CropConfig), ("encoder", EncoderConfig),
                                ("resampler", ResamplerConfig), ("losses", LossWeights), ("llm", LLMConfig)):
                section = raw.get(name, {})
                allowed = {f.name for f in dataclasses.fields(klass)}
                extra = set(section) - allowed
                if extra:
                    raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
                section = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
                kw[name] = klass(**section)
            routing = raw.get("routing", list(RoutingTable().stages))
            kw["routing"] = RoutingTable.named(routing) if isinstance(routing, str) else RoutingTable(tuple(routing))
            kw["seed"] = int(raw.get("seed", 0))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_routing(self, name_or_stages) -> "RunConfig":
        if isinstance(name_or_stages, str):
            return self.replace(routing=RoutingTable.named(name_or_stages))
        return self.replace(routing=RoutingTable(tuple(name_or_stages)))

    def toy(self) -> "RunConfig":
        """Same structure (depth, routing, switches, loss weights) at tiny widths.

        16x16 sub-images with 2-pixel patches give an 8x8 patch grid, 16
        queries and 4 emitted tokens per sub-image.
        """
        return RunConfig(
            crop=dataclasses.replace(self.crop, l=3, n=4, k=min(self.crop.k, 3), H=16, W=16, p=2),
            encoder=EncoderConfig(depth=4, dim=8, heads=2, tap_layers=(1, 2, 3, 4), patch=2,
                                  channels=self.encoder.channels, mlp_ratio=2),
            resampler=dataclasses.replace(self.resampler, dim=8, heads=2, queries_per_subimage=16,
                                          llm_dim=8, ffn_mult=2),
            routing=self.routing,
            losses=self.losses,
            llm=dataclasses.replace(self.llm, dim=8, heads=2, ffn_mult=2, max_positions=256,
                                    lora_rank=2, lora_init_std=0.1),
            seed=self.seed,
        )


ROUTING_NAMES = tuple(sorted(ROUTING_TABLES))
