"""Bounding boxes as 7 tokens: open, x0, y0, separator, x1, y1, close.

Coordinates are normalised to [0, 1], quantised into ``bins`` equal bins
(``floor(v * bins)``, with v = 1 clamped into the last bin) and decoded at
bin centres. A plain-text baseline renders each coordinate with three
decimals, character by character, for 2 + 4*5 + 3 = 25 tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..vocab import CoordVocab, char_id


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise CodecError(f"coordinates must lie in [0, 1], got {vals}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise CodecError(f"box corners out of order: {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def to_json(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    @classmethod
    def from_json(cls, obj) -> "BBox":
        if isinstance(obj, dict):
            return cls(*(float(obj[k]) for k in ("x0", "y0", "x1", "y1")))
        return cls(*(float(v) for v in obj))


def coord_bin(v: float, bins: int) -> int:
    return min(int(math.floor(v * bins)), bins - 1)


def bin_center(i: int, bins: int) -> float:
    return (i + 0.5) / bins


def encode_bbox(b: BBox, vocab: CoordVocab = CoordVocab()) -> list[int]:
    tok = [vocab.coord_token(coord_bin(v, vocab.bins)) for v in b.as_tuple()]
    return [vocab.trigger_open, tok[0], tok[1], vocab.separator, tok[2], tok[3], vocab.trigger_close]


def coordinate_slots(tokens: Sequence[int], vocab: CoordVocab = CoordVocab()) -> list[int]:
    """Offsets of the four coordinate tokens inside a well-formed 7-token box."""
    _check_grammar(tokens, vocab)
    return [1, 2, 4, 5]


def _check_grammar(tokens: Sequence[int], vocab: CoordVocab) -> None:
    tokens = list(tokens)
    if not tokens or tokens[0] != vocab.trigger_open:
        raise CodecError("box must start with the open trigger")
    if tokens[-1] != vocab.trigger_close:
        raise CodecError("box must end with the close trigger")
    n_coord = sum(vocab.is_coord(t) for t in tokens)
    if len(tokens) != 7 or n_coord != 4:
        raise CodecError(f"box needs 4 coordinates in 7 tokens, got {n_coord} in {len(tokens)}")
    if tokens[3] != vocab.separator:
        raise CodecError("missing separator between the two corners")
    if not all(vocab.is_coord(tokens[i]) for i in (1, 2, 4, 5)):
        raise CodecError("coordinate tokens in the wrong slots")


def decode_bbox(tokens: Sequence[int], vocab: CoordVocab = CoordVocab(),
                head_outputs: Sequence[float] | None = None) -> BBox:
    """Bin centres by default; detection-head scalars replace them when given."""
    _check_grammar(tokens, vocab)
    if head_outputs is not None:
        if len(head_outputs) != 4:
            raise CodecError("need exactly four head outputs")
        return BBox(*(float(v) for v in head_outputs))
    return BBox(*(bin_center(vocab.bin_of(tokens[i]), vocab.bins) for i in (1, 2, 4, 5)))


def render_bbox_text(b: BBox, vocab: CoordVocab = CoordVocab()) -> list[int]:
    """Plain-text baseline: open, ``0.123,0.456,0.789,1.000``, close."""
    text = ",".join(f"{v:.3f}" for v in b.as_tuple())
    return [vocab.trigger_open] + [char_id(ch) for ch in text] + [vocab.trigger_close]
