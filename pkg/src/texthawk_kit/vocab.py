"""Fixed toy vocabulary: specials, printable ASCII characters, coordinate bins.

Layout (ids):

====================  =============
pad                   0
``<s>`` / ``</s>``    1 / 2
``User:``             3
``Assistant:``        4
``<image>``           5
box open / close      6 / 7
ASCII 0x20..0x7e      8 .. 102
coordinate bins       103 .. 1102
====================  =============

The comma character doubles as the box separator.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

PAD = 0
BOS = 1
EOS = 2
USER = 3
ASSISTANT = 4
IMAGE = 5
BOX_OPEN = 6
BOX_CLOSE = 7
ASCII_BASE = 8
ASCII_FIRST, ASCII_LAST = 0x20, 0x7E
BASE_SIZE = ASCII_BASE + (ASCII_LAST - ASCII_FIRST + 1)

SPECIAL_NAMES = {
    PAD: "<pad>",
    BOS: "<s>",
    EOS: "</s>",
    USER: "User:",
    ASSISTANT: "Assistant:",
    IMAGE: "<image>",
    BOX_OPEN: "<box>",
    BOX_CLOSE: "</box>",
}

_TAG = re.compile(r"(<image>)")


def char_id(ch: str) -> int:
    o = ord(ch)
    if not ASCII_FIRST <= o <= ASCII_LAST:
        raise ValueError(f"character {ch!r} is outside the toy vocabulary")
    return ASCII_BASE + o - ASCII_FIRST


@dataclass(frozen=True)
class CoordVocab:
    bins: int = 1000
    base: int = BASE_SIZE
    trigger_open: int = BOX_OPEN
    trigger_close: int = BOX_CLOSE
    separator: int = ASCII_BASE + ord(",") - ASCII_FIRST

    @property
    def size(self) -> int:
        """Total vocabulary size, base plus coordinate tokens."""
        return self.base + self.bins

    def is_coord(self, token: int) -> bool:
        return self.base <= token < self.base + self.bins

    def coord_token(self, bin_index: int) -> int:
        if not 0 <= bin_index < self.bins:
            raise ValueError(f"bin {bin_index} out of range")
        return self.base + bin_index

    def bin_of(self, token: int) -> int:
        if not self.is_coord(token):
            raise ValueError(f"token {token} is not a coordinate token")
        return token - self.base


def tokenize(text: str) -> list[int]:
    """Character-level ids; the literal ``<image>`` becomes one image placeholder."""
    ids: list[int] = []
    for part in _TAG.split(text):
        if part == "<image>":
            ids.append(IMAGE)
        else:
            ids.extend(char_id(ch) for ch in part)
    return ids


def detokenize(ids, vocab: CoordVocab = CoordVocab()) -> str:
    out = []
    for t in ids:
        t = int(t)
        if t in SPECIAL_NAMES:
            out.append(SPECIAL_NAMES[t])
        elif ASCII_BASE <= t < BASE_SIZE:
            out.append(chr(t - ASCII_BASE + ASCII_FIRST))
        elif vocab.is_coord(t):
            out.append(f"<coord_{vocab.bin_of(t)}>")
        else:
            raise ValueError(f"unknown token id {t}")
    return "".join(out)


def manifest(vocab: CoordVocab = CoordVocab()) -> dict:
    return {
        "size": vocab.size,
        "specials": {name: tid for tid, name in SPECIAL_NAMES.items()},
        "ascii": {"first_id": ASCII_BASE, "last_id": BASE_SIZE - 1, "first_char": ASCII_FIRST},
        "coordinates": {"first_id": vocab.base, "last_id": vocab.base + vocab.bins - 1, "bins": vocab.bins},
        "separator": vocab.separator,
    }


def write_manifest(path, vocab: CoordVocab = CoordVocab()) -> None:
    Path(path).write_text(json.dumps(manifest(vocab), indent=2, sort_keys=True) + "\n")
