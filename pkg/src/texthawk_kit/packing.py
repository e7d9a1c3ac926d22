"""Conversation formatting and packing of samples into mutually invisible spans.

Each turn is serialised as::

    User: <s> instruction </s> Assistant: <s> response </s>

The loss covers the response tokens and the closing ``</s>`` of each
response. Packing is seeded shuffling followed by first-fit into
``max_len`` slots; samples are never split. Position ids restart at 0 in
every span, and attention is causal within a span only.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import vocab as V
from .grounding.codec import BBox, bin_center, encode_bbox
from .grounding.losses import LossWeights, token_weights, weighted_nll
from .numeric import io as tio
from .numeric.rng import Rng
from .numeric.tensor import Tensor


@dataclass
class Turn:
    instruction_tokens: list[int]
    response_tokens: list[int]
    coord_values: list[float] | None = None  # continuous targets for the response's coordinate tokens

    def __post_init__(self):
        if not self.response_tokens:
            raise ValueError("a turn needs a non-empty response")


@dataclass
class Sample:
    tokens: np.ndarray
    response_mask: np.ndarray
    coord_mask: np.ndarray
    coord_targets: np.ndarray  # one value per True in coord_mask, in order

    def __len__(self) -> int:
        return len(self.tokens)

    def loss_weights(self, weights: LossWeights = LossWeights()) -> np.ndarray:
        return token_weights(self.response_mask, self.coord_mask, weights)


def format_conversation(turns: Sequence[Turn], vocab: V.CoordVocab = V.CoordVocab()) -> Sample:
    if not turns:
        raise ValueError("conversation has no turns")
    tokens: list[int] = []
    resp: list[bool] = []
    targets: list[float] = []
    for turn in turns:
        head = [V.USER, V.BOS, *turn.instruction_tokens, V.EOS, V.ASSISTANT, V.BOS]
        tokens += head
        resp += [False] * len(head)
        tokens += list(turn.response_tokens) + [V.EOS]
        resp += [True] * (len(turn.response_tokens) + 1)
        coords = [t for t in turn.response_tokens if vocab.is_coord(t)]
        if turn.coord_values is None:
            targets += [bin_center(vocab.bin_of(t), vocab.bins) for t in coords]
        else:
            if len(turn.coord_values) != len(coords):
                raise ValueError(f"{len(turn.coord_values)} coordinate values for {len(coords)} coordinate tokens")
            targets += [float(v) for v in turn.coord_values]
    toks = np.asarray(tokens, np.int64)
    resp_mask = np.asarray(resp, bool)
    coord_mask = resp_mask & (toks >= vocab.base) & (toks < vocab.base + vocab.bins)
    return Sample(toks, resp_mask, coord_mask, np.asarray(targets, np.float64))


@dataclass
class PackedBatch:
    tokens: np.ndarray
    sample_spans: list[tuple[int, int]]
    sample_ids: list[int]
    loss_weights: np.ndarray
    coord_positions: np.ndarray
    coord_targets: np.ndarray
    position_indices: np.ndarray

    @property
    def max_len(self) -> int:
        return len(self.tokens)

    @property
    def used(self) -> int:
        return self.sample_spans[-1][1] if self.sample_spans else 0

    @property
    def visibility(self) -> list[tuple[int, int]]:
        """Span list; token i may see token j iff both lie in one span and j <= i."""
        return list(self.sample_spans)

    def attention_mask(self) -> np.ndarray:
        return visibility_mask(self.sample_spans, self.max_len)

    def span_of(self, position: int) -> int | None:
        for k, (s, e) in enumerate(self.sample_spans):
            if s <= position < e:
                return k
        return None


def visibility_mask(spans: Sequence[tuple[int, int]], length: int) -> np.ndarray:
    """Block-diagonal causal mask; positions outside every span see only themselves."""
    mask = np.zeros((length, length), bool)
    covered = np.zeros(length, bool)
    for s, e in spans:
        mask[s:e, s:e] = np.tril(np.ones((e - s, e - s), bool))
        covered[s:e] = True
    idx = np.flatnonzero(~covered)
    mask[idx, idx] = True
    return mask


def pack(samples: Sequence[Sample], max_len: int, weights: LossWeights = LossWeights(),
         seed: int | None = None) -> list[PackedBatch]:
    """First-fit packing, optionally after a seeded shuffle of the sample order."""
    for i, s in enumerate(samples):
        if len(s) > max_len:
            raise ValueError(f"sample {i} has {len(s)} tokens, more than max_len={max_len}")
    order = list(range(len(samples)))
    if seed is not None:
        order = [int(i) for i in Rng(seed).child("pack").generator().permutation(len(samples))]
    bins: list[list[int]] = []
    room: list[int] = []
    for i in order:
        n = len(samples[i])
        for b, free in enumerate(room):
            if n <= free:
                bins[b].append(i)
                room[b] -= n
                break
        else:
            bins.append([i])
            room.append(max_len - n)
    return [_assemble([samples[i] for i in members], members, max_len, weights) for members in bins]


def _assemble(members: list[Sample], ids: list[int], max_len: int, weights: LossWeights) -> PackedBatch:
    tokens = np.full(max_len, V.PAD, np.int64)
    lw = np.zeros(max_len, np.float64)
    pos = np.zeros(max_len, np.int64)
    spans, coord_pos, coord_tgt = [], [], []
    start = 0
    for s in members:
        end = start + len(s)
        tokens[start:end] = s.tokens
        w = s.loss_weights(weights)
        w[0] = 0.0  # the first token of a span has no in-span context to be predicted from
        lw[start:end] = w
        pos[start:end] = np.arange(len(s))
        coord_pos.extend(start + np.flatnonzero(s.coord_mask))
        coord_tgt.extend(s.coord_targets)
        spans.append((start, end))
        start = end
    return PackedBatch(tokens, spans, list(ids), lw, np.asarray(coord_pos, np.int64),
                       np.asarray(coord_tgt, np.float64), pos)


def single(sample: Sample, weights: LossWeights = LossWeights()) -> PackedBatch:
    """A one-sample, unpadded batch."""
    return _assemble([sample], [0], len(sample), weights)


# ---- losses on packed batches ---------------------------------------------

def packed_lm_loss(logits: Tensor, batch: PackedBatch) -> Tensor:
    """Next-token loss: ``logits[p-1]`` scores ``tokens[p]`` with weight ``loss_weights[p]``."""
    return weighted_nll(logits[:-1], batch.tokens[1:], batch.loss_weights[1:])


def predictor_positions(batch: PackedBatch) -> np.ndarray:
    """Hidden-state rows that emit each coordinate token (one step before it)."""
    return batch.coord_positions - 1


# ---- dataset / file formats -----------------------------------------------

_BOX_TAG = re.compile(r"(<box>)")


def record_to_sample(record: dict, image_tokens: int = 16, vocab: V.CoordVocab = V.CoordVocab()) -> Sample:
    """JSON conversation record -> Sample.

    ``<image>`` in an instruction expands to ``image_tokens`` placeholders;
    each ``<box>`` in a response consumes the next entry of ``boxes``.
    """
    boxes = [BBox.from_json(b) for b in record.get("boxes", [])]
    turns = []
    used = 0
    for t in record["turns"]:
        instr = []
        for tid in V.tokenize(t["instruction"]):
            instr.extend([V.IMAGE] * image_tokens if tid == V.IMAGE else [tid])
        resp, values = [], []
        for part in _BOX_TAG.split(t["response"]):
            if part == "<box>":
                if used >= len(boxes):
                    raise ValueError("more <box> tags than boxes")
                b = boxes[used]
                used += 1
                resp += encode_bbox(b, vocab)
                values += list(b.as_tuple())
            else:
                resp += V.tokenize(part)
        turns.append(Turn(instr, resp, values))
    if used != len(boxes):
        raise ValueError(f"{len(boxes)} boxes but {used} <box> tags")
    return format_conversation(turns, vocab)


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def save_pack(batch: PackedBatch, directory) -> None:
    """Tensor files for the arrays plus ``visibility.json`` holding the span list."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tio.save(d / "tokens.tensor", batch.tokens)
    tio.save(d / "loss_weights.tensor", batch.loss_weights)
    tio.save(d / "position_indices.tensor", batch.position_indices)
    tio.save(d / "spans.tensor", np.asarray(batch.sample_spans, np.float32).reshape(-1, 2))
    tio.save(d / "coord_positions.tensor", batch.coord_positions)
    tio.save(d / "coord_targets.tensor", batch.coord_targets)
    (d / "visibility.json").write_text(json.dumps(
        {"spans": [list(s) for s in batch.sample_spans], "sample_ids": batch.sample_ids,
         "max_len": batch.max_len}, sort_keys=True) + "\n")


def load_pack(directory) -> PackedBatch:
    d = Path(directory)
    meta = json.loads((d / "visibility.json").read_text())
    return PackedBatch(
        tokens=tio.load(d / "tokens.tensor").astype(np.int64),
        sample_spans=[tuple(s) for s in meta["spans"]],
        sample_ids=list(meta["sample_ids"]),
        loss_weights=tio.load(d / "loss_weights.tensor").astype(np.float64),
        coord_positions=tio.load(d / "coord_positions.tensor").astype(np.int64),
        coord_targets=tio.load(d / "coord_targets.tensor").astype(np.float64),
        position_indices=tio.load(d / "position_indices.tensor").astype(np.int64),
    )
