"""Checks shared by the CLI and the test suite: gradient checks, stage
reachability, query-proposal contract and token-count laws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocab as V
from .config import RunConfig
from .cropping import Grid
from .grounding.codec import BBox, encode_bbox
from .numeric.gradcheck import finite_diff_grad, relative_error
from .numeric.rng import Rng
from .numeric.tensor import Tensor
from .packing import PackedBatch, Turn, format_conversation, pack, packed_lm_loss, single
from .pipeline import TextHawk
from .resampler.model import NUM_STAGES, Resampler

GRAD_TOL = 1e-3
FD_EPS = 1e-6


def param_group(name: str) -> str:
    if name.startswith("resampler.spe_"):
        return "spe.scale" if name.endswith("scale") else "spe.endpoints"
    if name.startswith("resampler.qpn."):
        return "qpn"
    if name == "resampler.queries":
        return "learned_queries"
    if name == "resampler.query_pos":
        return "query_pos"
    if name.startswith("resampler.layers."):
        return "resampler.layer" + name.split(".")[2]
    if name.startswith("resampler.proj."):
        return "rearrange_proj"
    if name.startswith("resampler."):
        return "resampler.norm"
    if name.startswith("llm.") and ".lora_" in name:
        return "llm.lora"
    if name in ("llm.tok_embed", "llm.pos_embed"):
        return "llm.embed"
    if name.startswith("llm.blocks."):
        return "llm.blocks"
    if name.startswith("llm."):
        return "llm.output"
    if name.startswith("det_head."):
        return "det_head"
    return name.split(".")[0]


def toy_batch(cfg: RunConfig, image_tokens: int) -> PackedBatch:
    """Two packed conversations: one with an image and a box, one text-only with a box."""
    b1, b2 = BBox(0.12, 0.2, 0.55, 0.71), BBox(0.3, 0.05, 0.9, 0.4)
    s1 = format_conversation([Turn([V.IMAGE] * image_tokens + V.tokenize("find it"),
                                   V.tokenize("at ") + encode_bbox(b1), list(b1.as_tuple()))])
    s2 = format_conversation([Turn(V.tokenize("hi"), V.tokenize("ok")),
                              Turn(V.tokenize("box?"), encode_bbox(b2), list(b2.as_tuple()))])
    return pack([s1, s2], len(s1) + len(s2) + 3, cfg.losses)[0]


@dataclass
class GroupResult:
    objective: str
    group: str
    rel_error: float
    analytic_norm: float
    coords: int

    @property
    def passed(self) -> bool:
        return self.rel_error <= GRAD_TOL


def gradcheck(cfg: RunConfig, coords_per_group: int = 6, seed: int | None = None,
              groups: set[str] | None = None) -> list[GroupResult]:
    """Analytic vs central-difference gradients, in float64, on the toy-width model.

    Objectives: lm, box and total loss. Per parameter group, half the probed
    coordinates are the largest analytic entries and half are random.
    ``groups`` restricts the check to the named parameter groups.
    """
    toy = cfg.toy()
    seed = toy.seed if seed is None else seed
    model = TextHawk(toy).astype(np.float64)
    rng = Rng(seed).child("gradcheck")
    image = rng.child("image").uniform((toy.crop.H, 2 * toy.crop.W, toy.encoder.channels))
    choice, tiles, feats = model.encode_image(image)
    positions = [(t.row, t.col) for t in tiles]
    n_tokens = choice.grid.area * toy.crop.patches_per_subimage // 16
    batch = toy_batch(toy, n_tokens)

    def objective(name: str) -> Tensor:
        out = model.resampler.resample_and_rearrange(feats, positions, choice.grid)
        return model.losses(batch, out.tokens)[name]

    by_group: dict[str, list[tuple[str, Tensor]]] = {}
    for n, p in model.trainable():
        g = param_group(n)
        if groups is None or g in groups:
            by_group.setdefault(g, []).append((n, p))

    results = []
    gen = rng.child("coords").generator()
    for obj in ("lm", "box", "total"):
        model.zero_grad()
        objective(obj).backward()
        for group, members in by_group.items():
            analytic, numeric = [], []
            picks = _pick_coords(members, coords_per_group, gen)
            for (name, p), idx in picks:
                a = 0.0 if p.grad is None else float(p.grad[idx])
                num = finite_diff_grad(lambda _: objective(obj).item(), p.data, FD_EPS, [idx])[idx]
                analytic.append(a)
                numeric.append(num)
            results.append(GroupResult(obj, group, relative_error(analytic, numeric),
                                       float(np.linalg.norm(analytic)), len(picks)))
    return results


def _pick_coords(members, k: int, gen: np.random.Generator):
    picks = []
    flat = [(n, p) for n, p in members]
    # largest |grad| entries across the group
    cands = []
    for n, p in flat:
        g = np.zeros(p.shape) if p.grad is None else np.abs(p.grad)
        top = np.argsort(g.ravel())[::-1][:k]
        cands += [(g.ravel()[i], n, p, np.unravel_index(i, p.shape)) for i in top]
    cands.sort(key=lambda c: -c[0])
    for _, n, p, idx in cands[: (k + 1) // 2]:
        picks.append(((n, p), idx))
    for _ in range(k // 2):
        n, p = flat[gen.integers(len(flat))]
        idx = np.unravel_index(gen.integers(p.size), p.shape)
        picks.append(((n, p), idx))
    return picks


def dead_parameters(model: TextHawk, loss: Tensor, prefix: str = "resampler.") -> list[str]:
    model.zero_grad()
    loss.backward()
    return [n for n, p in model.trainable()
            if n.startswith(prefix) and (p.grad is None or not np.any(p.grad))]


# ---- multi-level routing ------------------------------------------------------

def random_stages(n: int, rows: int, cols: int, dim: int, seed: int, dtype=np.float32) -> list[Tensor]:
    rng = Rng(seed).child("stages")
    return [Tensor(rng.child(str(s)).normal((n, rows * cols, dim), dtype=dtype)) for s in range(NUM_STAGES)]


def stage_sensitivity(resampler: Resampler, stages: list[Tensor], rows: int, cols: int,
                      positions, grid: Grid, seed: int = 1) -> dict:
    """Max |change| of each layer output and of the emitted tokens when one stage is perturbed."""
    base = resampler.forward(stages, rows, cols, positions, grid)
    noise = Rng(seed).child("perturb")
    report = {}
    for s in range(NUM_STAGES):
        pert = list(stages)
        pert[s] = Tensor(stages[s].data + noise.child(str(s)).normal(stages[s].shape, dtype=stages[s].dtype))
        out = resampler.forward(pert, rows, cols, positions, grid)
        report[s] = {
            "tokens": float(np.abs(out.tokens.data - base.tokens.data).max()),
            "layers": [float(np.abs(a.data - b.data).max()) for a, b in zip(out.layers, base.layers)],
        }
    return report


def reachability_ok(resampler: Resampler, sensitivity: dict) -> bool:
    reach = resampler.reachable_stages()
    return all((sensitivity[s]["tokens"] > 0) == (s in reach) for s in range(NUM_STAGES))


# ---- query proposal -------------------------------------------------------------

def query_dependence(resampler: Resampler, rows: int, cols: int, dim: int, seed: int = 0) -> dict:
    """Initial query sets for two sub-images with different content."""
    stages = random_stages(2, rows, cols, dim, seed, resampler.proj.weight.dtype)
    q = resampler.initial_queries(stages, rows, cols).data
    if q.ndim == 2:
        q = np.broadcast_to(q, (2,) + q.shape)
    return {
        "queries": int(q.shape[1]),
        "tokens": rows * cols,
        "max_query_diff": float(np.abs(q[0] - q[1]).max()),
    }


# ---- packing ----------------------------------------------------------------------

def random_sample(gen: np.random.Generator, max_turns: int = 2, box_prob: float = 0.5):
    """Random character-level conversation; some responses carry an encoded box."""
    turns = []
    for _ in range(int(gen.integers(1, max_turns + 1))):
        instr = [int(t) for t in gen.integers(V.ASCII_BASE, V.BASE_SIZE, gen.integers(1, 8))]
        resp = [int(t) for t in gen.integers(V.ASCII_BASE, V.BASE_SIZE, gen.integers(1, 6))]
        values = []
        if gen.random() < box_prob:
            x0, x1 = np.sort(gen.random(2))
            y0, y1 = np.sort(gen.random(2))
            b = BBox(float(x0), float(y0), float(x1), float(y1))
            resp += encode_bbox(b)
            values = list(b.as_tuple())
        turns.append(Turn(instr, resp, values))
    return format_conversation(turns)


def packing_equivalence(model: TextHawk, samples, max_len: int | None = None) -> dict:
    """Packed vs one-by-one forwards: max |logit diff| per span and loss mismatch."""
    max_len = max_len or sum(len(s) for s in samples)
    packs = pack(samples, max_len, model.cfg.losses)
    if len(packs) != 1:
        raise ValueError("samples do not fit one pack")
    batch = packs[0]
    logits = model.forward(batch).logits.data
    worst = 0.0
    num = den = 0.0
    for (s, e), sid in zip(batch.sample_spans, batch.sample_ids):
        solo = single(samples[sid], model.cfg.losses)
        ref = model.forward(solo).logits
        worst = max(worst, float(np.abs(logits[s:e] - ref.data).max()))
        w = solo.loss_weights[1:].sum()
        num += packed_lm_loss(ref, solo).item() * w
        den += w
    packed_loss = packed_lm_loss(model.forward(batch).logits, batch).item()
    return {"max_logit_diff": worst, "loss_diff": abs(packed_loss - num / den), "batch": batch}
