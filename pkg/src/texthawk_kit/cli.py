"""``texthawk-kit`` command line.

Every command prints JSON lines (sorted keys) to stdout. Exit status is 0 on
success, 1 when an invariant check fails and 2 on usage or input errors.
``TEXTHAWK_KIT_THREADS`` caps the number of encoder threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import vocab as V
from .config import ROUTING_NAMES, ConfigError, RunConfig
from .cropping import Grid, ImageShape, select_grid, shortlist
from .grounding.codec import BBox, CodecError, decode_bbox, encode_bbox, render_bbox_text
from .numeric.rng import Rng
from .numeric.tensor import Tensor
from .packing import pack, read_jsonl, record_to_sample, save_pack
from .pipeline import COMPRESSION_RATIO, TextHawk, token_budget
from .resampler.model import NUM_STAGES, Resampler
from .verify import (
    gradcheck,
    query_dependence,
    random_stages,
    reachability_ok,
    stage_sensitivity,
)

OK, INVARIANT_FAILURE, USAGE_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


def emit(record: dict, out=None) -> None:
    out = out or sys.stdout
    out.write(json.dumps(record, sort_keys=True) + "\n")


def threads() -> int:
    raw = os.environ.get("TEXTHAWK_KIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"TEXTHAWK_KIT_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(n, os.cpu_count() or 1))


def parse_shape(text: str) -> ImageShape:
    m = re.fullmatch(r"\s*(\d+)\s*[xX,]\s*(\d+)\s*", text)
    if not m:
        raise UsageError(f"shape must look like HxW, got {text!r}")
    try:
        return ImageShape(int(m.group(1)), int(m.group(2)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def load_png(path) -> np.ndarray:
    """RGB image as float32 in [0, 1], shape (H, W, 3)."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise UsageError(f"cannot read image {path}: {exc}") from exc


def synthetic_image(shape: ImageShape, seed: int) -> np.ndarray:
    return Rng(seed).child("synthetic_image").uniform((shape.h, shape.w, 3)).astype(np.float32)


def digest(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


# ---- commands ---------------------------------------------------------------------

def cmd_grid_select(cfg: RunConfig, shapes: list[ImageShape], out=None) -> int:
    for v in shapes:
        choice = select_grid(v, cfg.crop)
        emit({
            "height": v.h,
            "width": v.w,
            "grid": [choice.grid.r, choice.grid.c],
            "s_r": choice.s_r,
            "s_s": choice.s_s,
            "s": choice.s,
            "shortlist": [[c.grid.r, c.grid.c] for c in shortlist(v, cfg.crop)],
        }, out)
    return OK


def cmd_token_budget(cfg: RunConfig, shapes: list[ImageShape], out=None) -> int:
    status = OK
    for v in shapes:
        row = token_budget(v, cfg.crop, cfg.resampler)
        row["compression_law"] = row["emitted_tokens"] * COMPRESSION_RATIO == row["raw_tokens"]
        if not row["compression_law"]:
            status = INVARIANT_FAILURE
        emit(row, out)
    return status


def cmd_forward(cfg: RunConfig, image: np.ndarray, out=None) -> int:
    """Encoder + resampler on one image: token counts, stage sensitivities, checks."""
    model = TextHawk(cfg)
    vis = model.visual_tokens(image, threads())
    grid = vis.choice.grid
    fm = vis.features[0][0]
    n = grid.area
    tokens = vis.tokens.data
    emitted = tokens.shape[0]
    raw = n * fm.rows * fm.cols
    emit({
        "kind": "forward",
        "height": int(image.shape[0]),
        "width": int(image.shape[1]),
        "grid": [grid.r, grid.c],
        "sub_images": n,
        "raw_tokens": raw,
        "resampled_tokens": int(vis.resampler.resampled.shape[0] * vis.resampler.resampled.shape[1]),
        "emitted_tokens": emitted,
        "token_dim": int(tokens.shape[1]),
        "token_mean": float(tokens.mean()),
        "token_std": float(tokens.std()),
        "token_sha256": digest(tokens),
        "routing": list(cfg.routing.stages),
        "use_qpn": cfg.resampler.use_qpn,
    }, out)

    stages = [Tensor(np.stack([f[s].features.data for f in vis.features])) for s in range(NUM_STAGES)]
    positions = [(t.row, t.col) for t in vis.tiles]
    sens = stage_sensitivity(model.resampler, stages, fm.rows, fm.cols, positions, grid, cfg.seed)
    reach = model.resampler.reachable_stages()
    for s in range(NUM_STAGES):
        emit({
            "kind": "stage_sensitivity",
            "stage": s,
            "in_routing": s in reach,
            "max_token_change": sens[s]["tokens"],
            "first_layer_changed": next((i for i, d in enumerate(sens[s]["layers"]) if d > 0), None),
        }, out)

    checks = {
        "compression_law": emitted * COMPRESSION_RATIO == raw,
        "reachability": reachability_ok(model.resampler, sens),
        "finite_tokens": bool(np.all(np.isfinite(tokens))),
    }
    for name, ok in checks.items():
        emit({"kind": "check", "name": name, "ok": ok}, out)
    return OK if all(checks.values()) else INVARIANT_FAILURE


def cmd_pack(cfg: RunConfig, dataset: Path, out_dir: Path, max_len: int, image_tokens: int | None,
             out=None) -> int:
    try:
        records = read_jsonl(dataset)
        if image_tokens is None:
            image_tokens = cfg.resampler.queries_per_subimage // cfg.resampler.rearrange_group
        samples = [record_to_sample(r, image_tokens) for r in records]
        packs = pack(samples, max_len, cfg.losses, seed=cfg.seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{dataset}: {exc}") from exc
    out_dir.mkdir(parents=True, exist_ok=True)
    V.write_manifest(out_dir / "vocab.json")
    status = OK
    for i, p in enumerate(packs):
        save_pack(p, out_dir / f"pack{i:05d}")
        covered = sum(e - s for s, e in p.sample_spans)
        ok = covered == p.used and bool(np.all(p.loss_weights[p.used:] == 0))
        status = status if ok else INVARIANT_FAILURE
        emit({
            "pack": i,
            "samples": p.sample_ids,
            "spans": [list(s) for s in p.sample_spans],
            "used": p.used,
            "max_len": p.max_len,
            "coord_positions": len(p.coord_positions),
            "ok": ok,
        }, out)
    return status


def cmd_gradcheck(cfg: RunConfig, coords: int, out=None) -> int:
    results = gradcheck(cfg, coords)
    for r in results:
        emit({
            "objective": r.objective,
            "group": r.group,
            "rel_error": r.rel_error,
            "analytic_norm": r.analytic_norm,
            "coords": r.coords,
            "pass": r.passed,
        }, out)
    return OK if all(r.passed for r in results) else INVARIANT_FAILURE


def cmd_ablate(cfg: RunConfig, table: str, out=None) -> int:
    """Runs the configurations of one ablation family on the same synthetic stages."""
    toy = cfg.toy()
    rows, cols = toy.crop.H // toy.crop.p, toy.crop.W // toy.crop.p
    grid = Grid(1, 2)
    positions = [(0, 0), (0, 1)]
    stages = random_stages(2, rows, cols, toy.resampler.dim, toy.seed)
    status = OK

    def run(res_cfg, routing):
        res = Resampler(res_cfg, routing, toy.seed)
        return res, res.forward(stages, rows, cols, positions, grid)

    if table == "routing" or table in ROUTING_NAMES:
        for name in (ROUTING_NAMES if table == "routing" else [table]):
            rc = toy.with_routing(name)
            res, o = run(rc.resampler, rc.routing)
            sens = stage_sensitivity(res, stages, rows, cols, positions, grid, toy.seed)
            ok = reachability_ok(res, sens)
            status = status if ok else INVARIANT_FAILURE
            emit({
                "ablation": "routing",
                "config": name,
                "routing": list(rc.routing.stages),
                "reachable_stages": sorted(res.reachable_stages()),
                "sensitive_stages": [s for s in range(NUM_STAGES) if sens[s]["tokens"] > 0],
                "emitted_tokens": int(o.tokens.shape[0]),
                "token_std": float(o.tokens.data.std()),
                "reachability_ok": ok,
            }, out)
    elif table == "qpn":
        for use in (False, True):
            rcfg = dataclasses.replace(toy.resampler, use_qpn=use)
            res, o = run(rcfg, toy.routing)
            q = query_dependence(res, rows, cols, rcfg.dim, toy.seed)
            ok = (q["max_query_diff"] > 0) == use and q["queries"] * 4 == q["tokens"]
            status = status if ok else INVARIANT_FAILURE
            emit({
                "ablation": "qpn",
                "config": "qpn" if use else "learned_queries",
                "queries": q["queries"],
                "patch_tokens": q["tokens"],
                "input_dependent_queries": q["max_query_diff"] > 0,
                "trainable_parameters": int(sum(p.size for _, p in res.trainable())),
                "emitted_tokens": int(o.tokens.shape[0]),
                "ok": ok,
            }, out)
    elif table == "spe":
        for gran in ("none", "cell", "patch"):
            rcfg = dataclasses.replace(toy.resampler, spe_granularity=gran)
            res, o = run(rcfg, toy.routing)
            emb = res.spe(positions, grid, rows, cols)
            spread = 0.0 if emb is None else float(np.abs(emb.data - emb.data[:, :1]).max())
            emit({
                "ablation": "spe",
                "config": gran,
                "within_subimage_variation": spread,
                "between_subimage_difference": 0.0 if emb is None else float(np.abs(emb.data[0] - emb.data[1]).max()),
                "emitted_tokens": int(o.tokens.shape[0]),
                "token_std": float(o.tokens.data.std()),
            }, out)
    else:
        raise UsageError(f"unknown ablation table {table!r}")
    return status


def cmd_codec(args, out=None) -> int:
    vocab = V.CoordVocab()
    try:
        if args.codec_cmd == "encode":
            raw = json.loads(args.box)
            boxes = raw if isinstance(raw, list) and raw and isinstance(raw[0], (dict, list)) else [raw]
            for b in map(BBox.from_json, boxes):
                toks = encode_bbox(b, vocab)
                emit({"box": b.to_json(), "tokens": toks, "token_count": len(toks),
                      "plain_text_token_count": len(render_bbox_text(b, vocab))}, out)
        else:
            toks = json.loads(args.tokens)
            head = json.loads(args.head) if args.head else None
            b = decode_bbox([int(t) for t in toks], vocab, head)
            emit(b.to_json(), out)
    except (json.JSONDecodeError, CodecError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return OK


# ---- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config JSON; defaults are used when omitted")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = argparse.ArgumentParser(prog="texthawk-kit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("grid-select", parents=[common], help="grid chosen for image shapes")
    g.add_argument("--shape", action="append", required=True, help="HxW, repeatable")

    t = sub.add_parser("token-budget", parents=[common], help="raw/resampled/emitted token counts")
    t.add_argument("--shape", action="append", required=True, help="HxW, repeatable")

    f = sub.add_parser("forward", parents=[common], help="encoder + resampler on one image")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", type=Path, help="PNG file")
    src.add_argument("--synthetic", help="HxW seeded random image")

    k = sub.add_parser("pack", parents=[common], help="pack a JSON-lines conversation dataset")
    k.add_argument("--dataset", type=Path, required=True)
    k.add_argument("--out", type=Path, required=True)
    k.add_argument("--max-len", type=int, default=2048)
    k.add_argument("--image-tokens", type=int, help="placeholders per <image> tag")

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    c.add_argument("--coords", type=int, default=6, help="coordinates probed per parameter group")

    a = sub.add_parser("ablate", parents=[common], help="ablation configurations")
    a.add_argument("--table", required=True, help="R1..R5, routing, qpn or spe")

    d = sub.add_parser("codec", parents=[common], help="box <-> coordinate tokens")
    dsub = d.add_subparsers(dest="codec_cmd", required=True)
    e = dsub.add_parser("encode")
    e.add_argument("--box", required=True, help='JSON {"x0":..,"y0":..,"x1":..,"y1":..} or a list of them')
    de = dsub.add_parser("decode")
    de.add_argument("--tokens", required=True, help="JSON list of 7 token ids")
    de.add_argument("--head", help="JSON list of 4 detection-head outputs")

    v = sub.add_parser("vocab", parents=[common], help="write the vocabulary manifest")
    v.add_argument("--out", type=Path, required=True)
    return p


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def run(argv=None, out=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else OK
    try:
        cfg = load_config(args)
        if args.cmd == "grid-select":
            return cmd_grid_select(cfg, [parse_shape(s) for s in args.shape], out)
        if args.cmd == "token-budget":
            return cmd_token_budget(cfg, [parse_shape(s) for s in args.shape], out)
        if args.cmd == "forward":
            image = load_png(args.image) if args.image else synthetic_image(parse_shape(args.synthetic), cfg.seed)
            return cmd_forward(cfg, image, out)
        if args.cmd == "pack":
            if args.max_len < 1:
                raise UsageError("--max-len must be positive")
            return cmd_pack(cfg, args.dataset, args.out, args.max_len, args.image_tokens, out)
        if args.cmd == "gradcheck":
            return cmd_gradcheck(cfg, args.coords, out)
        if args.cmd == "ablate":
            return cmd_ablate(cfg, args.table, out)
        if args.cmd == "codec":
            return cmd_codec(args, out)
        if args.cmd == "vocab":
            V.write_manifest(args.out)
            emit({"manifest": str(args.out), **V.manifest()}, out)
            return OK
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"texthawk-kit: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    return USAGE_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
