import io
import json

import numpy as np
import pytest
from PIL import Image

from texthawk_kit.cli import run
from texthawk_kit.config import RunConfig
from texthawk_kit.packing import load_pack


def call(*argv):
    buf = io.StringIO()
    code = run(list(argv), buf)
    return code, [json.loads(line) for line in buf.getvalue().splitlines()]


def test_grid_select():
    code, rows = call("grid-select", "--shape", "1120x896", "--shape", "224x448")
    assert code == 0
    assert [r["grid"] for r in rows] == [[5, 4], [1, 2]]


def test_token_budget_document():
    code, [row] = call("token-budget", "--shape", "1120x896")
    assert code == 0
    assert (row["raw_tokens"], row["emitted_tokens"], row["ratio_resa"], row["ratio_resample_only"]) == (5120, 320, 16, 4)


def test_forward_png_and_determinism(tmp_path):
    img = (np.random.default_rng(0).random((40, 24, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "doc.png")
    toy = tmp_path / "toy.json"
    RunConfig().toy().save(toy)
    a = io.StringIO()
    b = io.StringIO()
    assert run(["forward", "--image", str(tmp_path / "doc.png"), "--config", str(toy)], a) == 0
    assert run(["forward", "--image", str(tmp_path / "doc.png"), "--config", str(toy)], b) == 0
    assert a.getvalue() == b.getvalue()
    recs = [json.loads(line) for line in a.getvalue().splitlines()]
    head = recs[0]
    assert head["emitted_tokens"] * 16 == head["raw_tokens"]
    assert all(r["ok"] for r in recs if r["kind"] == "check")
    c = io.StringIO()
    run(["forward", "--image", str(tmp_path / "doc.png"), "--config", str(toy), "--seed", "5"], c)
    assert c.getvalue() != a.getvalue()


def test_pack_command(tmp_path):
    data = tmp_path / "d.jsonl"
    recs = [
        {"turns": [{"instruction": "<image>where is it", "response": "at <box>"}],
         "boxes": [{"x0": 0.1, "y0": 0.1, "x1": 0.4, "y1": 0.5}]},
        {"turns": [{"instruction": "hi", "response": "hello"}]},
        {"turns": [{"instruction": "q", "response": "a"}, {"instruction": "q2", "response": "b"}]},
    ]
    data.write_text("\n".join(json.dumps(r) for r in recs) + "\n")
    code, rows = call("pack", "--dataset", str(data), "--out", str(tmp_path / "out"), "--max-len", "64")
    assert code == 0
    assert sorted(sum((r["samples"] for r in rows), [])) == [0, 1, 2]
    assert (tmp_path / "out" / "vocab.json").exists()
    p = load_pack(tmp_path / "out" / "pack00000")
    assert p.max_len == 64


def test_pack_bad_input(tmp_path):
    data = tmp_path / "d.jsonl"
    data.write_text('{"turns": [{"instruction": "x", "response": "<box>"}]}\n')
    assert call("pack", "--dataset", str(data), "--out", str(tmp_path / "o"), "--max-len", "64")[0] == 2
    assert call("pack", "--dataset", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o"))[0] == 2


def test_codec_commands():
    code, [enc] = call("codec", "encode", "--box", '{"x0": 0, "y0": 0, "x1": 1, "y1": 1}')
    assert code == 0 and enc["token_count"] == 7 and enc["plain_text_token_count"] == 25
    code, [dec] = call("codec", "decode", "--tokens", json.dumps(enc["tokens"]))
    assert code == 0 and dec == {"x0": 0.0005, "y0": 0.0005, "x1": 0.9995, "y1": 0.9995}
    code, [dec] = call("codec", "decode", "--tokens", json.dumps(enc["tokens"]), "--head", "[0.1,0.2,0.3,0.4]")
    assert dec == {"x0": 0.1, "y0": 0.2, "x1": 0.3, "y1": 0.4}
    assert call("codec", "decode", "--tokens", "[6, 103, 7]")[0] == 2
    assert call("codec", "encode", "--box", '{"x0": 2, "y0": 0, "x1": 1, "y1": 1}')[0] == 2


@pytest.mark.parametrize("table", ["R1", "qpn", "spe"])
def test_ablate(table):
    code, rows = call("ablate", "--table", table)
    assert code == 0 and rows


def test_usage_errors(tmp_path):
    assert call("nope")[0] == 2
    assert call("grid-select", "--shape", "12by3")[0] == 2
    assert call("ablate", "--table", "R9")[0] == 2
    bad = tmp_path / "c.json"
    bad.write_text('{"routing": [1, 2]}')
    assert call("token-budget", "--shape", "10x10", "--config", str(bad))[0] == 2
    assert call("forward", "--image", str(tmp_path / "none.png"))[0] == 2


def test_vocab_command(tmp_path):
    code, [row] = call("vocab", "--out", str(tmp_path / "v.json"))
    assert code == 0 and row["size"] == 1103
