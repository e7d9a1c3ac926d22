import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texthawk_kit.cropping import (
    CropConfig,
    Grid,
    ImageShape,
    crop,
    grid_set,
    iou_origin_boxes,
    reassemble,
    resize_bilinear,
    score_grid,
    select_grid,
)
from oracles import exact_scores, oracle_select, raster_iou

CFG = CropConfig()


def test_iou_examples():
    assert iou_origin_boxes(4, 4, 4, 4) == 1.0
    assert iou_origin_boxes(2, 2, 4, 4) == 0.25
    assert iou_origin_boxes(3, 5, 4, 2) == pytest.approx(raster_iou(3, 5, 4, 2), abs=1e-15)
    with pytest.raises(ValueError):
        iou_origin_boxes(0, 1, 1, 1)


@settings(max_examples=100, deadline=None)
@given(*[st.integers(1, 30)] * 4)
def test_iou_matches_rasterization_and_is_symmetric(h1, w1, h2, w2):
    v = iou_origin_boxes(h1, w1, h2, w2)
    assert v == pytest.approx(raster_iou(h1, w1, h2, w2), abs=1e-12)
    assert v == iou_origin_boxes(h2, w2, h1, w1)
    assert 0.0 <= v <= 1.0


def test_score_grid_exact_fit():
    ch = score_grid(ImageShape(448, 448), Grid(2, 2), CFG)
    assert (ch.s_r, ch.s_s, ch.s) == (1.0, 1.0, 2.0)


@pytest.mark.parametrize("r", [1, 3, 6])
def test_square_image_square_grid_shape_score_is_one(r):
    assert score_grid(ImageShape(777, 777), Grid(r, r), CFG).s_s == 1.0


def test_literal_shape_score_is_grid_independent():
    v = ImageShape(1000, 700)
    vals = {score_grid(v, g, CFG).s_s for g in grid_set(CFG.l, CFG.n)}
    assert len(vals) == 1
    assert vals.pop() == pytest.approx(0.7, abs=1e-15)


@pytest.mark.parametrize("shape_box", ["literal", "aspect"])
def test_full_scoring_1000x700_against_rational_oracle(shape_box):
    cfg = CropConfig(shape_box=shape_box)
    for g in grid_set(cfg.l, cfg.n):
        ch = score_grid(ImageShape(1000, 700), g, cfg)
        s_r, s_s = exact_scores(1000, 700, g.r, g.c, cfg)
        assert ch.s_r == pytest.approx(float(s_r), rel=1e-15)
        assert ch.s_s == pytest.approx(float(s_s), rel=1e-15)
        assert ch.s == ch.s_r + ch.s_s
    assert select_grid(ImageShape(1000, 700), cfg).grid == Grid(*oracle_select(1000, 700, cfg))


@pytest.mark.parametrize("hw,grid", [((224, 224), (1, 1)), ((448, 224), (2, 1)), ((1120, 896), (5, 4))])
def test_select_grid_examples(hw, grid):
    assert oracle_select(*hw, CFG) == grid
    assert select_grid(ImageShape(*hw), CFG).grid == Grid(*grid)


def test_grid_set_size_and_constraints():
    grids = grid_set(12, 36)
    assert all(1 <= g.r <= 12 and 1 <= g.c <= 12 and g.area <= 36 for g in grids)
    assert len(grids) == sum(min(12, 36 // r) for r in range(1, 13))


@pytest.mark.parametrize("shape_box", ["literal", "aspect"])
def test_select_grid_matches_oracle_on_random_shapes(shape_box):
    cfg = CropConfig(shape_box=shape_box)
    rng = np.random.default_rng(7)
    for h, w in rng.integers(32, 4097, size=(150, 2)):
        assert select_grid(ImageShape(int(h), int(w)), cfg).grid == Grid(*oracle_select(int(h), int(w), cfg))


def test_exact_grid_shapes_select_their_grid():
    for g in grid_set(CFG.l, CFG.n):
        assert select_grid(ImageShape(g.r * CFG.H, g.c * CFG.W), CFG).grid == g


def test_config_validation():
    with pytest.raises(ValueError):
        CropConfig(H=225)
    with pytest.raises(ValueError):
        CropConfig(k=0)
    with pytest.raises(ValueError):
        CropConfig(shape_box="diagonal")
    with pytest.raises(ValueError):
        ImageShape(0, 4)


def test_resize_identity_and_degenerate():
    img = np.random.default_rng(0).random((224, 224, 3), dtype=np.float32)
    assert np.array_equal(resize_bilinear(img, 224, 224), img)
    with pytest.raises(ValueError):
        resize_bilinear(img, 0, 10)


def test_resize_half_pixel_centres():
    img = np.array([[0.0, 1.0]], np.float32)[..., None]
    out = resize_bilinear(img, 1, 4)[0, :, 0]
    # sample points -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])


def test_crop_single_tile_identity():
    img = np.random.default_rng(1).random((224, 224, 3), dtype=np.float32)
    tiles = crop(img, select_grid(ImageShape(224, 224), CFG), CFG)
    assert len(tiles) == 1 and np.array_equal(tiles[0].pixels, img)


def test_crop_partition_reassembles_exactly():
    img = np.random.default_rng(2).random((448, 448, 3), dtype=np.float32)
    tiles = crop(img, Grid(2, 2), CFG)
    assert [(t.row, t.col) for t in tiles] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert np.array_equal(reassemble(tiles, Grid(2, 2)), img)


def test_crop_count_equals_selected_area():
    img = np.random.default_rng(3).random((1000, 700, 3), dtype=np.float32)
    choice = select_grid(ImageShape(1000, 700), CFG)
    assert choice.grid == Grid(*oracle_select(1000, 700, CFG))
    tiles = crop(img, choice, CFG)
    assert len(tiles) == choice.grid.area
    assert all(t.pixels.shape == (224, 224, 3) for t in tiles)
    resized = resize_bilinear(img, choice.grid.r * 224, choice.grid.c * 224)
    assert np.array_equal(reassemble(tiles, choice.grid), resized)
