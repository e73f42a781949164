import numpy as np
import pytest

from sramage.bitcore import InstabilityMap, P1Map
from sramage.errors import InvalidArgumentError
from sramage.features import blockwise_p1, p1_address_regression
from sramage.render import (SENTINEL_SHADE, bitmap_pixels, grid_shape, parse_xy_table, read_pgm, render_bitmap,
                            render_xy, xy_table)


def test_grid_geometry():
    assert grid_shape(16) == (4, 4)
    assert grid_shape(17) == (4, 5)
    rows, cols = grid_shape(524288)
    assert (cols, rows) == (725, 724)
    assert rows * cols - 524288 == 612


def test_constant_map_uniform_image(tmp_path):
    path = render_bitmap(P1Map(np.full(64, 3), 4), tmp_path / "p1.pgm")
    img = read_pgm(path)
    assert img.shape == (8, 8) and (img == round(0.75 * 255)).all()


def test_extremes_and_sentinel(tmp_path):
    inst = InstabilityMap(np.array([0.0, 0.5, 0.25, 0.5, 0.0]))
    img = read_pgm(render_bitmap(inst, tmp_path / "i.pgm"))
    assert img.shape == (2, 3)
    assert img.ravel().tolist() == [0, 255, 128, 255, 0, SENTINEL_SHADE]


def test_row_ranked_rows_non_decreasing(rng):
    v = rng.random(1000)
    img = bitmap_pixels(v, 1.0, "row-ranked")
    rows, cols = grid_shape(1000)
    full = 1000 // cols
    assert (np.diff(img[:full].astype(int), axis=1) >= 0).all()
    tail = 1000 - full * cols
    assert (np.diff(img[full, :tail].astype(int)) >= 0).all()
    assert sorted(img.ravel()[:1000].tolist()) == sorted(bitmap_pixels(v, 1.0).ravel()[:1000].tolist())
    with pytest.raises(InvalidArgumentError):
        bitmap_pixels(v, 1.0, "diagonal")


def test_pgm_round_trip_whitespace_pixels(tmp_path):
    # pixel bytes that look like whitespace must survive the header parse
    pix = np.array([[9, 10, 32], [13, 0, 255]], dtype=np.uint8)
    from sramage.render import write_pgm
    assert np.array_equal(read_pgm(write_pgm(tmp_path / "w.pgm", pix)), pix)


def test_empty_series_header_only():
    assert xy_table([], {"y": []}) == "x,y\n"


def test_block_means_table_with_fit(rng, tmp_path):
    p1 = rng.random(64 * 8 * 16)
    blocks = blockwise_p1(p1, 16)
    b0, b1, _ = p1_address_regression(p1, 16)
    csv_path, svg_path = render_xy(tmp_path / "blocks", np.arange(64), {"p1": blocks}, "block", (b0, b1))
    name, x, cols, fit = parse_xy_table(csv_path.read_text())
    assert name == "block" and x.size == 64
    assert np.array_equal(cols["p1"], blocks)
    assert fit == (b0, b1)
    assert svg_path.read_text().startswith("<svg")


def test_two_column_spectrum_round_trip():
    a, b = np.array([0.0, 1.5, 1 / 3]), np.array([2e-300, 7.0, 1e10])
    name, x, cols, fit = parse_xy_table(xy_table(range(3), {"young": a, "old": b}, "bin"))
    assert list(cols) == ["young", "old"] and fit is None
    assert np.array_equal(cols["young"], a) and np.array_equal(cols["old"], b)


def test_ragged_columns_rejected():
    with pytest.raises(InvalidArgumentError):
        xy_table([1, 2], {"y": [1]})
