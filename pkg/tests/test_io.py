import numpy as np
import pytest

from scribble_pfa.core import UNLABELED, ClassSet, LabelMap, PixelGrid, RgbImage, ScribbleSet
from scribble_pfa.errors import FormatError, GridMismatch, InvalidAnnotation
from scribble_pfa.io_utils import load_image, load_labelmap, load_scribbles, save_image, save_labelmap, save_scribbles

CS = ClassSet(4)


def test_image_roundtrip_uint8_exact(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    img = RgbImage.from_uint8(arr)
    save_image(tmp_path / "a.png", img)
    back = load_image(tmp_path / "a.png")
    np.testing.assert_array_equal(back.pixels, img.pixels)
    with pytest.raises(GridMismatch):
        load_image(tmp_path / "a.png", PixelGrid(5, 6))


def test_labelmap_roundtrip_with_unlabeled(tmp_path):
    lm = LabelMap(np.array([[0, 3, UNLABELED], [2, 1, 0]]), CS)
    save_labelmap(tmp_path / "l.png", lm)
    assert load_labelmap(tmp_path / "l.png", CS) == lm


def test_labelmap_out_of_range_class(tmp_path):
    save_labelmap(tmp_path / "l.png", LabelMap(np.array([[3]]), CS))
    with pytest.raises(InvalidAnnotation):
        load_labelmap(tmp_path / "l.png", ClassSet(2))


@pytest.mark.parametrize("suffix", [".png", ".txt"])
def test_scribble_roundtrip(tmp_path, suffix):
    g = PixelGrid(4, 5)
    wa = ScribbleSet(g, CS, [0, 7, 19], [1, 3, 0])
    save_scribbles(tmp_path / f"s{suffix}", wa)
    assert load_scribbles(tmp_path / f"s{suffix}", CS, g) == wa


def test_scribble_text_format(tmp_path):
    f = tmp_path / "s.txt"
    f.write_text("# row col class\n0 1 2\n\n1 0 1  # trailing comment\n0 1 2\n")
    wa = load_scribbles(f, CS, PixelGrid(2, 2))
    assert wa.entries == [(1, 2), (2, 1)]


@pytest.mark.parametrize(
    "text, err",
    [("0 1\n", FormatError), ("a b c\n", FormatError), ("5 0 1\n", GridMismatch), ("0 0 1\n0 0 2\n", InvalidAnnotation)],
)
def test_scribble_text_errors(tmp_path, text, err):
    f = tmp_path / "s.txt"
    f.write_text(text)
    with pytest.raises(err):
        load_scribbles(f, CS, PixelGrid(2, 2))
