import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scribble_pfa.core import (
    UNLABELED,
    ClassSet,
    LabelMap,
    PixelGrid,
    ProbabilityMap,
    Rejected,
    RgbImage,
    ScribbleSet,
    SoftMask,
    curate_scribbles,
    is_on_simplex,
    labelmap_to_scribbles,
    scribbles_to_labelmap,
    validate_probability_map,
)
from scribble_pfa.errors import (
    DegeneratePixel,
    GridMismatch,
    InvalidAnnotation,
    NonFiniteValue,
    ShapeMismatch,
    UnlabeledPixel,
)

CS3 = ClassSet(3)


def test_pixel_grid_index_roundtrip():
    g = PixelGrid(3, 5)
    assert g.size == 15
    assert g.index(2, 4) == 14
    r, c = g.coords(np.array([0, 7, 14]))
    assert r.tolist() == [0, 1, 2] and c.tolist() == [0, 2, 4]


def test_pixel_grid_rejects_empty():
    with pytest.raises(ValueError):
        PixelGrid(0, 3)


def test_grid_check_same():
    with pytest.raises(GridMismatch):
        PixelGrid(2, 2).check_same(PixelGrid(2, 3))


@pytest.mark.parametrize("n", [0, 1, 256])
def test_class_set_bounds(n):
    with pytest.raises(ValueError):
        ClassSet(n)


def test_class_set_names_length():
    assert ClassSet(2, ("bg", "cat")).names == ("bg", "cat")
    with pytest.raises(ValueError):
        ClassSet(3, ("a", "b"))


def test_rgb_image_validation():
    with pytest.raises(ShapeMismatch):
        RgbImage(np.zeros((2, 2)))
    with pytest.raises(NonFiniteValue):
        RgbImage(np.full((1, 1, 3), np.nan))
    with pytest.raises(ValueError):
        RgbImage(np.full((1, 1, 3), 1.5))
    img = RgbImage.from_uint8(np.full((2, 2, 3), 255, dtype=np.uint8))
    assert img.pixels.max() == 1.0
    assert not img.pixels.flags.writeable


def test_labelmap_validation_and_equality():
    lm = LabelMap(np.array([[0, 2], [UNLABELED, 1]]), CS3)
    assert not lm.is_full
    assert lm.present_classes() == frozenset({0, 1, 2})
    assert lm == LabelMap(lm.labels.copy(), CS3)
    with pytest.raises(InvalidAnnotation):
        LabelMap(np.array([[3]]), CS3)
    with pytest.raises(InvalidAnnotation):
        LabelMap(np.array([[-1]]), CS3)
    with pytest.raises(ShapeMismatch):
        LabelMap(np.zeros(3), CS3)


def test_scribbles_sorted_and_duplicates():
    g = PixelGrid(2, 2)
    wa = ScribbleSet(g, CS3, [3, 1], [0, 1])
    assert wa.entries == [(1, 1), (3, 0)]
    with pytest.raises(InvalidAnnotation):
        ScribbleSet(g, CS3, [1, 1], [0, 0])
    with pytest.raises(InvalidAnnotation):
        ScribbleSet(g, CS3, [4], [0])
    with pytest.raises(InvalidAnnotation):
        ScribbleSet(g, CS3, [0], [3])


def test_from_entries_collapses_identical_and_rejects_conflicts():
    g = PixelGrid(2, 2)
    wa = ScribbleSet.from_entries(g, CS3, [(1, 2), (1, 2), (0, 0)])
    assert len(wa) == 2
    with pytest.raises(InvalidAnnotation):
        ScribbleSet.from_entries(g, CS3, [(1, 2), (1, 0)])


def test_scribbles_to_labelmap_examples():
    g = PixelGrid(2, 2)
    empty = scribbles_to_labelmap(ScribbleSet(g, CS3, [], []))
    assert (empty.labels == UNLABELED).all()
    lm = scribbles_to_labelmap(ScribbleSet(g, CS3, [1, 2], [1, 0]))
    assert lm.labels.ravel().tolist() == [UNLABELED, 1, 0, UNLABELED]


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.uint8, (4, 5), elements=st.sampled_from([0, 1, 2, UNLABELED])))
def test_labelmap_scribble_roundtrip(arr):
    lm = LabelMap(arr, CS3)
    assert scribbles_to_labelmap(labelmap_to_scribbles(lm)) == lm


def test_validate_probability_map_normalizes():
    p = validate_probability_map(ProbabilityMap(np.array([[[2.0, 2.0], [1.0, 3.0]]]), ClassSet(2)))
    np.testing.assert_allclose(p.probs, [[[0.5, 0.5], [0.25, 0.75]]])
    ok = ProbabilityMap(np.array([[[0.25, 0.75]]]), ClassSet(2), "global")
    assert validate_probability_map(ok) is ok


def test_validate_probability_map_errors():
    cs = ClassSet(2)
    with pytest.raises(DegeneratePixel):
        validate_probability_map(ProbabilityMap(np.zeros((1, 1, 2)), cs))
    with pytest.raises(NonFiniteValue):
        validate_probability_map(ProbabilityMap(np.array([[[np.inf, 1.0]]]), cs))
    with pytest.raises(ValueError):
        validate_probability_map(ProbabilityMap(np.array([[[-0.1, 1.1]]]), cs))
    with pytest.raises(ShapeMismatch):
        ProbabilityMap(np.ones((1, 1, 3)), cs)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 4, 4), elements=st.floats(1e-6, 1e6)))
def test_validate_lands_on_simplex(arr):
    p = validate_probability_map(ProbabilityMap(arr, ClassSet(4)))
    assert is_on_simplex(p.probs)


def test_soft_mask_rejects_nan():
    with pytest.raises(NonFiniteValue):
        SoftMask(np.full((1, 1, 2), np.nan), ClassSet(2))


def test_curate_relabels_and_rejects():
    g = PixelGrid(2, 2)
    gt = LabelMap(np.array([[0, 0], [1, 1]]), ClassSet(2))
    wa = ScribbleSet(g, ClassSet(2), [0, 3], [1, 0])  # both wrong
    cur = curate_scribbles(wa, gt)
    assert cur.labels.tolist() == [0, 1] and cur.pixels.tolist() == [0, 3]
    rej = curate_scribbles(ScribbleSet(g, ClassSet(2), [0], [0]), gt)
    assert rej == Rejected(frozenset({1}))


def test_curate_unlabeled_under_scribble():
    g = PixelGrid(1, 2)
    gt = LabelMap(np.array([[0, UNLABELED]]), ClassSet(2))
    with pytest.raises(UnlabeledPixel):
        curate_scribbles(ScribbleSet(g, ClassSet(2), [1], [0]), gt)
    # void pixels elsewhere do not count as a class
    assert isinstance(curate_scribbles(ScribbleSet(g, ClassSet(2), [0], [1]), gt), ScribbleSet)


def test_curate_idempotent():
    rng = np.random.default_rng(1)
    gt = LabelMap(rng.integers(0, 3, size=(6, 6)), CS3)
    wa = ScribbleSet(gt.grid, CS3, np.arange(36), rng.integers(0, 3, size=36))
    once = curate_scribbles(wa, gt)
    assert curate_scribbles(once, gt) == once
