"""Domain types shared across the toolkit, plus annotation curation.

All containers are frozen dataclasses wrapping read-only numpy arrays, so they
can be handed to worker processes without defensive copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DegeneratePixel,
    GridMismatch,
    InvalidAnnotation,
    NonFiniteValue,
    ShapeMismatch,
    UnlabeledPixel,
)

UNLABELED = 255
SIMPLEX_ATOL = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PixelGrid:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ShapeMismatch(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width

    def index(self, row, col):
        """Row-major pixel index of (row, col); works elementwise on arrays."""
        return np.asarray(row) * self.width + np.asarray(col)

    def coords(self, index):
        return np.divmod(np.asarray(index), self.width)

    def check_same(self, other: "PixelGrid", what: str = "grid"):
        if (self.height, self.width) != (other.height, other.width):
            raise GridMismatch(
                f"{what}: expected {self.height}x{self.width}, got {other.height}x{other.width}"
            )


@dataclass(frozen=True)
class ClassSet:
    num_classes: int
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("a ClassSet needs at least 2 classes")
        if self.num_classes > UNLABELED:
            raise ValueError(f"at most {UNLABELED} classes fit beside the UNLABELED sentinel")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.num_classes:
                raise ValueError("names must have one entry per class")

    def __len__(self):
        return self.num_classes

    def contains(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return (ids >= 0) & (ids < self.num_classes)


@dataclass(frozen=True, eq=False)
class RgbImage:
    """H x W x 3 float image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeMismatch(f"expected an HxWx3 image, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise NonFiniteValue("image contains NaN or Inf")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(*self.pixels.shape[:2])

    @classmethod
    def from_uint8(cls, arr) -> "RgbImage":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense labeling; UNLABELED (255) marks pixels without a class."""

    labels: np.ndarray
    classes: ClassSet

    def __post_init__(self):
        lab = np.array(self.labels)
        if lab.ndim != 2:
            raise ShapeMismatch(f"label map must be 2-D, got shape {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() > UNLABELED):
            raise InvalidAnnotation("label values must lie in 0..255")
        lab = lab.astype(np.uint8)
        bad = (lab != UNLABELED) & (lab >= self.classes.num_classes)
        if bad.any():
            raise InvalidAnnotation(
                f"label {int(lab[bad][0])} outside 0..{self.classes.num_classes - 1}"
            )
        object.__setattr__(self, "labels", _frozen(lab))

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(*self.labels.shape)

    @property
    def is_full(self) -> bool:
        return not bool((self.labels == UNLABELED).any())

    def present_classes(self) -> frozenset:
        vals = np.unique(self.labels)
        return frozenset(int(v) for v in vals if v != UNLABELED)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (
            self.classes.num_classes == other.classes.num_classes
            and self.labels.shape == other.labels.shape
            and bool(np.array_equal(self.labels, other.labels))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScribbleSet:
    """Sparse pixel -> class annotations, stored sorted by pixel index."""

    grid: PixelGrid
    classes: ClassSet
    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.pixels, dtype=np.int64).ravel()
        lab = np.asarray(self.labels, dtype=np.int64).ravel()
        if idx.shape != lab.shape:
            raise ShapeMismatch("pixels and labels must have equal length")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.grid.size:
                raise InvalidAnnotation("scribble pixel index outside the grid")
            if not self.classes.contains(lab).all():
                raise InvalidAnnotation(
                    f"scribble class outside 0..{self.classes.num_classes - 1}"
                )
        order = np.argsort(idx, kind="stable")
        idx, lab = idx[order], lab[order]
        if idx.size > 1 and (np.diff(idx) == 0).any():
            raise InvalidAnnotation("duplicate scribble pixel")
        object.__setattr__(self, "pixels", _frozen(idx))
        object.__setattr__(self, "labels", _frozen(lab))

    @classmethod
    def from_entries(
        cls,
        grid: PixelGrid,
        classes: ClassSet,
        entries: Sequence[tuple[int, int]],
    ) -> "ScribbleSet":
        """Build from (pixel index, class) pairs.

        Repeated pixels with the same class collapse to one entry; repeated
        pixels with different classes raise InvalidAnnotation.
        """
        seen: dict[int, int] = {}
        for pix, c in entries:
            pix, c = int(pix), int(c)
            if pix in seen and seen[pix] != c:
                r, col = grid.coords(pix)
                raise InvalidAnnotation(
                    f"pixel ({int(r)}, {int(col)}) scribbled with classes {seen[pix]} and {c}"
                )
            seen[pix] = c
        pixels = np.fromiter(seen.keys(), dtype=np.int64, count=len(seen))
        labels = np.fromiter(seen.values(), dtype=np.int64, count=len(seen))
        return cls(grid, classes, pixels, labels)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.pixels.tolist(), self.labels.tolist()))

    @property
    def annotated_classes(self) -> frozenset:
        return frozenset(np.unique(self.labels).tolist())

    def __len__(self):
        return int(self.pixels.size)

    def __eq__(self, other):
        if not isinstance(other, ScribbleSet):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.classes.num_classes == other.classes.num_classes
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


def _check_prob_array(arr, classes: ClassSet, what: str) -> np.ndarray:
    a = np.array(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != classes.num_classes:
        raise ShapeMismatch(
            f"{what} must be HxWx{classes.num_classes}, got shape {a.shape}"
        )
    return a


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel class probabilities.

    ``source`` records where the map came from ("local", "global",
    "combined" or None); the Potts solver uses it to pick its default weight.
    Construct through :func:`validate_probability_map` to get the simplex
    guarantee; the bare constructor only checks the shape.
    """

    probs: np.ndarray
    classes: ClassSet
    source: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(
            self, "probs", _frozen(_check_prob_array(self.probs, self.classes, "probs"))
        )

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(*self.probs.shape[:2])

    def with_source(self, source: Optional[str]) -> "ProbabilityMap":
        return ProbabilityMap(self.probs, self.classes, source)


@dataclass(frozen=True, eq=False)
class SoftMask:
    mask: np.ndarray
    classes: ClassSet

    def __post_init__(self):
        m = _check_prob_array(self.mask, self.classes, "mask")
        if not np.all(np.isfinite(m)):
            raise NonFiniteValue("soft mask contains NaN or Inf")
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def grid(self) -> PixelGrid:
        return PixelGrid(*self.mask.shape[:2])


@dataclass(frozen=True)
class Rejected:
    """Outcome of curation for an image whose scribbles miss some GT classes."""

    missing_classes: frozenset = field(default_factory=frozenset)


def is_on_simplex(arr: np.ndarray, atol: float = SIMPLEX_ATOL) -> bool:
    arr = np.asarray(arr)
    return bool(
        np.all(np.isfinite(arr))
        and np.all(arr >= 0.0)
        and np.all(np.abs(arr.sum(axis=-1) - 1.0) <= atol)
    )


def validate_probability_map(p: ProbabilityMap) -> ProbabilityMap:
    """Renormalize every pixel vector by its sum.

    Raises NonFiniteValue for NaN/Inf entries and DegeneratePixel when a pixel
    sums to zero. Negative entries are rejected as well since they cannot be
    probabilities.
    """
    probs = p.probs
    if not np.all(np.isfinite(probs)):
        raise NonFiniteValue("probability map contains NaN or Inf")
    if (probs < 0.0).any():
        raise ValueError("probability map contains negative entries")
    sums = probs.sum(axis=-1, keepdims=True)
    zero = sums[..., 0] <= 0.0
    if zero.any():
        r, c = np.argwhere(zero)[0]
        raise DegeneratePixel(f"pixel ({r}, {c}) has an all-zero probability vector")
    if np.all(sums == 1.0):
        return p
    return ProbabilityMap(probs / sums, p.classes, p.source)


def curate_scribbles(wa: ScribbleSet, ground_truth: LabelMap) -> Union[ScribbleSet, Rejected]:
    """Relabel scribbled pixels with the ground truth class.

    Positions are kept as-is. The image is rejected when the scribbles do not
    touch every class present in the ground truth. UNLABELED ground truth
    pixels (void borders) do not count as a class, but a scribble lying on one
    cannot be relabeled and raises UnlabeledPixel.
    """
    wa.grid.check_same(ground_truth.grid, "ground truth")
    gt = ground_truth.labels.ravel()
    new_labels = gt[wa.pixels].astype(np.int64)
    if (new_labels == UNLABELED).any():
        pix = int(wa.pixels[np.argmax(new_labels == UNLABELED)])
        raise UnlabeledPixel(f"scribble at pixel {pix} falls on an unlabeled ground truth pixel")
    curated = ScribbleSet(wa.grid, wa.classes, wa.pixels, new_labels)
    missing = ground_truth.present_classes() - curated.annotated_classes
    if missing:
        return Rejected(frozenset(missing))
    return curated


def scribbles_to_labelmap(wa: ScribbleSet) -> LabelMap:
    labels = np.full(wa.grid.size, UNLABELED, dtype=np.uint8)
    labels[wa.pixels] = wa.labels
    return LabelMap(labels.reshape(wa.grid.shape), wa.classes)


def labelmap_to_scribbles(lm: LabelMap) -> ScribbleSet:
    flat = lm.labels.ravel()
    idx = np.flatnonzero(flat != UNLABELED)
    return ScribbleSet(lm.grid, lm.classes, idx, flat[idx])
