"""Reading and writing images, label maps and scribble files.

Label maps and scribbles are single-channel 8-bit PNGs (255 = UNLABELED).
Scribbles may also be plain text, one ``row col class`` triple per line;
blank lines and ``#`` comments are skipped.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .core import (
    UNLABELED,
    ClassSet,
    LabelMap,
    PixelGrid,
    RgbImage,
    ScribbleSet,
    labelmap_to_scribbles,
    scribbles_to_labelmap,
)
from .errors import FormatError, GridMismatch


def _voc_palette() -> list[int]:
    # Standard bit-interleaved colour map so PNGs look like VOC annotations.
    pal = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal.extend((r, g, b))
    pal[3 * UNLABELED: 3 * UNLABELED + 3] = [224, 224, 192]
    return pal


_PALETTE = _voc_palette()


def _check_grid(shape, grid: Optional[PixelGrid], path) -> None:
    if grid is not None and tuple(shape[:2]) != grid.shape:
        raise GridMismatch(f"{path}: size {shape[0]}x{shape[1]} does not match {grid.height}x{grid.width}")


def load_image(path, grid: Optional[PixelGrid] = None) -> RgbImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    _check_grid(arr.shape, grid, path)
    return RgbImage.from_uint8(arr)


def save_image(path, img: RgbImage) -> None:
    arr = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_labelmap(path, classes: ClassSet, grid: Optional[PixelGrid] = None) -> LabelMap:
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            raise FormatError(f"{path}: expected an indexed or grayscale PNG, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    _check_grid(arr.shape, grid, path)
    return LabelMap(arr, classes)


def save_labelmap(path, lm: LabelMap) -> None:
    im = Image.fromarray(np.ascontiguousarray(lm.labels), mode="P")
    im.putpalette(_PALETTE)
    im.save(path, format="PNG")


def load_scribbles(path, classes: ClassSet, grid: PixelGrid) -> ScribbleSet:
    """Load scribbles from an indexed PNG or a ``row col class`` text file."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return labelmap_to_scribbles(load_labelmap(path, classes, grid))
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'row col class'")
        try:
            r, c, k = (int(x) for x in parts)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if not (0 <= r < grid.height and 0 <= c < grid.width):
            raise GridMismatch(f"{path}:{lineno}: pixel ({r}, {c}) outside {grid.height}x{grid.width}")
        entries.append((r * grid.width + c, k))
    return ScribbleSet.from_entries(grid, classes, entries)


def save_scribbles(path, wa: ScribbleSet) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        save_labelmap(path, scribbles_to_labelmap(wa))
        return
    rows, cols = wa.grid.coords(wa.pixels)
    lines = [f"{r} {c} {k}" for r, c, k in zip(rows.tolist(), cols.tolist(), wa.labels.tolist())]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
