"""Generated scenes for tests, demos and the end-to-end checks.

Each scene has a background class and one to three foreground objects
(ellipses and rectangles) rendered with class colours, an oriented texture
and noise. Scribbles are short strokes drawn inside eroded regions. The
"global" map stands in for a network's softmax: the one-hot ground truth is
blurred (soft, misplaced boundaries), mixed with a little smooth noise, and
given a blob of a class that is not in the image.
"""
from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import ClassSet, LabelMap, ProbabilityMap, RgbImage, ScribbleSet, validate_probability_map


@dataclass(frozen=True)
class Scene:
    image: RgbImage
    ground_truth: LabelMap
    scribbles: ScribbleSet
    global_probs: ProbabilityMap


def _draw_shape(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
    if rng.random() < 0.6:
        ry, rx = rng.uniform(0.15, 0.35) * h, rng.uniform(0.15, 0.35) * w
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    hh, hw = rng.uniform(0.12, 0.3) * h, rng.uniform(0.12, 0.3) * w
    return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)


def _render(rng, gt, num_classes, noise):
    h, w = gt.shape
    base = rng.uniform(0.15, 0.85, size=(num_classes, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    img = base[gt].copy()
    for c in np.unique(gt):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.3, 0.9)
        amp = rng.uniform(0.03, 0.08)
        tex = amp * np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
        img[gt == c] += tex[gt == c][:, None]
    img += rng.normal(0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _strokes(rng, gt, num_classes, per_region, length):
    h, w = gt.shape
    entries = {}
    for c in np.unique(gt):
        region = ndimage.binary_erosion(gt == c, iterations=2)
        if not region.any():
            region = gt == c
        comps, n = ndimage.label(region)
        for k in range(1, n + 1):
            pts = np.argwhere(comps == k)
            for _ in range(per_region):
                y, x = pts[rng.integers(len(pts))]
                angle = rng.uniform(0, 2 * np.pi)
                for _ in range(length):
                    if 0 <= y < h and 0 <= x < w and comps[y, x] == k:
                        entries[int(y) * w + int(x)] = int(c)
                    angle += rng.normal(0, 0.3)
                    y = int(round(y + np.sin(angle)))
                    x = int(round(x + np.cos(angle)))
    return entries


def _global_map(rng, gt, num_classes, blur, confidence, foreign_strength):
    h, w = gt.shape
    onehot = np.eye(num_classes)[gt]
    soft = ndimage.gaussian_filter(onehot, sigma=(blur, blur, 0), mode="nearest")
    noise = ndimage.gaussian_filter(rng.random((h, w, num_classes)), sigma=(2, 2, 0))
    noise /= noise.sum(axis=-1, keepdims=True)
    probs = confidence * soft + (1 - confidence) * noise
    absent = [c for c in range(num_classes) if c not in set(np.unique(gt).tolist())]
    if absent and foreign_strength > 0:
        c = int(rng.choice(absent))
        blob = ndimage.gaussian_filter(_draw_shape(rng, h, w).astype(float) * 0.6, sigma=2)
        probs[..., c] += foreign_strength * blob
    return probs / probs.sum(axis=-1, keepdims=True)


def make_scene(
    rng: np.random.Generator,
    size: int = 40,
    num_classes: int = 5,
    noise: float = 0.1,
    blur: float = 2.5,
    confidence: float = 0.8,
    foreign_strength: float = 1.0,
    strokes_per_region: int = 1,
    stroke_length: int = 12,
) -> Scene:
    h = w = size
    gt = np.zeros((h, w), dtype=np.int64)
    n_obj = int(rng.integers(1, 4))
    for c in rng.choice(np.arange(1, num_classes), size=n_obj, replace=False):
        gt[_draw_shape(rng, h, w)] = c
    classes = ClassSet(num_classes)
    img = RgbImage(_render(rng, gt, num_classes, noise))
    entries = _strokes(rng, gt, num_classes, strokes_per_region, stroke_length)
    wa = ScribbleSet.from_entries(img.grid, classes, sorted(entries.items()))
    probs = _global_map(rng, gt, num_classes, blur, confidence, foreign_strength)
    gp = validate_probability_map(ProbabilityMap(probs, classes, source="global"))
    return Scene(img, LabelMap(gt.astype(np.uint8), classes), wa, gp)


def make_corpus(seed: int, n_images: int = 20, **kwargs) -> list[Scene]:
    return [make_scene(np.random.default_rng([seed, i]), **kwargs) for i in range(n_images)]


def swap_labels(wa: ScribbleSet, rng: np.random.Generator, fraction: float) -> ScribbleSet:
    """Replace a fraction of scribble classes by a different random class."""
    labels = wa.labels.copy()
    C = wa.classes.num_classes
    hit = rng.random(labels.size) < fraction
    labels[hit] = (labels[hit] + rng.integers(1, C, size=int(hit.sum()))) % C
    return ScribbleSet(wa.grid, wa.classes, wa.pixels, labels)


def drop_class(wa: ScribbleSet, cls: int) -> ScribbleSet:
    keep = wa.labels != cls
    return ScribbleSet(wa.grid, wa.classes, wa.pixels[keep], wa.labels[keep])


def write_corpus(out_dir, scenes: list[Scene], with_global: bool = True, prefix: str = "img") -> Path:
    """Write images, scribbles, ground truth, global maps and a manifest.tsv."""
    from .global_pam_io import save_probability_map
    from .io_utils import save_image, save_labelmap, save_scribbles

    out = Path(out_dir)
    for sub in ("images", "scribbles", "gt", "global"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sc in enumerate(scenes):
        name = f"{prefix}{i:04d}"
        save_image(out / "images" / f"{name}.png", sc.image)
        save_scribbles(out / "scribbles" / f"{name}.png", sc.scribbles)
        save_labelmap(out / "gt" / f"{name}.png", sc.ground_truth)
        row = [name, f"images/{name}.png", f"scribbles/{name}.png", f"gt/{name}.png"]
        if with_global:
            save_probability_map(out / "global" / f"{name}.pam", sc.global_probs)
            row.append(f"global/{name}.pam")
        lines.append("\t".join(row))
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write a generated scribble corpus.")
    parser.add_argument("out_dir")
    parser.add_argument("--images", type=int, default=20)
    parser.add_argument("--size", type=int, default=40)
    parser.add_argument("--classes", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    scenes = make_corpus(args.seed, args.images, size=args.size, num_classes=args.classes)
    print(write_corpus(args.out_dir, scenes))


if __name__ == "__main__":
    main()
