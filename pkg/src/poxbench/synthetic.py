"""Desk-scale stand-in for the skin-image corpus.

Each class gets its own base colour and a faint concentric pattern; every
image adds a smooth per-image texture (the "identity" of the photo) and a
little pixel noise. ``spread`` controls how far images of one class wander
from the class prototype, ``label_noise`` relabels a fraction of images to
a uniformly chosen wrong class while keeping their pixels.
"""

from __future__ import annotations

import colorsys
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .dataset import MANIFEST_NAME, DatasetManifest, load_manifest

# per-class image counts of the public MSID skin-lesion set (770 images)
MSID_CLASS_COUNTS = {"normal": 293, "measles": 91, "chickenpox": 107, "monkeypox": 279}


def class_prototype(class_id: int, n_classes: int, size: int) -> np.ndarray:
    hue = class_id / n_classes
    rgb = np.array(colorsys.hsv_to_rgb(hue, 0.55, 0.75))
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    radius = np.hypot(xx, yy)
    rings = 0.08 * np.cos(2 * np.pi * (class_id + 2) * radius)
    return np.clip(rgb[None, None, :] + rings[..., None], 0.0, 1.0)


def _smooth_field(rng: np.random.Generator, size: int, grid: int = 4) -> np.ndarray:
    coarse = rng.standard_normal((grid, grid, 3))
    # PIL float images are single-band, so resize channel by channel
    out = np.empty((size, size, 3))
    for ch in range(3):
        band = Image.fromarray(coarse[:, :, ch].astype(np.float32), mode="F")
        out[:, :, ch] = np.asarray(band.resize((size, size), Image.BILINEAR))
    return out


def render_image(class_id: int, n_classes: int, size: int, rng: np.random.Generator, spread: float) -> np.ndarray:
    base = class_prototype(class_id, n_classes, size)
    texture = spread * _smooth_field(rng, size)
    noise = 0.02 * rng.standard_normal((size, size, 3))
    return np.clip(np.rint((base + texture + noise) * 255.0), 0, 255).astype(np.uint8)


def generate_corpus(
    root: Path | str,
    counts: Mapping[str, int] | Sequence[int],
    *,
    size: int = 64,
    seed: int = 0,
    spread: float = 0.05,
    label_noise: float = 0.0,
) -> DatasetManifest:
    """Write a synthetic class-per-folder PNG corpus plus ``manifest.tsv``.

    ``counts`` maps class name to number of images; a plain sequence names
    the classes ``class0, class1, ...``.
    """
    root = Path(root)
    if not isinstance(counts, Mapping):
        counts = {f"class{i}": int(n) for i, n in enumerate(counts)}
    names = list(counts)
    n_classes = len(names)
    rng = np.random.default_rng(seed)
    lines = ["# classes: " + ", ".join(names)]
    for cid, name in enumerate(names):
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(counts[name]):
            pixels = render_image(cid, n_classes, size, rng, spread)
            label = name
            if label_noise > 0 and n_classes > 1 and rng.random() < label_noise:
                other = [n for n in names if n != name]
                label = other[rng.integers(len(other))]
            fname = f"{name}_{i:04d}.png"
            Image.fromarray(pixels, mode="RGB").save(folder / fname)
            lines.append(f"{name}/{fname}\t{label}")
    (root / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return load_manifest(root)
