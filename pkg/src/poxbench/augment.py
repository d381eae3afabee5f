"""Training-only image augmentation: horizontal flip and Gaussian blur.

Vertical flips are off by default. Lesion appearance depends on body
orientation, so an upside-down copy is not a plausible new observation.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import _env
from .dataset import DatasetManifest, ImageRecord, file_checksum, read_rgb
from .errors import ConfigurationError


def default_sigma(kernel: int) -> float:
    """Usual kernel-size-to-sigma rule when only the kernel size is given."""
    return 0.3 * ((kernel - 1) * 0.5 - 1) + 0.8


@dataclass(frozen=True)
class AugmentPolicy:
    copies_per_image: int = 6
    hflip_prob: float = 0.5
    blur_prob: float = 0.5
    blur_kernel: int = 5
    blur_sigma: float | None = None
    allow_vflip: bool = False
    vflip_prob: float = 0.5

    def __post_init__(self):
        if self.copies_per_image < 0:
            raise ConfigurationError("copies_per_image must be >= 0")
        for name in ("hflip_prob", "blur_prob", "vflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
        if self.blur_kernel < 3 or self.blur_kernel % 2 == 0:
            raise ConfigurationError(f"blur_kernel must be odd and >= 3, got {self.blur_kernel}")
        if self.blur_sigma is None:
            object.__setattr__(self, "blur_sigma", default_sigma(self.blur_kernel))
        if self.blur_sigma <= 0:
            raise ConfigurationError("blur_sigma must be positive")


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def vertical_flip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[::-1])


def gaussian_kernel(kernel: int, sigma: float) -> np.ndarray:
    if kernel % 2 == 0 or kernel < 1:
        raise ConfigurationError(f"Gaussian kernel size must be odd, got {kernel}")
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    r = kernel // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _correlate_axis(a: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    r = len(w) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # half-sample mirror (d c b a | a b c d | d c b a) keeps the total mass
    padded = np.pad(a, pad, mode="symmetric")
    n = a.shape[axis]
    out = np.zeros(a.shape, dtype=np.float64)
    for j, wj in enumerate(w):
        out += wj * np.take(padded, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(image: np.ndarray, kernel: int, sigma: float | None = None) -> np.ndarray:
    """Separable Gaussian blur of each channel with mirrored edges.

    uint8 input comes back rounded and clipped to uint8; float input comes
    back as float64.
    """
    sigma = default_sigma(kernel) if sigma is None else sigma
    w = gaussian_kernel(kernel, sigma)
    x = np.asarray(image, dtype=np.float64)
    out = _correlate_axis(_correlate_axis(x, w, 0), w, 1)
    if np.asarray(image).dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def augment_image(pixels: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply one independently sampled combination of the enabled transforms."""
    out = pixels
    if rng.random() < policy.hflip_prob:
        out = horizontal_flip(out)
    if policy.allow_vflip and rng.random() < policy.vflip_prob:
        out = vertical_flip(out)
    if rng.random() < policy.blur_prob:
        out = gaussian_blur(out, policy.blur_kernel, policy.blur_sigma)
    return out


def copy_rng(seed: int, source: int, copy: int) -> np.random.Generator:
    return np.random.default_rng([seed, source, copy])


def derived_path(cache_dir: Path | str, seed: int, source: int, copy: int) -> Path:
    return Path(cache_dir) / "aug" / str(seed) / f"{source}_{copy}.png"


def _write_png(pixels: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.stem, suffix=".tmp.png")
    os.close(fd)
    try:
        Image.fromarray(pixels, mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def augment_training_set(
    manifest: DatasetManifest,
    indices: Sequence[int],
    policy: AugmentPolicy,
    seed: int,
    cache_dir: Path | str,
) -> DatasetManifest:
    """Originals at ``indices`` followed by ``copies_per_image`` derived images each.

    Derived images are written as PNG under ``<cache>/aug/<seed>/`` and
    their records point back at the manifest index of their source. Each
    (source, copy) pair draws from its own RNG stream, so the result does
    not depend on scheduling or on which other images are augmented.
    """
    indices = [int(i) for i in indices]
    originals = [manifest.records[i] for i in indices]
    jobs = [(src, c) for src in indices for c in range(policy.copies_per_image)]

    def make(job: tuple[int, int]) -> ImageRecord:
        src, c = job
        rec = manifest.records[src]
        pixels = augment_image(read_rgb(rec.path), policy, copy_rng(seed, src, c))
        path = derived_path(cache_dir, seed, src, c)
        _write_png(pixels, path)
        h, w = pixels.shape[:2]
        return ImageRecord(path, rec.label, w, h, file_checksum(path), source=src, copy=c)

    workers = _env.worker_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            derived = list(pool.map(make, jobs))
    else:
        derived = [make(j) for j in jobs]
    return DatasetManifest(tuple(originals) + tuple(derived), manifest.classes)
