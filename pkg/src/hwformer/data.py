"""Image folders, the deterministic validation split and synthetic textures."""

from __future__ import annotations

import logging
import math
import os
import zlib
from typing import List, Tuple

import numpy as np

from .errors import DataError
from .imageio import ImageBuffer, read_image, write_image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".pgm", ".ppm", ".pnm")


def name_hash(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def list_images(directory) -> List[str]:
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise DataError(f"{directory}: not a directory")
    return sorted(f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTENSIONS))


def load_dataset(directory, skip_unreadable: bool = False) -> Tuple[List[Tuple[str, ImageBuffer]], List[str]]:
    """Read every PGM/PPM in ``directory`` in name order.

    Returns the ``(name, image)`` pairs and the names that failed to
    decode; failures raise unless ``skip_unreadable`` is set.
    """
    images, skipped = [], []
    for name in list_images(directory):
        try:
            images.append((name, read_image(os.path.join(os.fspath(directory), name))))
        except DataError as exc:
            if not skip_unreadable:
                raise
            log.warning("skipping %s", exc)
            skipped.append(name)
    return images, skipped


def validation_split(names, fraction: float = 0.05):
    """Deterministically hold out ``ceil(fraction * n)`` names, chosen by CRC32.

    Returns ``(train_names, val_names)``; both keep sorted order. With a
    single image nothing is held out.
    """
    names = sorted(names)
    if len(names) < 2 or fraction <= 0:
        return names, []
    k = min(len(names) - 1, max(1, math.ceil(fraction * len(names))))
    held = set(sorted(names, key=lambda n: (name_hash(n), n))[:k])
    return [n for n in names if n not in held], [n for n in names if n in held]


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    tilt = rng.uniform(0, 2 * np.pi)
    img = rng.uniform(0.2, 0.8) + rng.uniform(-0.3, 0.3) * (xx * np.cos(tilt) + yy * np.sin(tilt))
    for _ in range(rng.integers(1, 3)):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    for _ in range(rng.integers(1, 4)):
        level = rng.uniform(-0.35, 0.35)
        if rng.random() < 0.5:
            y0, x0 = rng.uniform(0, 0.8, size=2)
            h, w = rng.uniform(0.15, 0.6, size=2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rng.uniform(0.1, 0.35) ** 2
        img = np.where(mask, img + level, img)
    return np.clip(img, 0.0, 1.0)


def synthetic_textures(count: int, size: int = 32, seed: int = 0, channels: int = 1) -> List[ImageBuffer]:
    """Piecewise-smooth test images: ramps, gratings, rectangles and discs."""
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        planes = [_texture(rng, size) for _ in range(channels)]
        out.append(ImageBuffer.from_unit(np.stack(planes, axis=-1)))
    return out


def write_dataset(images, directory, prefix: str = "tex") -> List[str]:
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}{i:04d}" + (".pgm" if img.channels == 1 else ".ppm")
        write_image(img, os.path.join(directory, name))
        names.append(name)
    return names
