"""Seeded synthetic binary-segmentation data: noisy bright rings on darker
backgrounds, with exact ring masks.  Stands in for a real segmentation
corpus at desk scale; generation is a pure function of the seed."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SPDD"
VERSION = 1

TRAIN_FRAC = 0.6
VAL_FRAC = 0.2  # test gets the remainder, 20% by default


class DataError(Exception):
    pass


@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


@dataclass
class SegmentationSet:
    images: np.ndarray  # (count, H, W) float32 in [0, 1]
    masks: np.ndarray   # (count, H, W) uint8 in {0, 1}
    split: Split

    @property
    def count(self):
        return self.images.shape[0]

    @property
    def size(self):
        return self.images.shape[1]


def default_split(count: int) -> Split:
    """Contiguous 60/20/20 split; samples are i.i.d. so no shuffle is needed,
    and a count-only rule lets a saved file reproduce its splits exactly."""
    n_train = int(count * TRAIN_FRAC)
    n_val = int(count * VAL_FRAC)
    return Split(
        train=tuple(range(0, n_train)),
        val=tuple(range(n_train, n_train + n_val)),
        test=tuple(range(n_train + n_val, count)),
    )


def generate(seed: int, count: int, size: int = 32,
             noise_sigma_range=(0.05, 0.2), gradient_max=0.15) -> SegmentationSet:
    """Generate ``count`` ring samples of ``size`` x ``size`` pixels.

    Each sample is a bright ring (annulus) with randomized center, radii and
    intensity over a darker background, plus a linear brightness gradient and
    additive Gaussian noise with sigma drawn from ``noise_sigma_range``.  The
    mask is the exact annulus.  Setting the noise range to (0, 0) and
    ``gradient_max`` to 0 yields images that threshold back to their masks.
    """
    if count < 1:
        raise DataError("count must be positive")
    if size < 16:
        raise DataError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((count, size, size), dtype=np.float32)
    masks = np.empty((count, size, size), dtype=np.uint8)
    for i in range(count):
        r_out = rng.uniform(0.22, 0.40) * size
        r_in = rng.uniform(0.35, 0.65) * r_out
        cy = rng.uniform(r_out + 1.0, size - 1.0 - r_out)
        cx = rng.uniform(r_out + 1.0, size - 1.0 - r_out)
        background = rng.uniform(0.05, 0.35)
        ring = rng.uniform(0.6, 0.95)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        grad_amp = rng.uniform(0.0, gradient_max) if gradient_max > 0 else 0.0
        sigma = rng.uniform(*noise_sigma_range)

        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mask = (d2 >= r_in * r_in) & (d2 <= r_out * r_out)
        img = np.full((size, size), background, dtype=np.float64)
        img[mask] = ring
        if grad_amp > 0:
            ramp = (np.cos(theta) * xx + np.sin(theta) * yy) / size
            img += grad_amp * (ramp - ramp.mean())
        noise = rng.standard_normal((size, size))
        if sigma > 0:
            img += sigma * noise
        images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
        masks[i] = mask.astype(np.uint8)
    return SegmentationSet(images=images, masks=masks, split=default_split(count))


def set_bytes(data: SegmentationSet) -> bytes:
    count, h, w = data.images.shape
    header = MAGIC + struct.pack("<BIII", VERSION, count, h, w)
    return header + data.images.astype("<f4", copy=False).tobytes() + data.masks.tobytes()


def save_set(path, data: SegmentationSet) -> None:
    from .fileio import write_bytes_atomic

    write_bytes_atomic(path, set_bytes(data))


def load_set(path) -> SegmentationSet:
    """Load a dataset file; bit-exact inverse of save_set."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise DataError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 17:
        raise DataError("truncated header")
    version, count, h, w = struct.unpack("<BIII", raw[4:17])
    if version != VERSION:
        raise DataError(f"unsupported version {version}")
    expected = 17 + count * h * w * 4 + count * h * w
    if len(raw) != expected:
        raise DataError(f"truncated payload: expected {expected} bytes, got {len(raw)}")
    img_bytes = count * h * w * 4
    images = np.frombuffer(raw[17 : 17 + img_bytes], dtype="<f4").reshape(count, h, w).copy()
    masks = np.frombuffer(raw[17 + img_bytes :], dtype=np.uint8).reshape(count, h, w).copy()
    if masks.max(initial=0) > 1:
        raise DataError("mask values must be 0 or 1")
    return SegmentationSet(images=images, masks=masks, split=default_split(count))
